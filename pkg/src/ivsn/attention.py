"""Top-down attention maps and their composition with memory and saccade terms.

The core map comes from correlating target features over search features,
tile by tile, and concatenating the per-tile responses at their pixel
offsets.  Two optional terms reshape that map during a trial: a memory
function that suppresses visited windows (permanently or with decay), and a
saccade-size field that favors landing points at human-like distances from
the current fixation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .features import LAYER_PAIRS
from .tensor import (
    AttentionMap,
    DimensionError,
    FeatureMap,
    PixelWindow,
    normalize01,
    suppress_window,
    xcorr2d_multichannel,
)


class TileLayoutError(ValueError):
    """Tile footprints overlap: offsets do not describe a partition."""


@dataclass(frozen=True)
class ModulationConfig:
    """Which layer pair supplies the kernel (target) and the search features."""

    target_layer: int = 31
    search_layer: int = 30

    def __post_init__(self):
        if (self.target_layer, self.search_layer) not in LAYER_PAIRS:
            raise ValueError(
                f"unsupported layer pair ({self.target_layer},{self.search_layer}); "
                f"expected one of {LAYER_PAIRS}")


def compute_attention(target: FeatureMap,
                      search_tiles: list[tuple[FeatureMap, tuple[int, int]]],
                      cfg: ModulationConfig | None = None,
                      image_dims: tuple[int, int] | None = None) -> AttentionMap:
    """Full-image attention map from target features and per-tile search features.

    search_tiles holds (features, (x_offset, y_offset)) pairs in pixels.
    image_dims is (width, height); when omitted it is inferred from the tile
    footprints.  The result is normalized to [0,1] over the whole image.
    """
    if not search_tiles:
        raise ValueError("no search tiles given")
    rects = []
    for fm, (ox, oy) in search_tiles:
        if fm.channels != target.channels:
            raise DimensionError(
                f"tile at ({ox},{oy}) has {fm.channels} channels, target has {target.channels}")
        ph, pw = fm.pixel_footprint()
        rects.append((ox, oy, ox + pw, oy + ph))
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                raise TileLayoutError(f"tile footprints {a} and {b} overlap")
    if image_dims is None:
        width = max(r[2] for r in rects)
        height = max(r[3] for r in rects)
    else:
        width, height = image_dims
    canvas = np.zeros((height, width), dtype=np.float64)
    correlated = 0
    for fm, (ox, oy) in search_tiles:
        if fm.height < target.height or fm.width < target.width:
            import warnings
            warnings.warn(f"tile at ({ox},{oy}) has feature map {fm.height}x{fm.width}, "
                          f"smaller than the {target.height}x{target.width} kernel; "
                          "leaving it unattended", stacklevel=2)
            continue
        pix = xcorr2d_multichannel(fm, target).values
        ph = min(pix.shape[0], height - oy)
        pw = min(pix.shape[1], width - ox)
        if ph <= 0 or pw <= 0:
            continue
        canvas[oy:oy + ph, ox:ox + pw] = pix[:ph, :pw]
        correlated += 1
    if correlated == 0:
        raise DimensionError("no tile is large enough for the target kernel")
    return normalize01(AttentionMap(canvas))


@dataclass(frozen=True)
class MemoryFunction:
    """How strongly a visited window keeps suppressing the attention map.

    Infinite memory zeroes visited windows forever.  Finite memory lets a
    visited window recover: a location visited `lag` fixations ago retains
    the fraction revisit_probability(lag) = 1 - beta * exp(-lag / tau) of
    its value, so suppression fades and revisits become possible.
    """

    kind: str = "infinite"
    beta: float = 1.0
    tau: float = 8.0
    revisit_radius_deg: float = 3.0

    def __post_init__(self):
        if self.kind not in ("infinite", "finite"):
            raise ValueError(f"memory kind must be infinite or finite, got {self.kind!r}")
        if self.kind == "finite" and not (0.0 <= self.beta <= 1.0 and self.tau > 0):
            raise ValueError(f"finite memory needs beta in [0,1] and tau > 0")

    @classmethod
    def infinite(cls) -> "MemoryFunction":
        return cls("infinite")

    @classmethod
    def finite(cls, beta: float, tau: float, revisit_radius_deg: float = 3.0) -> "MemoryFunction":
        return cls("finite", beta, tau, revisit_radius_deg)

    def revisit_probability(self, lag: float) -> float:
        if self.kind == "infinite":
            return 0.0
        return 1.0 - self.beta * math.exp(-lag / self.tau)


def fit_memory_function(lags, probabilities, revisit_radius_deg: float = 3.0) -> MemoryFunction:
    """Least-squares fit of (beta, tau) to empirical per-lag revisit rates."""
    lags = np.asarray(lags, dtype=np.float64)
    probs = np.asarray(probabilities, dtype=np.float64)
    if lags.size < 2:
        raise ValueError("need at least two lag points to fit a memory function")

    def model(lag, beta, tau):
        return 1.0 - beta * np.exp(-lag / tau)

    (beta, tau), _ = optimize.curve_fit(
        model, lags, probs, p0=(0.9, 5.0), bounds=([0.0, 1e-3], [1.0, 1e3]), maxfev=10000)
    return MemoryFunction.finite(float(beta), float(tau), revisit_radius_deg)


def memory_multipliers(shape_hw: tuple[int, int],
                       fixations: list[tuple[int, int]],
                       mem: MemoryFunction,
                       ior_window_px: int,
                       next_index: int | None = None) -> np.ndarray:
    """Per-pixel retained fraction given the visit history.

    Overlapping visits keep the strongest (minimum) retention, so the most
    recent visit to a location dominates.
    """
    h, w = shape_hw
    mult = np.ones((h, w), dtype=np.float64)
    if next_index is None:
        next_index = len(fixations) + 1
    for i, (fx, fy) in enumerate(fixations, start=1):
        win = PixelWindow.square(fx, fy, ior_window_px)
        sl = win.clipped_slices(h, w)
        if sl is None:
            continue
        m = mem.revisit_probability(next_index - i)
        np.minimum(mult[sl], m, out=mult[sl])
    return mult


def apply_memory(amap: AttentionMap, history: list[tuple[int, int]],
                 mem: MemoryFunction, ior_window_px: int,
                 next_index: int | None = None) -> AttentionMap:
    """Attenuate the map around previously fixated locations.

    With infinite memory every visited window is hard-zeroed (idempotent);
    with finite memory earlier visits recover according to the memory curve.
    """
    if mem.kind == "infinite":
        out = amap
        for fx, fy in history:
            out = suppress_window(out, PixelWindow.square(fx, fy, ior_window_px))
        return out
    mult = memory_multipliers((amap.height, amap.width), history, mem,
                              ior_window_px, next_index)
    return AttentionMap(amap.values * mult, normalized=False)


@dataclass(frozen=True)
class SizeConstraint:
    """Weighted pull toward human-like saccade sizes.

    The combined map is w * feature_map + (1 - w) * size_field where the
    size field is a gamma density of the distance (in degrees) from the
    current fixation, rescaled to [0,1] over the image.
    """

    weight: float = 0.2346
    gamma_shape: float = 2.0
    gamma_scale_deg: float = 3.0
    annulus_halfwidth_deg: float = 0.5  # tolerance around the drawn saccade length

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must lie in [0,1], got {self.weight}")
        if self.gamma_shape <= 0 or self.gamma_scale_deg <= 0:
            raise ValueError("gamma parameters must be positive")
        if self.annulus_halfwidth_deg <= 0:
            raise ValueError("annulus halfwidth must be positive")

    @property
    def mean_deg(self) -> float:
        return self.gamma_shape * self.gamma_scale_deg

    @property
    def mode_deg(self) -> float:
        return max(self.gamma_shape - 1.0, 0.0) * self.gamma_scale_deg


def fit_saccade_gamma(sizes_deg) -> tuple[float, float]:
    """Method-of-moments gamma fit (shape, scale) to observed saccade sizes."""
    sizes = np.asarray(sizes_deg, dtype=np.float64)
    if sizes.size < 2:
        raise ValueError("need at least two saccades to fit a gamma")
    mean = sizes.mean()
    var = sizes.var()
    if mean <= 0 or var <= 0:
        raise ValueError("saccade sizes must have positive mean and variance")
    return (mean * mean / var, var / mean)


def size_constraint_field(shape_hw: tuple[int, int], anchor_xy: tuple[float, float],
                          sc: SizeConstraint, pixels_per_degree: float) -> np.ndarray:
    """Gamma-of-distance field around the anchor, rescaled to [0,1]."""
    h, w = shape_hw
    ys, xs = np.ogrid[0:h, 0:w]
    dist_deg = np.hypot(xs - anchor_xy[0], ys - anchor_xy[1]) / pixels_per_degree
    fld = stats.gamma.pdf(dist_deg, a=sc.gamma_shape, scale=sc.gamma_scale_deg)
    return normalize01(AttentionMap(fld)).values


def apply_size_constraint(amap: AttentionMap, current_fixation: tuple[float, float],
                          sc: SizeConstraint, pixels_per_degree: float) -> AttentionMap:
    """Blend the (normalized) feature map with the saccade-size field."""
    if not amap.normalized:
        raise ValueError("apply_size_constraint expects a normalized map")
    fld = size_constraint_field((amap.height, amap.width), current_fixation,
                                sc, pixels_per_degree)
    combined = sc.weight * amap.values + (1.0 - sc.weight) * fld
    return AttentionMap(combined, normalized=False)
