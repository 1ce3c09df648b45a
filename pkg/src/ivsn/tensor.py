"""Dense tensor kernels shared by the whole model.

Feature maps are small 3D arrays (channels x height x width) of network
activations; attention maps are 2D grids over search-image pixels.  The
correlation here is plain cross-correlation (no kernel flip), valid mode,
because the kernel is itself a full feature map whose orientation matters.
Internal arithmetic is float64; the on-disk format is float32.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Shapes of two tensors are incompatible for the requested operation."""


class TensorFormatError(ValueError):
    """A tensor file does not conform to the IVSNT1 layout."""


class MapExhausted(RuntimeError):
    """An attention map is entirely zero: suppression has removed every peak."""


@dataclass
class FeatureMap:
    """Activations for one image or tile: (channels, height, width), float64.

    spatial_scale is the number of search-image pixels per feature cell and
    is kept exact (a Fraction) so that peak positions map back to pixel
    coordinates without rounding drift.
    """

    data: np.ndarray
    spatial_scale: Fraction = Fraction(1)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DimensionError(f"feature map must be 3D (c,h,w), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DimensionError(f"feature map has an empty axis: {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature map contains non-finite values")
        if not isinstance(self.spatial_scale, Fraction):
            self.spatial_scale = Fraction(self.spatial_scale).limit_denominator(10**6)
        if self.spatial_scale <= 0:
            raise ValueError("spatial_scale must be positive")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def pixel_footprint(self) -> tuple[int, int]:
        """(height, width) of the image region this map covers, in pixels."""
        s = self.spatial_scale
        return (int(self.height * s), int(self.width * s))


@dataclass
class AttentionMap:
    """2D nonnegative grid over search-image pixels."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"attention map must be 2D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attention map contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "AttentionMap":
        return AttentionMap(self.values.copy(), self.normalized)


@dataclass(frozen=True)
class PixelWindow:
    """Axis-aligned box around a center pixel; spans 2*half+1 pixels per axis."""

    center_x: int
    center_y: int
    half_width: int
    half_height: int

    @classmethod
    def square(cls, center_x: int, center_y: int, size: int) -> "PixelWindow":
        half = int(size) // 2
        return cls(int(center_x), int(center_y), half, half)

    def contains(self, x: float, y: float) -> bool:
        return (abs(x - self.center_x) <= self.half_width
                and abs(y - self.center_y) <= self.half_height)

    def clipped_slices(self, height: int, width: int):
        """Row/col slices of the window clipped to an image, or None if empty."""
        r0 = max(self.center_y - self.half_height, 0)
        r1 = min(self.center_y + self.half_height + 1, height)
        c0 = max(self.center_x - self.half_width, 0)
        c1 = min(self.center_x + self.half_width + 1, width)
        if r0 >= r1 or c0 >= c1:
            return None
        return slice(r0, r1), slice(c0, c1)


def correlate_valid(search: FeatureMap, kernel: FeatureMap) -> np.ndarray:
    """Valid-mode multichannel cross-correlation, summed over channels.

    Output shape is (search.h - kernel.h + 1, search.w - kernel.w + 1).
    """
    if search.channels != kernel.channels:
        raise DimensionError(
            f"channel mismatch: search has {search.channels}, kernel has {kernel.channels}")
    if kernel.height > search.height or kernel.width > search.width:
        raise DimensionError(
            f"kernel {kernel.height}x{kernel.width} larger than search map "
            f"{search.height}x{search.width}")
    windows = sliding_window_view(search.data, (kernel.height, kernel.width), axis=(1, 2))
    # windows: (c, out_h, out_w, kh, kw)
    return np.einsum("cabij,cij->ab", windows, kernel.data)


def upsample_to_pixels(grid: np.ndarray, kernel_hw: tuple[int, int],
                       scale: Fraction, footprint_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of a valid-correlation grid to pixel resolution.

    The grid is aligned so that cell (0,0) lands at the kernel-center
    position; pixels with no valid kernel placement are zero.
    """
    out_h, out_w = grid.shape
    kh, kw = kernel_hw
    ph, pw = footprint_hw
    p, q = scale.numerator, scale.denominator
    rows = (np.arange(ph) * q) // p - (kh - 1) // 2
    cols = (np.arange(pw) * q) // p - (kw - 1) // 2
    row_ok = (rows >= 0) & (rows < out_h)
    col_ok = (cols >= 0) & (cols < out_w)
    pix = np.zeros((ph, pw), dtype=np.float64)
    if row_ok.any() and col_ok.any():
        rr = rows[row_ok]
        cc = cols[col_ok]
        pix[np.ix_(row_ok, col_ok)] = grid[np.ix_(rr, cc)]
    return pix


def xcorr2d_multichannel(search: FeatureMap, kernel: FeatureMap) -> AttentionMap:
    """Cross-correlate a kernel feature map over a search feature map.

    Returns an attention map at pixel resolution covering the search map's
    footprint (search dims times spatial_scale).
    """
    grid = correlate_valid(search, kernel)
    pix = upsample_to_pixels(grid, (kernel.height, kernel.width),
                             search.spatial_scale, search.pixel_footprint())
    return AttentionMap(pix, normalized=False)


def normalize01(amap: AttentionMap) -> AttentionMap:
    """Affine rescale to [0,1]; a constant map becomes all zeros."""
    lo = float(amap.values.min())
    hi = float(amap.values.max())
    if hi == lo:
        return AttentionMap(np.zeros_like(amap.values), normalized=True)
    return AttentionMap((amap.values - lo) / (hi - lo), normalized=True)


def suppress_window(amap: AttentionMap, win: PixelWindow) -> AttentionMap:
    """Zero the map inside the (clipped) window; warn if the window misses."""
    sl = win.clipped_slices(amap.height, amap.width)
    out = amap.values.copy()
    if sl is None:
        warnings.warn(f"suppression window at ({win.center_x},{win.center_y}) "
                      "lies entirely outside the map", stacklevel=2)
        return AttentionMap(out, amap.normalized)
    out[sl] = 0.0
    return AttentionMap(out, normalized=False)


def argmax_pixel(amap: AttentionMap) -> tuple[int, int]:
    """(x, y) of the maximum value; ties break to smallest row, then column.

    Raises MapExhausted when every value is zero (total suppression).
    """
    v = amap.values
    if not v.any():
        raise MapExhausted("attention map is entirely zero")
    idx = int(np.argmax(v))
    row, col = divmod(idx, amap.width)
    return (col, row)


_MAGIC = b"IVSNT1"


def write_tensor(path, fm: FeatureMap) -> None:
    """Write a feature map as an IVSNT1 file (f32, chw order), atomically."""
    s = fm.spatial_scale
    header = (f"IVSNT1\ndtype=f32 order=chw dims={fm.channels} {fm.height} {fm.width} "
              f"scale={s.numerator}/{s.denominator}\n").encode("ascii")
    payload = fm.data.astype("<f4").tobytes()
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_tensor(path) -> FeatureMap:
    """Parse an IVSNT1 file back into a FeatureMap (values promoted to f64)."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != _MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        header = fh.readline().rstrip(b"\n").decode("ascii", errors="replace")
        fields = dict(part.split("=", 1) for part in header.split() if "=" in part)
        if fields.get("dtype") != "f32" or fields.get("order") != "chw":
            raise TensorFormatError(f"{path}: unsupported header {header!r}")
        try:
            dims_part = header.split("dims=", 1)[1]
            c, h, w = (int(tok) for tok in dims_part.split()[:3])
            num, den = (int(tok) for tok in fields["scale"].split("/"))
        except (IndexError, KeyError, ValueError) as exc:
            raise TensorFormatError(f"{path}: malformed header {header!r}") from exc
        if min(c, h, w) < 1 or den < 1 or num < 1:
            raise TensorFormatError(f"{path}: non-positive dims/scale in {header!r}")
        raw = fh.read()
    expected = c * h * w * 4
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(c, h, w)
    return FeatureMap(data, Fraction(num, den))
