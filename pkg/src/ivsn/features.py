"""Feature-map producers for target and search images.

Two backends: one reads precomputed activations from IVSNT1 files (written
by the companion exporter), the other is a small random-weight convolutional
stack used for the random-weights baseline and for self-contained tests.
Both expose the same three calls: extract, target_features, and
search_feature_tiles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, FeatureMap, read_tensor

TILE_SIZE = 224

# Layer ids follow the reference 16-layer convolutional stack, counted with
# rectifier and pooling stages: ids 5/10/17/24/31 are pooled block outputs,
# ids 4/9/16/23/30 are the rectified maps feeding those pools.
SUPPORTED_LAYERS = (4, 5, 9, 10, 16, 17, 23, 24, 30, 31)
LAYER_PAIRS = ((31, 30), (24, 23), (17, 16), (10, 9), (5, 4))

# Pixels per feature cell at each supported layer for the reference stack.
LAYER_SCALES = {4: 1, 5: 2, 9: 2, 10: 4, 16: 4, 17: 8, 23: 8, 24: 16, 30: 16, 31: 32}


class FeatureFileError(IOError):
    """A required precomputed tensor file is missing or malformed."""


@dataclass
class GrayImage:
    """Grayscale image with intensities in [0,1] and a degrees-to-pixels scale."""

    intensities: np.ndarray
    pixels_per_degree: float = 32.0

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim != 2:
            raise DimensionError(f"image must be 2D, got shape {self.intensities.shape}")
        lo, hi = float(self.intensities.min()), float(self.intensities.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities must lie in [0,1], got [{lo}, {hi}]")
        if self.pixels_per_degree <= 0:
            raise ValueError("pixels_per_degree must be positive")

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


def resize_gray(image: GrayImage, out_hw: tuple[int, int]) -> GrayImage:
    """Bilinear resize, clipped back into [0,1]."""
    from scipy import ndimage

    zy = out_hw[0] / image.height
    zx = out_hw[1] / image.width
    out = ndimage.zoom(image.intensities, (zy, zx), order=1, mode="nearest", grid_mode=True)
    out = np.clip(out[:out_hw[0], :out_hw[1]], 0.0, 1.0)
    return GrayImage(out, image.pixels_per_degree)


def tile_image(image: GrayImage, tile: int = TILE_SIZE) -> list[tuple[GrayImage, tuple[int, int]]]:
    """Partition an image into non-overlapping tiles with (x, y) pixel offsets.

    Right/bottom remainder tiles keep their natural (smaller) size; every
    pixel belongs to exactly one tile.
    """
    tiles = []
    for oy in range(0, image.height, tile):
        for ox in range(0, image.width, tile):
            patch = image.intensities[oy:oy + tile, ox:ox + tile]
            tiles.append((GrayImage(patch, image.pixels_per_degree), (ox, oy)))
    return tiles


@dataclass(frozen=True)
class ConvStage:
    """One random-conv stage: rectified valid correlation plus optional 2x pool."""

    channels: int
    kernel: int
    stride: int
    pool: bool


# Three stages whose top rectified map sits at 1/16 resolution with 512
# channels, mirroring the geometry of the reference stack's (31, 30) pair.
DEFAULT_STAGES = (
    ConvStage(channels=64, kernel=5, stride=2, pool=True),
    ConvStage(channels=256, kernel=3, stride=1, pool=True),
    ConvStage(channels=512, kernel=3, stride=2, pool=True),
)


def _maxpool2x(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise DimensionError(f"map {h}x{w} too small to pool")
    return x[:, :h2 * 2, :w2 * 2].reshape(c, h2, 2, w2, 2).max(axis=(2, 4))


class RandomConvBackend:
    """Rectified random-weight convolutional stack, deterministic per seed.

    The same instance (the same weights) processes target and search images.
    Layer ids map onto stages from the top: the pair (31,30) is the last
    stage's pooled/pre-pool outputs, (24,23) the stage below, and so on.
    """

    def __init__(self, weight_seed: int = 0, weight_mean: float = 0.0,
                 weight_sd: float = 1000.0, stages: tuple[ConvStage, ...] = DEFAULT_STAGES):
        self.weight_seed = int(weight_seed)
        self.weight_mean = float(weight_mean)
        self.weight_sd = float(weight_sd)
        self.stages = tuple(stages)
        rng = np.random.default_rng(self.weight_seed)
        self.weights = []
        c_in = 1
        for st in self.stages:
            w = rng.normal(self.weight_mean, self.weight_sd,
                           size=(st.channels, c_in, st.kernel, st.kernel))
            self.weights.append(w)
            c_in = st.channels

    def _layer_stage(self, layer: int) -> tuple[int, bool]:
        """(stage index, pooled?) for a supported layer id."""
        for pair_idx, (hi, lo) in enumerate(LAYER_PAIRS):
            if layer in (hi, lo):
                stage_idx = len(self.stages) - 1 - pair_idx
                if stage_idx < 0:
                    raise ValueError(
                        f"layer {layer} needs {pair_idx + 1} stages, backend has {len(self.stages)}")
                return stage_idx, layer == hi
        raise ValueError(f"unsupported layer id {layer}; expected one of {SUPPORTED_LAYERS}")

    def extract(self, image: GrayImage, layer: int = 30) -> FeatureMap:
        """Run the stack on one image (or tile) up to the requested layer."""
        if image.height > TILE_SIZE or image.width > TILE_SIZE:
            raise DimensionError(
                f"image {image.height}x{image.width} exceeds {TILE_SIZE}; tile it first")
        stage_idx, pooled = self._layer_stage(layer)
        x = image.intensities[np.newaxis, :, :]
        scale = Fraction(1)
        for i, st in enumerate(self.stages[:stage_idx + 1]):
            w = self.weights[i]
            if x.shape[1] < st.kernel or x.shape[2] < st.kernel:
                raise DimensionError(
                    f"map {x.shape[1]}x{x.shape[2]} smaller than stage-{i} kernel {st.kernel}")
            win = sliding_window_view(x, (st.kernel, st.kernel), axis=(1, 2))
            win = win[:, ::st.stride, ::st.stride]
            x = np.maximum(np.einsum("cabij,ocij->oab", win, w), 0.0)
            scale *= st.stride
            if st.pool and (i < stage_idx or pooled):
                x = _maxpool2x(x)
                scale *= 2
        return FeatureMap(x, scale)

    def target_features(self, image: GrayImage, layer: int = 31) -> FeatureMap:
        """Cue images are normalized to the stack's reference 224 px input."""
        if (image.height, image.width) != (TILE_SIZE, TILE_SIZE):
            image = resize_gray(image, (TILE_SIZE, TILE_SIZE))
        return self.extract(image, layer)

    def search_feature_tiles(self, image: GrayImage,
                             layer: int = 30) -> list[tuple[FeatureMap, tuple[int, int]]]:
        """Per-tile features; remainder tiles too small for the valid-mode
        stack are skipped with a warning (their attention stays zero)."""
        out = []
        for patch, off in tile_image(image):
            try:
                out.append((self.extract(patch, layer), off))
            except DimensionError:
                import warnings
                warnings.warn(f"tile at {off} ({patch.height}x{patch.width}) is too "
                              "small for the feature stack; leaving it unattended",
                              stacklevel=2)
        if not out:
            raise DimensionError(
                f"image {image.height}x{image.width} has no tile large enough "
                "for the feature stack")
        return out

    def top_feature_vector(self, image: GrayImage) -> np.ndarray:
        """Spatially pooled top-layer activations, for recognition decisions.

        Uses the pre-pool top map (layer 30) so that crops as small as the
        recognition window still reach the top of the stack.
        """
        fm = self.extract(image, 30)
        return fm.data.mean(axis=(1, 2))


INDEX_FILENAME = "features_index.json"


def tensor_filename(image_id: str, layer: int, tile: int | None = None) -> str:
    if tile is None:
        return f"{image_id}_layer{layer}.ivsnt"
    return f"{image_id}_tile{tile}_layer{layer}.ivsnt"


class PrecomputedBackend:
    """Reads activations exported ahead of time as IVSNT1 files.

    Images are referenced by string id.  If a features_index.json is present
    it provides per-tile file names and pixel offsets; otherwise a single
    whole-image file per (id, layer) is expected at offset (0,0).
    """

    def __init__(self, features_dir: str):
        self.features_dir = str(features_dir)
        self.index = None
        index_path = os.path.join(self.features_dir, INDEX_FILENAME)
        if os.path.exists(index_path):
            with open(index_path) as fh:
                self.index = json.load(fh)

    def _path(self, filename: str) -> str:
        return os.path.join(self.features_dir, filename)

    def extract(self, image_id: str, layer: int = 30) -> FeatureMap:
        path = self._path(tensor_filename(image_id, layer))
        if not os.path.exists(path):
            raise FeatureFileError(
                f"no tensor file for image {image_id!r} at layer {layer}: {path}")
        return read_tensor(path)

    def target_features(self, image_id: str, layer: int = 31) -> FeatureMap:
        return self.extract(image_id, layer)

    def search_feature_tiles(self, image_id: str,
                             layer: int = 30) -> list[tuple[FeatureMap, tuple[int, int]]]:
        if self.index is not None:
            entry = self.index.get("images", {}).get(image_id, {})
            tiles = entry.get("layers", {}).get(str(layer))
            if tiles:
                out = []
                for t in tiles:
                    path = self._path(t["file"])
                    if not os.path.exists(path):
                        raise FeatureFileError(
                            f"indexed tensor file missing for {image_id!r} layer {layer}: {path}")
                    out.append((read_tensor(path), (int(t["offset"][0]), int(t["offset"][1]))))
                return out
        return [(self.extract(image_id, layer), (0, 0))]
