"""Bottom-up saliency baseline: center-surround contrast with no target input.

Intensity and orientation channels are computed over a Gaussian pyramid
(centers at levels 2-4, surrounds 3-4 levels coarser), each map passes
through an iterative excitation/inhibition normalization that promotes
isolated peaks, and the channel conspicuity maps are averaged.  Color is
omitted: all experiment stimuli are grayscale.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .features import GrayImage
from .tensor import AttentionMap, normalize01

CENTER_LEVELS = (2, 3, 4)
SURROUND_DELTAS = (3, 4)
_MAX_LEVEL = CENTER_LEVELS[-1] + SURROUND_DELTAS[-1]
_MIN_IMAGE_SIDE = 2 ** _MAX_LEVEL

ORIENTATIONS = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)


class ParameterError(ValueError):
    """Input does not support the configured pyramid geometry."""


def _gaussian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels):
        smoothed = ndimage.gaussian_filter(pyr[-1], sigma=1.0, mode="nearest")
        pyr.append(smoothed[::2, ::2])
    return pyr


def _upsample_to(src: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    zy = shape[0] / src.shape[0]
    zx = shape[1] / src.shape[1]
    out = ndimage.zoom(src, (zy, zx), order=1, mode="nearest", grid_mode=True)
    return out[:shape[0], :shape[1]]


def _gabor_kernel(theta: float, size: int = 9, sigma: float = 2.0,
                  wavelength: float = 4.0, aspect: float = 0.5) -> np.ndarray:
    half = size // 2
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1]
    xr = xs * np.cos(theta) + ys * np.sin(theta)
    yr = -xs * np.sin(theta) + ys * np.cos(theta)
    g = np.exp(-(xr ** 2 + (aspect * yr) ** 2) / (2 * sigma ** 2))
    k = g * np.cos(2 * np.pi * xr / wavelength)
    return k - k.mean()  # zero response on constant regions


def iterative_normalize(m: np.ndarray, iterations: int = 2) -> np.ndarray:
    """Promote maps with few strong peaks, flatten maps with many.

    Each pass adds a narrow self-excitation and subtracts a broad
    inhibition, then rectifies; a constant map comes out all zero.
    """
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros_like(m)
    m = (m - lo) / (hi - lo)
    sigma_ex = max(0.02 * m.shape[1], 0.5)
    sigma_inh = max(0.25 * m.shape[1], 1.0)
    for _ in range(iterations):
        exc = ndimage.gaussian_filter(m, sigma_ex, mode="nearest")
        inh = ndimage.gaussian_filter(m, sigma_inh, mode="nearest")
        m = np.maximum(m + 0.25 * exc - 2.25 * inh - 0.02, 0.0)
    return m


def _center_surround_maps(pyr: list[np.ndarray]) -> list[np.ndarray]:
    maps = []
    for c in CENTER_LEVELS:
        for delta in SURROUND_DELTAS:
            s = c + delta
            surround = _upsample_to(pyr[s], pyr[c].shape)
            maps.append(np.abs(pyr[c] - surround))
    return maps


def ittikoch_saliency(image: GrayImage) -> AttentionMap:
    """Target-free saliency map over the image, normalized to [0,1]."""
    if min(image.height, image.width) < _MIN_IMAGE_SIDE:
        raise ParameterError(
            f"image {image.height}x{image.width} smaller than the coarsest "
            f"pyramid level (needs at least {_MIN_IMAGE_SIDE} px per side)")
    pyr = _gaussian_pyramid(image.intensities, _MAX_LEVEL)
    base_shape = pyr[CENTER_LEVELS[0]].shape

    intensity = np.zeros(base_shape)
    for m in _center_surround_maps(pyr):
        intensity += _upsample_to(iterative_normalize(m), base_shape)

    orientation = np.zeros(base_shape)
    for theta in ORIENTATIONS:
        kern = _gabor_kernel(theta)
        opyr = [np.abs(ndimage.convolve(level, kern, mode="nearest")) for level in pyr]
        chan = np.zeros(base_shape)
        for m in _center_surround_maps(opyr):
            chan += _upsample_to(iterative_normalize(m), base_shape)
        orientation += iterative_normalize(chan)

    combined = (iterative_normalize(intensity) + iterative_normalize(orientation)) / 2.0
    full = _upsample_to(combined, (image.height, image.width))
    return normalize01(AttentionMap(np.maximum(full, 0.0)))
