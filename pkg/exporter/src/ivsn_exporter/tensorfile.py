"""Writer for the IVSNT1 tensor exchange format.

Layout: line 1 `IVSNT1`; line 2 `dtype=f32 order=chw dims=<C> <H> <W>
scale=<p>/<q>`; then C*H*W little-endian float32 values, row-major
(channel, row, col).  Files are written atomically (temp + rename) and
must be byte-identical across repeated exports of the same inputs.
"""

from __future__ import annotations

import os
from fractions import Fraction

import numpy as np


def write_ivsnt(path, data: np.ndarray, scale: Fraction) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"tensor must be 3D (c,h,w), got shape {arr.shape}")
    c, h, w = arr.shape
    header = (f"IVSNT1\ndtype=f32 order=chw dims={c} {h} {w} "
              f"scale={scale.numerator}/{scale.denominator}\n").encode("ascii")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())
    os.replace(tmp, path)
