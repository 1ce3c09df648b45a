"""Tensor kernel tests: correlation oracle, normalization, suppression, file format."""

import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivsn.tensor import (
    AttentionMap,
    DimensionError,
    FeatureMap,
    MapExhausted,
    PixelWindow,
    TensorFormatError,
    argmax_pixel,
    correlate_valid,
    normalize01,
    read_tensor,
    suppress_window,
    upsample_to_pixels,
    write_tensor,
    xcorr2d_multichannel,
)


def xcorr_reference(search: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Nested-loop cross-correlation, the independent oracle."""
    c, sh, sw = search.shape
    _, kh, kw = kernel.shape
    out = np.zeros((sh - kh + 1, sw - kw + 1))
    for r in range(out.shape[0]):
        for col in range(out.shape[1]):
            acc = 0.0
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        acc += search[ch, r + i, col + j] * kernel[ch, i, j]
            out[r, col] = acc
    return out


class TestCorrelation:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        search = FeatureMap(rng.normal(size=(1, 6, 7)))
        kernel = FeatureMap(np.ones((1, 1, 1)))
        out = xcorr2d_multichannel(search, kernel)
        assert np.array_equal(out.values, search.data[0])

    def test_channel_sum_with_unit_kernel(self):
        rng = np.random.default_rng(1)
        search = FeatureMap(rng.normal(size=(2, 4, 5)))
        kernel = FeatureMap(np.ones((2, 1, 1)))
        out = xcorr2d_multichannel(search, kernel)
        assert np.allclose(out.values, search.data.sum(axis=0))

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        search = FeatureMap(rng.normal(size=(3, 5, 5)))
        kernel = FeatureMap(rng.normal(size=(3, 2, 2)))
        got = correlate_valid(search, kernel)
        want = xcorr_reference(search.data, kernel.data)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            correlate_valid(FeatureMap(np.zeros((2, 4, 4))), FeatureMap(np.zeros((3, 2, 2))))

    def test_oversized_kernel_rejected(self):
        with pytest.raises(DimensionError):
            correlate_valid(FeatureMap(np.zeros((1, 3, 3))), FeatureMap(np.zeros((1, 4, 2))))

    def test_zero_search_gives_zero_output(self):
        kernel = FeatureMap(np.random.default_rng(3).normal(size=(2, 3, 3)))
        out = xcorr2d_multichannel(FeatureMap(np.zeros((2, 8, 8))), kernel)
        assert not out.values.any()

    @given(alpha=st.floats(-4, 4, allow_nan=False), seed=st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_bilinear_in_kernel(self, alpha, seed):
        rng = np.random.default_rng(seed)
        search = FeatureMap(rng.normal(size=(2, 6, 6)))
        k1 = rng.normal(size=(2, 3, 3))
        k2 = rng.normal(size=(2, 3, 3))
        base = correlate_valid(search, FeatureMap(k1))
        scaled = correlate_valid(search, FeatureMap(alpha * k1))
        summed = correlate_valid(search, FeatureMap(k1 + k2))
        assert np.allclose(scaled, alpha * base, rtol=1e-9, atol=1e-9)
        assert np.allclose(summed, base + correlate_valid(search, FeatureMap(k2)),
                           rtol=1e-9, atol=1e-9)

    def test_upsample_aligns_kernel_center(self):
        # one hot cell at grid (1, 2), kernel 3x3, scale 4: the hot pixel block
        # starts at ((1+1)*4, (2+1)*4) because the kernel center is offset by 1.
        grid = np.zeros((3, 4))
        grid[1, 2] = 7.0
        pix = upsample_to_pixels(grid, (3, 3), Fraction(4), (20, 24))
        hot = np.argwhere(pix == 7.0)
        assert hot.min(axis=0).tolist() == [8, 12]
        assert hot.max(axis=0).tolist() == [11, 15]
        assert pix.sum() == 7.0 * 16


class TestNormalize:
    def test_affine_rescale(self):
        m = normalize01(AttentionMap(np.array([[2.0, 4.0, 6.0]])))
        assert np.allclose(m.values, [[0.0, 0.5, 1.0]])
        assert m.normalized

    def test_constant_map_becomes_zero(self):
        m = normalize01(AttentionMap(np.full((2, 2), 5.0)))
        assert not m.values.any()
        assert m.normalized

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=50, deadline=None)
    def test_argmax_preserved(self, seed):
        rng = np.random.default_rng(seed)
        raw = AttentionMap(rng.normal(size=(5, 7)))
        assert argmax_pixel(normalize01(raw)) == argmax_pixel(raw)


class TestSuppress:
    def test_suppress_whole_map(self):
        m = AttentionMap(np.ones((4, 4)))
        out = suppress_window(m, PixelWindow(2, 2, 10, 10))
        assert not out.values.any()

    def test_window_outside_is_noop_with_warning(self):
        m = AttentionMap(np.ones((4, 4)))
        with pytest.warns(UserWarning):
            out = suppress_window(m, PixelWindow(100, 100, 2, 2))
        assert np.array_equal(out.values, m.values)

    def test_exact_zero_count(self):
        m = AttentionMap(np.ones((10, 10)))
        out = suppress_window(m, PixelWindow.square(5, 5, 3))
        assert (out.values == 0).sum() == 9

    @given(cx=st.integers(-3, 12), cy=st.integers(-3, 12),
           hw=st.integers(0, 6), hh=st.integers(0, 6))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, cx, cy, hw, hh):
        rng = np.random.default_rng(7)
        m = AttentionMap(rng.uniform(size=(9, 9)))
        win = PixelWindow(cx, cy, hw, hh)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            once = suppress_window(m, win)
            twice = suppress_window(once, win)
        assert np.array_equal(once.values, twice.values)


class TestArgmax:
    def test_unique_max(self):
        v = np.zeros((5, 9))
        v[3, 7] = 1.0
        assert argmax_pixel(AttentionMap(v)) == (7, 3)

    def test_tie_breaks_to_smallest_row(self):
        v = np.zeros((6, 6))
        v[2, 4] = 1.0
        v[5, 1] = 1.0
        assert argmax_pixel(AttentionMap(v)) == (4, 2)

    def test_exhausted_map_signals(self):
        with pytest.raises(MapExhausted):
            argmax_pixel(AttentionMap(np.zeros((3, 3))))

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=50, deadline=None)
    def test_matches_linear_scan(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(6, 8))
        v[0, 0] = abs(v).max() + 1  # keep the map away from the all-zero signal
        best, where = -np.inf, None
        for r in range(6):
            for c in range(8):
                if v[r, c] > best:
                    best, where = v[r, c], (c, r)
        assert argmax_pixel(AttentionMap(v)) == where


class TestTensorFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(3, 4, 5)).astype(np.float32).astype(np.float64)
        fm = FeatureMap(data, Fraction(16, 1))
        path = tmp_path / "t.ivsnt"
        write_tensor(path, fm)
        back = read_tensor(path)
        assert back.spatial_scale == Fraction(16, 1)
        assert np.array_equal(back.data, fm.data)
        write_tensor(tmp_path / "t2.ivsnt", back)
        assert (tmp_path / "t.ivsnt").read_bytes() == (tmp_path / "t2.ivsnt").read_bytes()

    def test_fractional_scale_survives(self, tmp_path):
        fm = FeatureMap(np.zeros((1, 2, 2)), Fraction(7, 3))
        write_tensor(tmp_path / "f.ivsnt", fm)
        assert read_tensor(tmp_path / "f.ivsnt").spatial_scale == Fraction(7, 3)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ivsnt"
        p.write_bytes(b"NOTIT1\nx\n")
        with pytest.raises(TensorFormatError):
            read_tensor(p)

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "short.ivsnt"
        p.write_bytes(b"IVSNT1\ndtype=f32 order=chw dims=1 2 2 scale=1/1\n\x00\x00")
        with pytest.raises(TensorFormatError):
            read_tensor(p)
