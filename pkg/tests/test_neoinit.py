import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neonext.neoinit import InitSpec, format_grid, neoinit, neoinit_pattern
from neonext.rng import Rng, gaussian_fill


class TestPatterns:
    """Noise-free outputs frozen from a hand trace of the banding rules."""

    def test_square_is_identity(self):
        assert np.array_equal(neoinit_pattern(7, 7), np.eye(7))

    def test_2x4(self):
        want = [[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]]
        assert np.array_equal(neoinit_pattern(2, 4), want)

    def test_4x2_transposed_banding(self):
        want = [[0.5, 0.0], [0.5, 0.0], [0.0, 0.5], [0.0, 0.5]]
        assert np.array_equal(neoinit_pattern(4, 2), want)

    def test_3x7_trailing_zero_column(self):
        # step = round(7/3) = 2: bands (0,1), (2,3), (4,5); column 6 untouched
        got = neoinit_pattern(3, 7)
        want = np.zeros((3, 7))
        want[0, 0:2] = 0.5
        want[1, 2:4] = 0.5
        want[2, 4:6] = 0.5
        assert np.array_equal(got, want)

    def test_1x2_average_pooling_row(self):
        assert np.array_equal(neoinit_pattern(1, 2), [[0.5, 0.5]])

    def test_2x5_half_up_rounding(self):
        # step = round(5/2) = 3 (half away from zero): [0,3) then [3,5)
        got = neoinit_pattern(2, 5)
        want = np.array([[1 / 3, 1 / 3, 1 / 3, 0, 0], [0, 0, 0, 0.5, 0.5]])
        assert np.allclose(got, want, rtol=0, atol=1e-15)

    def test_4x6_capped_band_leaves_empty_row(self):
        # step = round(6/4) = 2 would need column 6; row 3 ends up empty
        got = neoinit_pattern(4, 6)
        assert not got[3].any()
        assert got[:3].sum() == 3.0


class TestNoise:
    def test_noise_decomposes_bit_exactly(self):
        spec = InitSpec(3, 5, noise=True, seed=77)
        noisy = neoinit(spec)
        base = neoinit_pattern(3, 5)
        noise = gaussian_fill(Rng(77), 3, 5, 1.0 / np.sqrt(15)).array
        assert np.array_equal(noisy.array, base + noise)

    def test_determinism(self):
        spec = InitSpec(4, 4, noise=True, seed=9)
        assert np.array_equal(neoinit(spec).array, neoinit(spec).array)

    def test_expected_value_is_pattern(self):
        rows, cols = 3, 5
        acc = np.zeros((rows, cols))
        n = 10_000
        for seed in range(n):
            acc += neoinit(InitSpec(rows, cols, noise=True, seed=seed)).array
        mean = acc / n
        sigma = 1.0 / np.sqrt(rows * cols)
        tol = 4.0 * sigma / np.sqrt(n)
        assert np.abs(mean - neoinit_pattern(rows, cols)).max() <= tol


class TestInvariants:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9))
    def test_square_noise_free_is_exact_identity_operator(self, n):
        m = neoinit(InitSpec(n, n, noise=False))
        x = Rng(n).normal((n, 4), 1.0)
        assert np.array_equal(m.array @ x, x)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 10), st.integers(1, 10))
    def test_row_sums_zero_or_one(self, rows, cols):
        got = neoinit_pattern(rows, cols)
        sums = got.sum(axis=1) if rows <= cols else got.sum(axis=0)
        assert all(abs(s) < 1e-12 or abs(s - 1.0) < 1e-12 for s in sums)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6))
    def test_divisible_wide_case_covers_every_column_once(self, rows, mult):
        cols = rows * mult
        got = neoinit_pattern(rows, cols)
        assert np.allclose(got.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all((got != 0).sum(axis=0) == 1)


def test_format_grid_alignment():
    text = format_grid(neoinit(InitSpec(2, 2, noise=False)))
    lines = text.splitlines()
    assert len(lines) == 2
    assert len(lines[0]) == len(lines[1])
    assert "1.00000" in lines[0]


def test_invalid_dims_rejected():
    with pytest.raises(Exception):
        InitSpec(0, 3)
