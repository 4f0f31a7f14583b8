import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import trapezoid

from hydrate_inversion.prior import (
    TABLE1_BOUNDS,
    DimensionMismatch,
    OutOfBox,
    PriorBox,
    in_box,
    kde_eval,
    kde_fit,
    sample_prior,
    scott_bandwidth,
)

BOX = PriorBox.default()


class TestPriorBox:
    def test_lower_corner_is_table_minimum(self):
        pp = BOX.to_physical(-np.ones(8))
        assert pp.c == 1.8e6
        assert pp.to_vector() == pytest.approx([b[0] for b in TABLE1_BOUNDS], rel=1e-15)

    def test_upper_corner_is_table_maximum(self):
        pp = BOX.to_physical(np.ones(8))
        assert pp.lambda_star == pytest.approx(0.011, rel=1e-15)
        assert pp.to_vector() == pytest.approx([b[1] for b in TABLE1_BOUNDS], rel=1e-15)

    def test_midpoint(self):
        pp = BOX.to_physical(np.zeros(8))
        assert pp.c == pytest.approx(2.1e6)
        assert pp.beta_star == pytest.approx(0.375)

    @given(arrays(float, 8, elements=st.floats(-0.999, 0.999)))
    def test_round_trip(self, x):
        back = BOX.to_normalized(BOX.to_physical(x))
        assert np.allclose(back, x, rtol=1e-12, atol=1e-12)

    def test_out_of_box(self):
        with pytest.raises(OutOfBox):
            BOX.to_physical(np.full(8, 1.0 + 1e-9))
        with pytest.raises(OutOfBox):
            BOX.to_normalized(BOX.upper * 1.01)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            BOX.to_physical_array(np.zeros(7))

    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError):
            PriorBox(np.ones(8), np.ones(8))


class TestSampling:
    def test_reproducible(self):
        a = sample_prior(np.random.default_rng(5), 100)
        b = sample_prior(np.random.default_rng(5), 100)
        assert np.array_equal(a, b)

    def test_inside_and_centred(self):
        n = 10_000
        x = sample_prior(np.random.default_rng(6), n)
        assert np.all(in_box(x))
        assert np.all(np.abs(x.mean(axis=0)) < 3 / math.sqrt(n))

    def test_count_validated(self):
        with pytest.raises(ValueError):
            sample_prior(np.random.default_rng(0), 0)


class TestKde:
    def test_axis_aligned_marginal_is_uniform(self):
        x = sample_prior(np.random.default_rng(7), 5000)
        kde = kde_fit(x[:, :1])
        assert kde(np.array([0.0])) == pytest.approx(0.5, abs=0.05)

    def test_diagonal_marginal_integrates_to_one(self):
        w = np.ones(8) / math.sqrt(8)
        y = sample_prior(np.random.default_rng(8), 20_000) @ w
        kde = kde_fit(y[:, None])
        grid = np.linspace(-math.sqrt(8), math.sqrt(8), 2001)
        dens = kde_eval(kde, grid[:, None])
        assert np.all(dens >= 0)
        assert trapezoid(dens, grid) == pytest.approx(1.0, abs=0.01)
        # Bell shaped: the centre carries more density than the shoulders.
        assert kde(np.array([0.0])) > kde(np.array([1.5]))

    def test_two_dimensional_normalisation(self):
        W = np.linalg.qr(np.random.default_rng(9).standard_normal((8, 2)))[0]
        y = sample_prior(np.random.default_rng(10), 5000) @ W
        kde = kde_fit(y)
        g = np.linspace(-3.2, 3.2, 161)
        Y = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        dens = kde_eval(kde, Y).reshape(161, 161)
        total = trapezoid(trapezoid(dens, g, axis=1), g)
        assert total == pytest.approx(1.0, abs=0.01)

    def test_far_tail(self):
        kde = kde_fit(sample_prior(np.random.default_rng(11), 1000)[:, :1])
        assert kde(np.array([100.0])) < 1e-10

    def test_batch_matches_single(self):
        kde = kde_fit(sample_prior(np.random.default_rng(12), 500)[:, :2])
        pts = np.array([[0.1, -0.3], [0.7, 0.2], [-1.5, 0.0]])
        batch = kde_eval(kde, pts, max_block=600)
        singles = [kde(p) for p in pts]
        assert np.allclose(batch, singles, rtol=1e-13)

    def test_scott_bandwidth(self):
        pts = sample_prior(np.random.default_rng(13), 1000)[:, :2]
        bw = scott_bandwidth(pts)
        assert np.allclose(bw, pts.std(axis=0, ddof=1) * 1000 ** (-1 / 6))

    def test_dimension_mismatch(self):
        kde = kde_fit(sample_prior(np.random.default_rng(14), 200)[:, :2])
        with pytest.raises(DimensionMismatch):
            kde(np.zeros(3))

    def test_small_sample_warns(self):
        with pytest.warns(UserWarning):
            kde_fit(np.zeros((10, 1)) + np.arange(10)[:, None])

    def test_bandwidth_must_be_positive(self):
        with pytest.raises(ValueError):
            kde_fit(sample_prior(np.random.default_rng(0), 200)[:, :1], bandwidth=0.0)
