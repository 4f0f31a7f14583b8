import numpy as np
import pytest

from hydrate_inversion.prior import DimensionMismatch
from hydrate_inversion.surrogate import (
    InsufficientSamples,
    QuadraticSurface,
    RankDeficient,
    fit,
    n_coefficients,
    surface_eval,
)


def random_surface(k, seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((k, k))
    return QuadraticSurface(float(rng.standard_normal()), rng.standard_normal(k), 0.5 * (B + B.T))


class TestSurface:
    def test_coefficient_count(self):
        assert [n_coefficients(k) for k in (1, 2, 5)] == [3, 6, 21]

    def test_norm_squared(self):
        s = QuadraticSurface(0.0, np.zeros(2), np.eye(2))
        assert s(np.array([1.0, 1.0])) == 2.0

    def test_batch_and_scalar(self):
        s = random_surface(3)
        Y = np.random.default_rng(1).standard_normal((5, 3))
        batch = surface_eval(s, Y)
        assert batch.shape == (5,)
        assert np.allclose(batch, [s(y) for y in Y], rtol=1e-14)

    def test_coefficients_round_trip(self):
        s = random_surface(4)
        back = QuadraticSurface.from_coefficients(4, s.coefficients())
        assert back.intercept == s.intercept
        assert np.allclose(back.quadratic, s.quadratic, rtol=1e-15)

    def test_dict_round_trip(self):
        s = random_surface(2)
        s.flags.append("x")
        back = QuadraticSurface.from_dict(s.to_dict())
        y = np.array([0.3, -0.7])
        assert back(y) == pytest.approx(s(y), rel=1e-14)
        assert back.flags == ["x"]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            random_surface(2)(np.zeros(3))


class TestFit:
    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_exact_quadratic_recovered(self, k):
        true = random_surface(k, seed=k)
        y = np.random.default_rng(10 + k).uniform(-2, 2, (200, k))
        surf, r2 = fit(y, true(y))
        assert r2 == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(surf.coefficients(), true.coefficients(), atol=1e-9)

    def test_one_dimensional_input_accepted(self):
        y = np.linspace(-1, 1, 20)
        surf, r2 = fit(y, 3 * y**2 - y + 2)
        assert surf.intercept == pytest.approx(2.0)
        assert surf.linear == pytest.approx([-1.0])
        assert surf.quadratic[0, 0] == pytest.approx(3.0)

    def test_constant_target(self):
        y = np.random.default_rng(0).standard_normal((30, 2))
        surf, r2 = fit(y, np.full(30, 4.0))
        assert r2 == 1.0
        assert "constant_target" in surf.flags
        assert surf(np.array([5.0, -3.0])) == pytest.approx(4.0)

    def test_r2_invariant_under_affine_target_map(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal((100, 2))
        f = np.sin(y[:, 0]) + np.cos(2 * y[:, 1])
        _, r2a = fit(y, f)
        _, r2b = fit(y, 7.0 * f - 3.0)
        assert 0 < r2a < 1
        assert r2b == pytest.approx(r2a, rel=1e-10)

    def test_large_offset_inputs_conditioned(self):
        true = random_surface(2, seed=3)
        y = 1e4 + np.random.default_rng(2).uniform(-1, 1, (50, 2))
        surf, r2 = fit(y, true(y))
        assert r2 == pytest.approx(1.0, abs=1e-6)

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamples):
            fit(np.zeros((5, 2)), np.zeros(5))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fit(np.zeros((10, 2)), np.zeros(10), k=3)

    def test_rank_deficient_warns(self):
        y = np.column_stack([np.linspace(-1, 1, 20), np.linspace(-1, 1, 20)])
        with pytest.warns(RankDeficient):
            surf, _ = fit(y, y[:, 0] ** 2)
        assert "rank_deficient" in surf.flags

    def test_nonfinite_target(self):
        with pytest.raises(ValueError):
            fit(np.zeros((10, 1)) + np.arange(10)[:, None], np.r_[np.zeros(9), np.nan])
