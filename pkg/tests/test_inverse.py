import numpy as np
import pytest

from hydrate_inversion.constitutive import ElasticParams, ReturnMapDivergence
from hydrate_inversion.inverse import (
    Dataset,
    MisfitEvaluationError,
    NoiseModel,
    PlantedRidgeForward,
    TriaxialForward,
    fd_jacobian,
    misfit,
    misfit_from_response,
    misfit_gradient,
)
from hydrate_inversion.prior import PriorBox, sample_prior
from hydrate_inversion.triax import LoadingSchedule


def ridge(seed=0, **kw):
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((8, 8)))
    return PlantedRidgeForward(Q[:, 0], Q[:, 1], **kw), Q


def zero_data(fwd):
    n = fwd.n_eps
    return Dataset(fwd.stations, np.zeros(n), np.zeros(n)), NoiseModel(np.ones(2 * n))


class TestDataModel:
    def test_dataset_lengths(self):
        with pytest.raises(ValueError):
            Dataset([1.0, 2.0], [0.0], [0.0, 1.0])

    def test_dataset_ordering(self):
        with pytest.raises(ValueError):
            Dataset([-0.02, -0.01], [0.0, 0.0], [0.0, 0.0])

    def test_noise_must_be_positive(self):
        with pytest.raises(ValueError):
            NoiseModel([1.0, 0.0])

    def test_relative_noise_with_floors(self):
        nm = NoiseModel.relative([0.0, -0.5, 0.0, 2e6], n_eps=2)
        assert np.allclose(nm.sigma, [1e-5, 0.01, 1e3, 4e4])

    def test_single_observation_misfit(self):
        assert misfit_from_response([0.98], [1.0], NoiseModel([0.02])) == pytest.approx(0.5)

    def test_exact_data_gives_zero(self):
        fwd, _ = ridge()
        x = np.full(8, 0.3)
        g = fwd(x)
        ds = Dataset(fwd.stations, g[:23], g[23:])
        assert misfit(x, ds, NoiseModel(np.ones(46)), fwd) == 0.0

    def test_doubling_noise_quarters_misfit(self):
        fwd, _ = ridge()
        ds, nm = zero_data(fwd)
        x = np.full(8, 0.4)
        assert misfit(x, ds, NoiseModel(2 * nm.sigma), fwd) == pytest.approx(misfit(x, ds, nm, fwd) / 4)

    def test_forward_failure_is_wrapped(self):
        def bad(x):
            raise ReturnMapDivergence("boom")

        ds = Dataset([1.0], [0.0], [0.0])
        with pytest.raises(MisfitEvaluationError) as info:
            misfit(np.zeros(8), ds, NoiseModel([1.0, 1.0]), bad)
        assert np.array_equal(info.value.x_norm, np.zeros(8))
        assert info.value.stencil is None


class TestJacobian:
    def test_linear_map(self):
        A = np.random.default_rng(1).standard_normal((46, 8))
        jac = fd_jacobian(np.full(8, 0.2), 1e-4, lambda x: A @ x, with_center=True)
        assert np.allclose(jac.matrix, A, rtol=1e-8, atol=1e-8)
        assert jac.n_evaluations == 17
        assert not jac.clamped.any()

    def test_constant_map(self):
        jac = fd_jacobian(np.zeros(8), 1e-4, lambda x: np.ones(46))
        assert np.array_equal(jac.matrix, np.zeros((46, 8)))
        assert jac.n_evaluations == 16

    def test_clamped_at_face(self):
        A = np.random.default_rng(2).standard_normal((4, 8))
        x = np.zeros(8)
        x[3] = 1.0
        x[5] = -1.0 + 5e-5
        seen = []

        def fwd(z):
            seen.append(z.copy())
            return A @ z

        jac = fd_jacobian(x, 1e-4, fwd)
        assert jac.clamped.tolist() == [j in (3, 5) for j in range(8)]
        assert all(np.all(np.abs(z) <= 1.0) for z in seen)
        assert np.allclose(jac.matrix, A, rtol=1e-8)

    def test_stencil_failure_identified(self):
        def fwd(z):
            if z[2] > 0.1:
                raise ReturnMapDivergence("diverged")
            return z

        with pytest.raises(MisfitEvaluationError) as info:
            fd_jacobian(np.full(8, 0.1), 1e-4, fwd)
        assert info.value.stencil == (2, +1)

    def test_second_order_convergence_on_triaxial_model(self):
        fwd = TriaxialForward(PriorBox.default(), ElasticParams(), LoadingSchedule())
        x = np.full(8, 0.1)
        J = [fd_jacobian(x, h, fwd).matrix for h in (0.2, 0.1, 0.05)]
        ratio = np.linalg.norm(J[0] - J[1]) / np.linalg.norm(J[1] - J[2])
        assert 3.0 < ratio < 5.0


class TestGradient:
    def test_zero_at_data(self):
        fwd, _ = ridge()
        x = np.full(8, -0.2)
        g = fwd(x)
        s = misfit_gradient(x, Dataset(fwd.stations, g[:23], g[23:]), NoiseModel(np.ones(46)), fwd)
        assert np.allclose(s.grad, 0.0, atol=1e-12)
        assert s.f == 0.0

    def test_one_dimensional_quadratic(self):
        ds = Dataset([1.0], [0.0], [0.0])
        s = misfit_gradient(np.array([0.3]), ds, NoiseModel([1.0, 1.0]), lambda x: np.array([x[0], 0.0]))
        assert s.grad == pytest.approx([0.3], rel=1e-10)
        assert s.f == pytest.approx(0.045)

    def test_planted_ridge_misfit_identity(self):
        fwd, Q = ridge(3)
        ds, nm = zero_data(fwd)
        x = np.random.default_rng(4).uniform(-1, 1, 8)
        H = lambda t: (t + 0.1 * t * t) ** 2 / 2
        expected = H(Q[:, 0] @ x) + 0.01 * H(Q[:, 1] @ x)
        assert misfit(x, ds, nm, fwd) == pytest.approx(expected, rel=1e-12)

    def test_directional_derivatives(self):
        fwd, _ = ridge(5)
        ds, nm = zero_data(fwd)
        rng = np.random.default_rng(6)
        for x in sample_prior(rng, 20) * 0.99:
            v = rng.standard_normal(8)
            v /= np.linalg.norm(v)
            s = misfit_gradient(x, ds, nm, fwd)
            d = 1e-4
            fd = (misfit(x + d * v, ds, nm, fwd) - misfit(x - d * v, ds, nm, fwd)) / (2 * d)
            assert s.grad @ v == pytest.approx(fd, rel=0.01, abs=1e-8)

    def test_sample_shape_check(self):
        from hydrate_inversion.inverse import MisfitGradientSample

        with pytest.raises(ValueError):
            MisfitGradientSample(np.zeros(8), 0.0, np.zeros(7))
