import math

import numpy as np
import pytest

from phonogap import bie, oracle
from phonogap.errors import WindowError
from phonogap.materials import LameMaterial

PI2 = (math.pi, math.pi)
MAT = LameMaterial(1.0, 1.0)


@pytest.fixture(scope="module")
def circle64():
    return bie.discretize_boundary(bie.circle(0.25), 64)


def _lowest(disc, alpha, delta, tau=1.0, n=60):
    grid = oracle.default_grid(delta, tau, disc, MAT, alpha, n)
    dips = [r for r in oracle.min_singular_sweep(disc, alpha, (delta, tau), MAT, grid) if r.converged]
    return dips


class TestTransmissionSystem:
    def test_static_uncoupled_system_has_rigid_kernel(self, circle64):
        """At zero frequency and zero contrast every rigid motion solves the system."""
        sigma = oracle.assemble_transmission(circle64, PI2, 0.0, (0.0, 1.0), MAT).singular_values()
        assert np.all(sigma[:3] < 1e-12 * sigma[-1])
        assert sigma[3] > 1e-6 * sigma[-1]

    def test_affine_in_delta(self, circle64):
        mats = [oracle.assemble_transmission(circle64, PI2, 0.05, (d, 1.0), MAT).matrix for d in (0.0, 1e-3, 2e-3)]
        np.testing.assert_allclose(mats[2] - mats[1], mats[1] - mats[0], atol=1e-14)
        np.testing.assert_array_equal(mats[0][:, : circle64.size], mats[2][:, : circle64.size])

    def test_generic_point_is_well_conditioned_and_stable(self):
        values = []
        for N in (64, 128):
            disc = bie.discretize_boundary(bie.circle(0.25), N)
            values.append(oracle.assemble_transmission(disc, PI2, 0.3, (1e-4, 1.0), MAT).singular_values()[0])
        assert values[1] > 1e-4
        assert abs(values[0] - values[1]) < 0.05 * values[1]

    def test_window_enforced(self, circle64):
        limit = oracle.admissible_limit(PI2, 1.0, MAT)
        with pytest.raises(WindowError):
            oracle.assemble_transmission(circle64, PI2, 1.01 * limit / oracle.greens.RESONANCE_SAFETY, (1e-4, 1.0), MAT)

    def test_negative_delta_rejected(self, circle64):
        with pytest.raises(ValueError):
            oracle.assemble_transmission(circle64, PI2, 0.1, (-1.0, 1.0), MAT)


class TestSweep:
    def test_symmetric_point_resonances(self, circle64):
        """At (pi, pi) the circle has a double translational dip and a single rotational one."""
        dips = _lowest(circle64, PI2, 1e-4)
        assert [d.multiplicity for d in dips] == [2, 1]
        Q = bie.compute_Q_alpha(circle64, PI2, MAT)
        predicted = math.sqrt(Q.beta[0] / bie.inclusion_measure(circle64)) * 1e-2
        assert dips[0].omega_hat == pytest.approx(predicted, rel=1e-2)
        rigid = bie.compute_rigid_Q(circle64, PI2, MAT).frequencies(1.0, 1e-4)
        assert dips[1].omega_hat == pytest.approx(rigid[-1], rel=1e-2)

    def test_quarter_contrast_halves_frequency(self, circle64):
        hi = _lowest(circle64, PI2, 1e-4)[0].omega_hat
        lo = _lowest(circle64, PI2, 2.5e-5)[0].omega_hat
        assert 0.48 <= lo / hi <= 0.52

    def test_doubling_velocity_contrast_halves_frequency(self, circle64):
        base = _lowest(circle64, PI2, 1e-4, tau=1.0)[0].omega_hat
        doubled = _lowest(circle64, PI2, 1e-4, tau=2.0)[0].omega_hat
        assert doubled / base == pytest.approx(0.5, rel=1e-2)

    def test_window_without_resonance_is_empty(self, circle64):
        grid = np.geomspace(0.01, 0.04, 20)
        assert oracle.min_singular_sweep(circle64, PI2, (1e-4, 1.0), MAT, grid) == []

    def test_grid_validated(self, circle64):
        with pytest.raises(ValueError):
            oracle.min_singular_sweep(circle64, PI2, (1e-4, 1.0), MAT, [0.1, 0.05, 0.2])


class TestAsymptotics:
    def test_single_delta_rejected(self, circle64):
        with pytest.raises(ValueError):
            oracle.verify_asymptotics(circle64, PI2, MAT, 1.0, [1e-4])

    def test_fit_on_small_grid(self, circle64):
        fit = oracle.verify_asymptotics(
            circle64, PI2, MAT, 1.0, [1e-3, 1e-4],
            grids=[oracle.default_grid(d, 1.0, circle64, MAT, PI2, 60) for d in (1e-3, 1e-4)],
        )
        assert fit.passed()
        assert fit.unmatched == (2,)
        assert max(fit.relative_errors_rigid) < 5e-3


class TestRotationCoupling:
    def test_generic_momentum_follows_rigid_motion_problem(self, circle128):
        """At alpha = (2, 1) the oracle tracks the coupled translation-rotation problem, not Q alone."""
        alpha, delta = (2.0, 1.0), 1e-5
        grid = oracle.default_grid(delta, 1.0, circle128, MAT, alpha, 160)
        dips = [r for r in oracle.min_singular_sweep(circle128, alpha, (delta, 1.0), MAT, grid) if r.converged]
        found = np.array([d.omega_hat for d in dips]) / math.sqrt(delta)
        rigid = bie.compute_rigid_Q(circle128, alpha, MAT).frequencies(1.0, 1.0)
        np.testing.assert_allclose(found, rigid, rtol=1e-3)
        Q = bie.compute_Q_alpha(circle128, alpha, MAT)
        translation_only = np.sqrt(Q.beta / bie.inclusion_measure(circle128))
        assert abs(translation_only[0] - found[0]) / found[0] > 0.01
