import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonogap import greens
from phonogap.errors import NearZeroMomentumError, ResonantDenominatorError, SingularPointError
from phonogap.materials import LameMaterial

MAT = LameMaterial(1.3, 0.8)

# Free-space dynamic tensors at k = 0.1, lambda = mu = 1, from 30-digit
# mpmath differentiation of the Hankel / spherical-wave potentials.
FREE_3D_DIAG = (-0.07935654 - 0.00580984j, -0.05274246 - 0.00580488j, -0.05274246 - 0.00580488j)
FREE_2D = np.array(
    [
        [-0.2629122 - 0.166280793j, -0.02572762 - 1.33213002e-4j],
        [-0.02572762 - 1.33213002e-4j, -0.27791998 - 0.166358501j],
    ]
)

zone = st.floats(-math.pi, math.pi)


def _away_from_lattice(x, min_dist=0.1):
    x = np.asarray(x)
    return np.linalg.norm(x - np.rint(x)) >= min_dist


class TestFreeSpace:
    def test_dynamic_3d_reference(self):
        G = greens.green_free_dynamic((1.0, 0.0, 0.0), 0.1, LameMaterial(1.0, 1.0)).entries
        np.testing.assert_allclose(np.diag(G), FREE_3D_DIAG, atol=2e-8)
        assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-14

    def test_dynamic_2d_reference(self):
        G = greens.green_free_dynamic((0.6, 0.8), 0.1, LameMaterial(1.0, 1.0)).entries
        np.testing.assert_allclose(G, FREE_2D, atol=2e-8)

    def test_dynamic_tends_to_static_in_3d(self):
        x = (0.3, -0.2, 0.4)
        G0 = greens.green_free_static(x, MAT).entries
        diffs = [np.abs(greens.green_free_dynamic(x, k, MAT).entries - G0).max() for k in (1e-2, 1e-3)]
        assert diffs[1] < diffs[0] / 5

    def test_static_tensor_is_symmetric_and_even(self):
        x = np.array([0.21, -0.37])
        G = greens.green_free_static(x, MAT).entries
        np.testing.assert_allclose(G, G.T, atol=1e-15)
        np.testing.assert_allclose(G, greens.green_free_static(-x, MAT).entries, atol=1e-15)


class TestQuasiPeriodicStatic:
    @settings(max_examples=15, deadline=None)
    @given(
        x=st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=2),
        alpha=st.lists(zone, min_size=2, max_size=2),
    )
    def test_two_routes_agree_2d(self, x, alpha):
        if not _away_from_lattice(x) or np.linalg.norm(alpha) < 0.2:
            return
        G = greens.green_quasi_static(x, alpha, MAT).entries
        R = greens.regularized_fourier_static(x, alpha, MAT)
        assert np.abs(G - R).max() <= 1e-8 * max(1.0, np.abs(G).max())

    @settings(max_examples=15, deadline=None)
    @given(
        x=st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3),
        alpha=st.lists(zone, min_size=3, max_size=3),
        shift=st.lists(st.integers(-2, 2), min_size=3, max_size=3),
    )
    def test_bloch_phase_under_lattice_shift(self, x, alpha, shift):
        if np.linalg.norm(alpha) < 0.2 or np.linalg.norm(x) < 1e-3:
            return
        G = greens.green_quasi_static(x, alpha, MAT).entries
        shifted = greens.green_quasi_static(np.add(x, shift), alpha, MAT, reduce=False).entries
        phase = np.exp(1j * np.dot(alpha, shift))
        assert np.abs(shifted - phase * G).max() <= 1e-10 * max(1.0, np.abs(G).max())

    @settings(max_examples=15, deadline=None)
    @given(x=st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2), alpha=st.lists(zone, min_size=2, max_size=2))
    def test_reciprocity(self, x, alpha):
        if np.linalg.norm(alpha) < 0.2 or np.linalg.norm(x) < 1e-3:
            return
        G = greens.green_quasi_static(x, alpha, MAT).entries
        np.testing.assert_allclose(G, G.T, atol=1e-12)
        minus = greens.green_quasi_static(-np.asarray(x), [-a for a in alpha], MAT).entries
        np.testing.assert_allclose(G, minus, atol=1e-10)

    def test_doubled_truncation_self_check(self):
        cfg = greens.LatticeSumConfig(verify=True)
        greens.green_quasi_static((0.3, 0.1, -0.2), (1.0, 0.5, -0.3), MAT, cfg)

    def test_zero_momentum_rejected(self):
        with pytest.raises(NearZeroMomentumError):
            greens.regularized_fourier_static((0.3, 0.1), (0.0, 0.0), MAT)

    def test_regularized_route_refuses_lattice_points(self):
        with pytest.raises(SingularPointError):
            greens.regularized_fourier_static((1.01, 0.0), (1.0, 0.5), MAT)


class TestLowFrequency:
    def test_direct_and_series_agree(self):
        x, alpha = (0.3, 0.1), (math.pi, math.pi)
        mat = LameMaterial(1.0, 1.0)
        direct = greens.green_quasi_dynamic(x, alpha, 0.05, mat, method="direct").entries
        series = greens.green_quasi_dynamic_series(x, alpha, 0.05, mat, L=2).entries
        assert np.abs(direct - series).max() <= 1e-8

    def test_first_series_coefficient_by_richardson(self):
        x, alpha = (0.3, 0.1), (math.pi, math.pi)
        mat = LameMaterial(1.0, 1.0)
        G0 = greens.green_quasi_static(x, alpha, mat).entries
        quotients = [
            (greens.green_quasi_dynamic(x, alpha, k, mat, method="direct").entries - G0) / k**2 for k in (1e-2, 5e-3)
        ]
        extrapolated = (4 * quotients[1] - quotients[0]) / 3
        G1 = greens.green_quasi_series_coeff(x, alpha, 1, mat).entries
        assert np.abs(extrapolated - G1).max() <= 1e-8

    def test_auto_method_in_3d(self):
        x, alpha = (0.3, 0.1, -0.2), (1.0, 0.5, -0.3)
        auto = greens.green_quasi_dynamic(x, alpha, 0.05, MAT).entries
        direct = greens.green_quasi_dynamic(x, alpha, 0.05, MAT, method="direct").entries
        assert np.abs(auto - direct).max() <= 1e-8

    def test_resonant_wavenumber_rejected(self):
        alpha = (0.5, 0.0)
        k = math.sqrt(MAT.mu) * 0.5 * 0.9
        with pytest.raises(ResonantDenominatorError):
            greens.check_wavenumber(alpha, k, MAT)

    def test_series_order_grows_with_k(self):
        alpha = (math.pi, math.pi)
        assert greens.series_order(alpha, 0.5, MAT, 1e-8) > greens.series_order(alpha, 0.05, MAT, 1e-8)


class TestRemainder:
    def test_origin_value_two_routes(self):
        alpha = (math.pi,) * 3
        mat = LameMaterial(1.0, 1.0)
        R0 = greens.remainder_at_origin(alpha, mat)
        ref = greens.regularized_remainder_at_origin(alpha, mat)
        assert np.abs(R0 - ref).max() <= 1e-8

    def test_remainder_is_smooth_near_origin(self):
        alpha = (1.0, 0.5, -0.3)
        R0 = greens.remainder_at_origin(alpha, MAT)
        near = greens.smooth_remainder((1e-4, 0.0, 0.0), alpha, MAT).entries
        assert np.abs(R0 - near).max() < 1e-3
