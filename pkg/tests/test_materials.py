import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from phonogap.errors import ContrastError, MaterialError, NearZeroMomentumError
from phonogap.materials import (
    ContrastRegime,
    LameMaterial,
    QuasiMomentum,
    as_momentum,
    contrast_from_materials,
    require_convex,
    validate_convexity,
    wave_velocities,
)

moduli = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)
positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


class TestLameMaterial:
    def test_rejects_nonpositive_shear_modulus(self):
        with pytest.raises(MaterialError):
            LameMaterial(1.0, 0.0)

    def test_rejects_nonpositive_density(self):
        with pytest.raises(MaterialError):
            LameMaterial(1.0, 1.0, rho=-1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(MaterialError):
            LameMaterial(float("nan"), 1.0)

    def test_negative_lambda_breaks_convexity_in_3d(self):
        mat = LameMaterial(-1.0, 1.0)
        assert not validate_convexity(mat, 3)
        with pytest.raises(MaterialError, match="3\\*lambda"):
            require_convex(mat, 3)

    def test_mild_negative_lambda_is_convex_in_2d(self):
        assert validate_convexity(LameMaterial(-0.5, 1.0), 2)

    def test_wave_speeds(self):
        cs, cp = wave_velocities(LameMaterial(2.0, 1.0, rho=4.0))
        assert cs == pytest.approx(0.5)
        assert cp == pytest.approx(1.0)

    @given(lam=moduli, mu=positive, d=st.sampled_from([2, 3]))
    def test_convexity_matches_closed_condition(self, lam, mu, d):
        assert validate_convexity(LameMaterial(lam, mu), d) == (d * lam + 2 * mu > 0)


class TestContrast:
    def test_tau_is_velocity_ratio(self):
        regime = ContrastRegime(1e-4, 4e-4)
        assert regime.tau == pytest.approx(0.5)

    @given(delta=positive, tau=positive)
    def test_delta_tau_roundtrip(self, delta, tau):
        regime = ContrastRegime.from_delta_tau(delta, tau)
        assert regime.tau == pytest.approx(tau, rel=1e-12)
        assert regime.epsilon == pytest.approx(delta / tau**2, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ContrastError):
            ContrastRegime(0.0, 1.0)
        with pytest.raises(ContrastError):
            ContrastRegime.from_delta_tau(1e-3, 0.0)

    def test_from_proportional_materials(self):
        background = LameMaterial(1.0, 2.0, rho=1.0)
        inclusion = LameMaterial(1e3, 2e3, rho=1e3)
        regime = contrast_from_materials(background, inclusion)
        assert regime.delta == pytest.approx(1e-3)
        assert regime.epsilon == pytest.approx(1e-3)
        assert regime.tau == pytest.approx(1.0)

    def test_non_proportional_pairs_rejected(self):
        with pytest.raises(ContrastError):
            contrast_from_materials(LameMaterial(1.0, 1.0), LameMaterial(2e3, 1e3))

    def test_tau_outside_band_warns(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            contrast_from_materials(LameMaterial(1.0, 1.0, 1.0), LameMaterial(1e4, 1e4, 1.0))
        assert any("velocity contrast" in str(w.message) for w in caught)


class TestQuasiMomentum:
    def test_components_must_lie_in_zone(self):
        with pytest.raises(ValueError):
            QuasiMomentum((4.0, 0.0))

    def test_near_zero_cutoff(self):
        alpha = as_momentum((1e-3, 0.0))
        assert alpha.near_zero
        with pytest.raises(NearZeroMomentumError):
            alpha.require_nonzero()
        assert not as_momentum((1e-3, 0.0), alpha_min=1e-4).near_zero

    @given(st.lists(st.floats(-math.pi, math.pi), min_size=2, max_size=3))
    def test_negation_preserves_norm(self, comps):
        alpha = as_momentum(comps)
        assert alpha.negated().norm == pytest.approx(alpha.norm)
        assert alpha.d == len(comps)
