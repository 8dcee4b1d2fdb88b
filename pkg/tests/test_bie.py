import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonogap import bie
from phonogap.errors import GeometryError, NearFieldError, UnsupportedRegimeError
from phonogap.materials import LameMaterial

PI2 = (math.pi, math.pi)


def _smooth_traces(disc):
    t = disc.params
    f = np.stack([np.cos(t) + 0.2 * np.sin(3 * t), np.sin(2 * t)], axis=1)
    g = np.stack([np.sin(t), 1.0 + np.cos(2 * t)], axis=1)
    return f, g


def _extrapolated_tractions(disc, alpha, k, phi, mat, sign):
    """One-sided traction at the boundary from a cubic fit through offsets 3..6 node spacings."""
    ms = np.array([3.0, 4.0, 5.0, 6.0])
    spacing = disc.spacing()[:, None]
    values = []
    for m in ms:
        points = disc.nodes + sign * m * spacing * disc.normals
        _, tr = bie.layer_potential(disc, alpha, k, phi, points, mat, normals=disc.normals)
        values.append(tr)
    weights = [np.prod([-ms[j] / (ms[i] - ms[j]) for j in range(4) if j != i]) for i in range(4)]
    return np.einsum("i,inc->nc", weights, np.array(values))


class TestGeometry:
    def test_circle_measures(self, circle128):
        assert bie.inclusion_measure(circle128) == pytest.approx(math.pi / 16, rel=1e-13)
        assert bie.boundary_measure(circle128) == pytest.approx(math.pi / 2, rel=1e-13)

    def test_rotated_ellipse_moments(self):
        a, b, angle = 0.3, 0.2, 0.4
        disc = bie.discretize_boundary(bie.ellipse(a, b, angle=angle), 128)
        np.testing.assert_allclose(bie.inclusion_centroid(disc), (0.5, 0.5), atol=1e-13)
        c, s = math.cos(angle), math.sin(angle)
        R = np.array([[c, -s], [s, c]])
        J_axes = np.diag([math.pi * a**3 * b / 4, math.pi * a * b**3 / 4])
        np.testing.assert_allclose(bie.second_moments(disc), R @ J_axes @ R.T, atol=1e-13)

    def test_sphere_measure(self, unit_sphere):
        assert bie.inclusion_measure(unit_sphere) == pytest.approx(4 * math.pi / 3, rel=1e-12)
        assert bie.boundary_measure(unit_sphere) == pytest.approx(4 * math.pi, rel=1e-12)

    def test_inclusion_must_fit_in_cell(self):
        with pytest.raises(GeometryError):
            bie.discretize_boundary(bie.circle(0.6), 64)

    def test_cell_check_can_be_disabled(self):
        disc = bie.discretize_boundary(bie.circle(0.6), 64, cell_check=False)
        assert disc.n_nodes == 64


class TestOperators:
    def test_free_space_dynamic_unsupported(self, circle128):
        with pytest.raises(UnsupportedRegimeError):
            bie.assemble_single_layer(circle128, bie.FREE_SPACE, 0.1)

    def test_series_and_direct_assembly_agree(self, ellipse128, skew_material):
        series = bie.assemble_single_layer(ellipse128, (2.0, 1.0), 0.3, skew_material, method="series").entries
        direct = bie.assemble_single_layer(ellipse128, (2.0, 1.0), 0.3, skew_material, method="direct").entries
        assert np.abs(series - direct).max() <= 1e-10 * np.abs(direct).max()

    def test_series_terms_sum_to_operator(self, ellipse128, skew_material):
        terms = bie.series_terms(ellipse128, "single_layer", (2.0, 1.0), skew_material, None, 6)
        k = 0.2
        total = sum(k ** (2 * l) * M for l, M in enumerate(terms))
        op = bie.assemble_single_layer(ellipse128, (2.0, 1.0), k, skew_material, method="direct").entries
        assert np.abs(total - op).max() <= 1e-9 * np.abs(op).max()
        assert not terms[0].flags.writeable

    def test_eigen_identity_for_constant_densities(self, ellipse128, skew_material):
        S = bie.assemble_single_layer(ellipse128, PI2, 0.0, skew_material)
        K = bie.assemble_neumann_poincare(ellipse128, PI2, 0.0, skew_material)
        phi = bie.solve_density_for_constants(S)
        for i in range(2):
            residual = K.apply(phi[i]) - 0.5 * phi[i]
            assert np.abs(residual).max() <= 1e-10 * np.abs(phi[i]).max()

    def test_single_layer_is_negative(self, ellipse128, skew_material):
        S = bie.assemble_single_layer(ellipse128, PI2, 0.0, skew_material)
        f, g = _smooth_traces(ellipse128)
        assert bie.weighted_inner(ellipse128, S.apply(f), f).real < 0
        assert bie.weighted_inner(ellipse128, S.apply(g), g).real < 0

    def test_dtn_self_adjoint_and_negative(self, ellipse128, skew_material):
        f, g = _smooth_traces(ellipse128)
        Mf, Mg = bie.dtn_apply(ellipse128, PI2, np.stack([f, g]), skew_material)
        lhs = bie.weighted_inner(ellipse128, Mf, g)
        rhs = bie.weighted_inner(ellipse128, f, Mg)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)
        assert bie.weighted_inner(ellipse128, Mf, f).real < 0

    def test_jump_relations_with_frequency(self, skew_material):
        """Dynamic operators obey the same traction jumps; errors shrink on refinement."""
        errs = {1: [], -1: []}
        for N in (64, 128):
            disc = bie.discretize_boundary(bie.ellipse(0.3, 0.2), N)
            t = disc.params
            phi = np.stack([np.cos(t) + 0.3 * np.sin(2 * t), np.sin(3 * t) + 0.5], axis=1).astype(complex)
            Kphi = bie.assemble_neumann_poincare(disc, PI2, 0.7, skew_material).apply(phi)
            for sign in (1, -1):
                ext = _extrapolated_tractions(disc, PI2, 0.7, phi, skew_material, sign)
                errs[sign].append(np.abs(ext - (sign * 0.5 * phi + Kphi)).max())
        assert errs[1][1] < errs[1][0]
        assert errs[-1][1] < errs[-1][0]
        assert errs[-1][1] < 1e-3


class TestQMatrix:
    @pytest.mark.parametrize("alpha", [(2.0, 1.0), (0.3, -1.1), (math.pi, 0.5)])
    def test_hermitian_positive(self, ellipse128, skew_material, alpha):
        Q = bie.compute_Q_alpha(ellipse128, alpha, skew_material)
        assert Q.asymmetry <= bie.HERMITIAN_TOL
        assert Q.beta[0] > 0
        np.testing.assert_allclose(Q.h.conj().T @ Q.h, np.eye(2), atol=1e-12)

    def test_refinement_stable(self, skew_material):
        betas = [
            bie.compute_Q_alpha(bie.discretize_boundary(bie.ellipse(0.3, 0.2, angle=0.3), N), (2.0, 1.0), skew_material).beta
            for N in (64, 128, 256)
        ]
        np.testing.assert_allclose(betas[0], betas[2], rtol=1e-9)
        np.testing.assert_allclose(betas[1], betas[2], rtol=1e-10)

    def test_circle_symmetric_point_is_degenerate(self, circle128, unit_material):
        Q = bie.compute_Q_alpha(circle128, PI2, unit_material)
        assert Q.beta[1] - Q.beta[0] <= 1e-8 * Q.beta[1]

    @settings(max_examples=6, deadline=None)
    @given(st.floats(0.3, math.pi), st.floats(-math.pi, math.pi))
    def test_time_reversal(self, a1, a2):
        """Q at -alpha is the complex conjugate of Q at alpha."""
        disc = bie.discretize_boundary(bie.circle(0.2), 48)
        mat = LameMaterial(1.0, 1.0)
        Qp = bie.compute_Q_alpha(disc, (a1, a2), mat).entries
        Qm = bie.compute_Q_alpha(disc, (-a1, -a2), mat).entries
        np.testing.assert_allclose(Qm, Qp.conj(), atol=1e-9 * np.abs(Qp).max())


class TestRigidMotions:
    def test_translation_block_is_Q(self, circle128, unit_material):
        alpha = (2.0, 1.0)
        rigid = bie.compute_rigid_Q(circle128, alpha, unit_material)
        Q = bie.compute_Q_alpha(circle128, alpha, unit_material)
        np.testing.assert_allclose(rigid.entries[:2, :2], Q.entries, atol=1e-10)

    def test_coupling_shifts_translational_frequencies(self, circle128, unit_material):
        """Away from symmetric points rotations mix in and move the lowest branch by more than 1%."""
        alpha = (2.0, 1.0)
        rigid = bie.compute_rigid_Q(circle128, alpha, unit_material)
        Q = bie.compute_Q_alpha(circle128, alpha, unit_material)
        measure = bie.inclusion_measure(circle128)
        translation_only = np.sqrt(Q.beta / measure)
        coupled = rigid.frequencies(1.0, 1.0)
        assert rigid.coupling() > 1e-2
        assert abs(coupled[0] - translation_only[0]) / coupled[0] > 0.01

    def test_symmetric_point_decouples(self, circle128, unit_material):
        rigid = bie.compute_rigid_Q(circle128, PI2, unit_material)
        assert rigid.coupling() < 1e-8

    def test_mass_matrix_of_disc(self, circle128):
        r = 0.25
        M = bie.rigid_motion_mass(circle128)
        np.testing.assert_allclose(M, np.diag([math.pi * r * r] * 2 + [math.pi * r**4 / 2]), atol=1e-13)

    def test_ball_rotation_and_translation_frequencies(self, unit_sphere, unit_material):
        rigid = bie.compute_rigid_Q(unit_sphere, bie.FREE_SPACE, unit_material)
        w = rigid.frequencies(1.0, 1.0)
        np.testing.assert_allclose(w[:3], math.sqrt(27 / 7), rtol=1e-6)
        np.testing.assert_allclose(w[3:], math.sqrt(15), rtol=1e-6)


class TestPotentials:
    def test_near_field_points_rejected(self, circle128):
        with pytest.raises(NearFieldError):
            bie.check_far_field(circle128, circle128.nodes[:1] + 1e-4 * circle128.normals[:1])

    def test_exterior_field_reproduces_known_potential(self, circle128, unit_material):
        """Feeding the trace S[phi] back in recovers the single-layer potential of phi."""
        t = circle128.params
        phi = np.stack([np.cos(t), 0.5 + np.sin(2 * t)], axis=1).astype(complex)
        omega = 0.2
        S = bie.assemble_single_layer(circle128, PI2, omega, unit_material)
        pts = np.array([[0.82, 0.5], [0.1, 0.9], [1.1, 0.45]])
        u = bie.exterior_field(circle128, PI2, omega, S.apply(phi), pts, unit_material)
        ref = bie.layer_potential(circle128, PI2, omega, phi, pts, unit_material)
        np.testing.assert_allclose(u, ref, atol=1e-10 * np.abs(ref).max())

    def test_exterior_field_rejects_interior_points(self, circle128, unit_material):
        trace = np.tile([1.0, 0.0], (circle128.n_nodes, 1))
        with pytest.raises(ValueError):
            bie.exterior_field(circle128, PI2, 0.0, trace, [[0.5, 0.5]], unit_material)
