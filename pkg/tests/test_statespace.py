"""Basis bookkeeping, operator embedding, and propagator checks.

The lift test builds its expected matrix by direct enumeration of basis
labels, independently of the Kronecker-product implementation, and the
propagator is cross-checked against the bundled power-series reference.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomlink import statespace as ss


def random_generator_matrix(rng, dim, damping=0.3):
    """Random non-Hermitian generator: Hermitian part plus negative imaginary diagonal."""
    h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (h + h.conj().T)
    return h - 1j * damping * np.diag(rng.uniform(0, 1, size=dim))


class TestLayout:
    def test_dimensions(self):
        assert ss.SpaceLayout(1, 1).cavity_dim == 6
        assert ss.SpaceLayout(1, 1).joint_dim == 36
        assert ss.SpaceLayout(3, 1).cavity_dim == 54
        assert ss.SpaceLayout(3, 1).joint_dim == 2916
        assert ss.SpaceLayout(2, 2).cavity_dim == 27

    def test_frozen_index_convention(self):
        # photon number least significant, atoms most significant, A before B
        lay = ss.SpaceLayout(1, 1)
        assert lay.joint_index((0,), 0, (0,), 0) == 0
        assert lay.joint_index((0,), 1, (0,), 0) == 6
        assert lay.joint_index((1,), 0, (1,), 0) == 14
        assert lay.joint_index((2,), 1, (2,), 1) == 35
        lay2 = ss.SpaceLayout(2, 1)
        # levels (1, 0), photon 1 -> ((1*3 + 0)*2 + 1) = 7
        assert lay2.cavity_index((1, 0), 1) == 7

    def test_round_trip_exhaustive(self):
        lay = ss.SpaceLayout(1, 1)
        for k in range(lay.joint_dim):
            la, na, lb, nb = lay.joint_labels(k)
            assert lay.joint_index(la, na, lb, nb) == k

    @given(st.integers(1, 3), st.integers(1, 2), st.data())
    @settings(max_examples=60, deadline=None)
    def test_round_trip_random(self, atoms, cutoff, data):
        lay = ss.SpaceLayout(atoms, cutoff)
        k = data.draw(st.integers(0, lay.joint_dim - 1))
        la, na, lb, nb = lay.joint_labels(k)
        assert len(la) == len(lb) == atoms
        assert lay.joint_index(la, na, lb, nb) == k

    def test_rejects_bad_labels(self):
        lay = ss.SpaceLayout(1, 1)
        with pytest.raises(ValueError):
            lay.cavity_index((3,), 0)
        with pytest.raises(ValueError):
            lay.cavity_index((0,), 2)
        with pytest.raises(ss.DimensionError):
            lay.cavity_index((0, 0), 0)


class TestLift:
    def test_annihilator_against_enumeration(self):
        # oracle: decode each joint index, lower the A photon number by hand
        lay = ss.SpaceLayout(1, 1)
        lifted = ss.lift(ss.mode_annihilator(lay), ("A", ss.MODE), lay)
        expected = np.zeros((36, 36), dtype=complex)
        for col in range(36):
            la, na, lb, nb = lay.joint_labels(col)
            if na > 0:
                row = lay.joint_index(la, na - 1, lb, nb)
                expected[row, col] = np.sqrt(na)
        np.testing.assert_array_equal(lifted.matrix, expected)

    def test_atom_projector_against_enumeration(self):
        lay = ss.SpaceLayout(2, 1)
        lifted = ss.lift(ss.atom_op(2, 2), ("B", 1), lay)
        expected = np.zeros((lay.joint_dim,) * 2, dtype=complex)
        for col in range(lay.joint_dim):
            la, na, lb, nb = lay.joint_labels(col)
            if lb[1] == 2:
                expected[col, col] = 1.0
        np.testing.assert_array_equal(lifted.matrix, expected)

    def test_identity_lifts_to_identity(self):
        lay = ss.SpaceLayout(1, 1)
        lifted = ss.lift(np.eye(3), ("A", 0), lay)
        np.testing.assert_array_equal(lifted.matrix, np.eye(36))

    def test_disjoint_sites_commute(self):
        lay = ss.SpaceLayout(2, 1)
        x = ss.lift(ss.atom_op(0, 1), ("A", 0), lay)
        y = ss.lift(ss.mode_annihilator(lay), ("B", ss.MODE), lay)
        np.testing.assert_allclose((x @ y).matrix, (y @ x).matrix, atol=0)

    def test_rejects_unknown_site(self):
        lay = ss.SpaceLayout(1, 1)
        with pytest.raises(ValueError):
            ss.lift(np.eye(3), ("C", 0), lay)
        with pytest.raises(ValueError):
            ss.lift(np.eye(3), ("A", 1), lay)
        with pytest.raises(ss.DimensionError):
            ss.lift(np.eye(4), ("A", 0), lay)


class TestStatesAndOperators:
    def test_basis_state_and_inner(self):
        lay = ss.SpaceLayout(1, 1)
        psi = ss.basis_state(lay, (1,), 0, (1,), 0)
        assert psi.amplitudes[14] == 1.0
        assert ss.norm(psi) == 1.0
        phi = ss.basis_state(lay, (0,), 1, (1,), 0)
        assert ss.inner(psi, phi) == 0.0
        assert ss.inner(psi, psi) == 1.0

    def test_inner_conjugate_linearity(self):
        lay = ss.SpaceLayout(1, 1)
        rng = np.random.default_rng(7)
        a = ss.StateVector(lay, rng.normal(size=36) + 1j * rng.normal(size=36))
        b = ss.StateVector(lay, rng.normal(size=36) + 1j * rng.normal(size=36))
        assert ss.inner(a, b) == pytest.approx(np.conj(ss.inner(b, a)))

    def test_product_state_matches_basis_state(self):
        lay = ss.SpaceLayout(1, 1)
        va = np.zeros(6, dtype=complex)
        va[lay.cavity_index((1,), 0)] = 1.0
        vb = np.zeros(6, dtype=complex)
        vb[lay.cavity_index((0,), 1)] = 1.0
        np.testing.assert_array_equal(
            ss.product_state(lay, va, vb).amplitudes,
            ss.basis_state(lay, (1,), 0, (0,), 1).amplitudes)

    def test_states_are_immutable(self):
        lay = ss.SpaceLayout(1, 1)
        psi = ss.basis_state(lay, (0,), 0, (0,), 0)
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 2.0

    def test_normalize_null_vector_raises(self):
        lay = ss.SpaceLayout(1, 1)
        with pytest.raises(ValueError):
            ss.normalize(ss.StateVector(lay, np.zeros(36, dtype=complex)))

    def test_rejects_nonfinite(self):
        lay = ss.SpaceLayout(1, 1)
        bad = np.zeros(36, dtype=complex)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            ss.StateVector(lay, bad)
        with pytest.raises(ValueError):
            ss.DenseOperator(lay, np.full((36, 36), np.inf))

    def test_operator_algebra(self):
        lay = ss.SpaceLayout(1, 1)
        a = ss.lift(ss.mode_annihilator(lay), ("A", ss.MODE), lay)
        n = a.dag() @ a
        assert n.is_hermitian()
        assert not a.is_hermitian()
        two_n = 2.0 * n
        np.testing.assert_allclose(two_n.matrix, (n + n).matrix)
        np.testing.assert_allclose((n - n).matrix, np.zeros((36, 36)))

    def test_scope_mismatch_raises(self):
        lay = ss.SpaceLayout(1, 1)
        local = ss.identity(lay, "A")
        joint = ss.identity(lay, "joint")
        with pytest.raises(ss.DimensionError):
            _ = local + joint
        psi = ss.basis_state(lay, (0,), 0, (0,), 0)
        with pytest.raises(ss.DimensionError):
            local.apply(psi)


class TestPropagator:
    def test_zero_time_is_identity(self):
        lay = ss.SpaceLayout(1, 1)
        gen = ss.DenseOperator(lay, random_generator_matrix(np.random.default_rng(0), 6), "A")
        np.testing.assert_allclose(ss.propagator(gen, 0.0).matrix, np.eye(6), atol=1e-15)

    def test_pure_decay_closed_form(self):
        # generator -i*kappa*n on one mode: |n=1> amplitude decays as exp(-kappa t)
        lay = ss.SpaceLayout(1, 1)
        kappa = 0.37
        gen = ss.DenseOperator(
            lay, -1j * kappa * ss.embed_cavity(
                ss.embed_in_cavity(ss.mode_number(lay), ss.MODE, lay), "A", lay))
        psi = ss.basis_state(lay, (0,), 1, (0,), 0)
        out = ss.propagator(gen, 2.1).apply(psi)
        k = lay.joint_index((0,), 1, (0,), 0)
        assert out.amplitudes[k] == pytest.approx(np.exp(-kappa * 2.1), rel=1e-12)

    def test_against_power_series_reference(self):
        lay = ss.SpaceLayout(1, 1)
        rng = np.random.default_rng(42)
        gen = ss.DenseOperator(lay, random_generator_matrix(rng, 6), "A")
        u_pade = ss.propagator(gen, 0.3)
        u_series = ss.propagator_power_series(gen, 0.3)
        assert np.abs(u_pade.matrix - u_series.matrix).max() < 1e-10

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 1.5))
    @settings(max_examples=25, deadline=None)
    def test_composition(self, seed, t1):
        lay = ss.SpaceLayout(1, 1)
        rng = np.random.default_rng(seed)
        gen = ss.DenseOperator(lay, random_generator_matrix(rng, 6), "A")
        t2 = 0.4
        u12 = ss.propagator(gen, t1 + t2).matrix
        u2u1 = ss.propagator(gen, t2).matrix @ ss.propagator(gen, t1).matrix
        assert np.abs(u12 - u2u1).max() < 1e-9

    def test_cavity_factorization(self):
        # H = HA x I + I x HB propagates as U(HA) x U(HB)
        lay = ss.SpaceLayout(1, 1)
        rng = np.random.default_rng(5)
        ha = random_generator_matrix(rng, 6)
        hb = random_generator_matrix(rng, 6)
        joint = ss.DenseOperator(lay, ss.embed_cavity(ha, "A", lay) + ss.embed_cavity(hb, "B", lay))
        u_joint = ss.propagator(joint, 0.7).matrix
        ua = scipy_expm(-1j * ha * 0.7)
        ub = scipy_expm(-1j * hb * 0.7)
        assert np.abs(u_joint - np.kron(ua, ub)).max() < 1e-9

    def test_unitary_for_hermitian_generator(self):
        lay = ss.SpaceLayout(1, 1)
        rng = np.random.default_rng(11)
        h = random_generator_matrix(rng, 6, damping=0.0)
        u = ss.propagator(ss.DenseOperator(lay, h, "A"), 1.3).matrix
        np.testing.assert_allclose(u @ u.conj().T, np.eye(6), atol=1e-12)

    def test_negative_time_rejected(self):
        lay = ss.SpaceLayout(1, 1)
        gen = ss.identity(lay, "A")
        with pytest.raises(ValueError):
            ss.propagator(gen, -0.1)


def scipy_expm(m):
    import scipy.linalg
    return scipy.linalg.expm(m)
