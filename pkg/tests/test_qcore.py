"""Unit tests for the small-dimension linear algebra core.

Bell-projection post-states are checked against an independent brute-force
8x8 computation written inline here, not against the library's own helpers.
"""
import numpy as np
import pytest

from teleportsim import qcore as q
from teleportsim.qcore import BellState

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def random_ket(rng, dim=2):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return q.Ket(v / np.linalg.norm(v))


def random_density(rng, dim=2):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    a = g @ g.conj().T
    return q.DensityMatrix(a / np.trace(a))


def random_unitary(rng, dim=2):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    u, _ = np.linalg.qr(g)
    return q.Operator(u, is_unitary=True)


class TestStandardKets:
    def test_h_is_basis_vector(self):
        np.testing.assert_allclose(q.standard_ket("H").amplitudes, [1, 0])

    def test_p_definition(self):
        np.testing.assert_allclose(q.standard_ket("P").amplitudes, [INV_SQRT2, INV_SQRT2])

    def test_r_l_chirality(self):
        np.testing.assert_allclose(q.standard_ket("R").amplitudes, [INV_SQRT2, 1j * INV_SQRT2])
        np.testing.assert_allclose(q.standard_ket("L").amplitudes, [INV_SQRT2, -1j * INV_SQRT2])

    def test_r_l_orthogonal(self):
        r, l = q.standard_ket("R"), q.standard_ket("L")
        assert abs(r.overlap(l)) < 1e-12

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="unknown ket label"):
            q.standard_ket("Q")


class TestBellKets:
    def test_psi_minus_amplitudes(self):
        np.testing.assert_allclose(
            q.bell_ket(BellState.PSI_MINUS).amplitudes, [0, INV_SQRT2, -INV_SQRT2, 0]
        )

    def test_phi_plus_amplitudes(self):
        np.testing.assert_allclose(
            q.bell_ket(BellState.PHI_PLUS).amplitudes, [INV_SQRT2, 0, 0, INV_SQRT2]
        )

    def test_bell_basis_orthonormal(self):
        kets = [q.bell_ket(b) for b in BellState]
        for i, ki in enumerate(kets):
            for j, kj in enumerate(kets):
                expected = 1.0 if i == j else 0.0
                assert abs(ki.overlap(kj) - expected) < 1e-12


class TestConstructors:
    def test_unnormalized_ket_rejected(self):
        with pytest.raises(ValueError, match="not normalized"):
            q.Ket([1.0, 1.0])

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError, match="Hermitian"):
            q.DensityMatrix([[0.5, 0.5], [0.2, 0.5]])

    def test_wrong_trace_rejected(self):
        with pytest.raises(ValueError, match="trace"):
            q.DensityMatrix(np.eye(2))

    def test_negative_eigenvalue_rejected(self):
        m = np.array([[1.2, 0.0], [0.0, -0.2]])
        with pytest.raises(ValueError, match="PSD"):
            q.DensityMatrix(m)

    def test_non_unitary_flag_rejected(self):
        with pytest.raises(ValueError, match="unitary"):
            q.Operator([[1, 1], [0, 1]], is_unitary=True)

    def test_unsupported_dimension_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            q.Ket([1.0, 0.0, 0.0])

    def test_values_immutable(self):
        k = q.standard_ket("H")
        with pytest.raises(ValueError):
            k.amplitudes[0] = 0.0


class TestTensor:
    def test_basis_ordering(self):
        hv = q.tensor(q.standard_ket("H"), q.standard_ket("V"))
        np.testing.assert_allclose(hv.amplitudes, [0, 1, 0, 0])

    def test_identity_product(self):
        i4 = q.tensor(q.SIGMA_0, q.SIGMA_0)
        np.testing.assert_allclose(i4.entries, np.eye(4))
        assert i4.is_unitary

    def test_trace_multiplicative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a, b = random_density(rng), random_density(rng)
            prod = q.tensor(a, b)
            lhs = np.trace(prod.entries)
            rhs = np.trace(a.entries) * np.trace(b.entries)
            assert abs(lhs - rhs) < 1e-12

    def test_mixed_kinds_rejected(self):
        with pytest.raises(TypeError):
            q.tensor(q.standard_ket("H"), q.SIGMA_0)


class TestApply:
    def test_identity_noop(self):
        rng = np.random.default_rng(3)
        rho = random_density(rng)
        np.testing.assert_allclose(q.apply(q.SIGMA_0, rho).entries, rho.entries)

    def test_sigma_z_maps_p_to_m(self):
        rho = q.standard_ket("P").to_density()
        out = q.apply(q.SIGMA_Z, rho)
        np.testing.assert_allclose(out.entries, q.standard_ket("M").to_density().entries, atol=1e-14)

    def test_spectrum_preserved(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rho, u = random_density(rng), random_unitary(rng)
            np.testing.assert_allclose(
                np.sort(q.apply(u, rho).eigenvalues()),
                np.sort(rho.eigenvalues()),
                atol=1e-12,
            )

    def test_dim_mismatch_rejected(self):
        rho4 = q.tensor(q.standard_ket("H"), q.standard_ket("H")).to_density()
        with pytest.raises(ValueError, match="dim"):
            q.apply(q.SIGMA_Z, rho4)


class TestFidelityPure:
    def test_self_fidelity_one(self):
        h = q.standard_ket("H")
        assert q.fidelity_pure(h.to_density(), h) == pytest.approx(1.0, abs=1e-12)

    def test_maximally_mixed_half(self):
        assert q.fidelity_pure(q.DensityMatrix.maximally_mixed(), q.standard_ket("P")) == pytest.approx(0.5)

    def test_depolarized_pure_state(self):
        # <P|(1-p)|P><P| + p I/2|P> = 1 - p/2
        p_ket = q.standard_ket("P")
        for p in (0.0, 0.1, 0.5, 1.0):
            mixed = q.DensityMatrix((1 - p) * p_ket.to_density().entries + p * np.eye(2) / 2)
            assert q.fidelity_pure(mixed, p_ket) == pytest.approx(1 - p / 2, abs=1e-12)

    def test_linear_in_rho(self):
        rng = np.random.default_rng(17)
        phi = random_ket(rng)
        a, b = random_density(rng), random_density(rng)
        for lam in (0.25, 0.5, 0.9):
            mix = q.DensityMatrix(lam * a.entries + (1 - lam) * b.entries)
            expected = lam * q.fidelity_pure(a, phi) + (1 - lam) * q.fidelity_pure(b, phi)
            assert q.fidelity_pure(mix, phi) == pytest.approx(expected, abs=1e-12)

    def test_global_phase_invariant(self):
        rng = np.random.default_rng(19)
        rho = random_density(rng)
        phi = random_ket(rng)
        shifted = q.Ket(np.exp(1j * 0.831) * phi.amplitudes)
        assert q.fidelity_pure(rho, shifted) == pytest.approx(q.fidelity_pure(rho, phi), abs=1e-12)


class TestPartialTrace:
    def test_entangled_reduces_to_mixed(self):
        rho = q.bell_ket(BellState.PSI_MINUS).to_density()
        reduced = q.partial_trace(rho, "first")
        np.testing.assert_allclose(reduced.entries, np.eye(2) / 2, atol=1e-12)

    def test_product_state_reduces_to_factor(self):
        hv = q.tensor(q.standard_ket("H"), q.standard_ket("V")).to_density()
        reduced = q.partial_trace(hv, "second")
        np.testing.assert_allclose(reduced.entries, q.standard_ket("H").to_density().entries, atol=1e-12)

    def test_trace_preserved(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            rho = random_density(rng, dim=4)
            for keep in ("first", "second"):
                assert np.trace(q.partial_trace(rho, keep).entries) == pytest.approx(1.0, abs=1e-12)

    def test_wrong_dim_rejected(self):
        with pytest.raises(ValueError, match="4-dim"):
            q.partial_trace(q.DensityMatrix.maximally_mixed(2), "first")


def brute_force_bell_projection(rho8, bell_amps):
    """Independent oracle: explicit 8x8 projector algebra and index loops."""
    proj12 = np.outer(bell_amps, bell_amps.conj())
    projector = np.kron(proj12, np.eye(2, dtype=complex))
    after = projector @ rho8 @ projector
    prob = np.trace(after).real
    post = np.zeros((2, 2), dtype=complex)
    for i in range(2):
        for j in range(2):
            for a in range(2):
                for b in range(2):
                    post[i, j] += after[4 * a + 2 * b + i, 4 * a + 2 * b + j]
    return prob, post / prob


class TestProjectBell:
    def test_teleportation_probabilities(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            phi = random_ket(rng)
            state = q.tensor(phi, q.bell_ket(BellState.PSI_MINUS)).to_density()
            probs = [q.project_bell(state, b)[0] for b in BellState]
            for p in probs:
                assert p == pytest.approx(0.25, abs=1e-12)
            assert sum(probs) == pytest.approx(1.0, abs=1e-12)

    def test_p_input_psi_minus_gives_p(self):
        p_ket = q.standard_ket("P")
        state = q.tensor(p_ket, q.bell_ket(BellState.PSI_MINUS)).to_density()
        prob, post = q.project_bell(state, BellState.PSI_MINUS)
        assert prob == pytest.approx(0.25, abs=1e-12)
        assert q.fidelity_pure(post, p_ket) == pytest.approx(1.0, abs=1e-12)

    def test_p_input_psi_plus_gives_m(self):
        state = q.tensor(q.standard_ket("P"), q.bell_ket(BellState.PSI_MINUS)).to_density()
        prob, post = q.project_bell(state, BellState.PSI_PLUS)
        assert prob == pytest.approx(0.25, abs=1e-12)
        assert q.fidelity_pure(post, q.standard_ket("M")) == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force_on_random_states(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            rho = random_density(rng, dim=8)
            for b in BellState:
                prob, post = q.project_bell(rho, b)
                ref_prob, ref_post = brute_force_bell_projection(
                    rho.entries, q.bell_ket(b).amplitudes
                )
                assert prob == pytest.approx(ref_prob, abs=1e-12)
                np.testing.assert_allclose(post.entries, ref_post, atol=1e-12)

    def test_correction_table(self):
        # Conditional states for the singlet resource; brute-force verified.
        sx, sz = q.SIGMA_ARRAYS[1], q.SIGMA_ARRAYS[3]
        table = {
            BellState.PSI_MINUS: np.eye(2),
            BellState.PSI_PLUS: sz,
            BellState.PHI_MINUS: sx,
            BellState.PHI_PLUS: sx @ sz,
        }
        rng = np.random.default_rng(37)
        for _ in range(10):
            phi = random_ket(rng)
            state = q.tensor(phi, q.bell_ket(BellState.PSI_MINUS)).to_density()
            for b, u in table.items():
                _, post = q.project_bell(state, b)
                expected = u @ phi.amplitudes
                target = np.outer(expected, expected.conj())
                np.testing.assert_allclose(post.entries, target, atol=1e-12)

    def test_zero_probability_flagged(self):
        # photons 1,2 prepared in |HH>; overlap with Psi- is exactly zero
        state = q.tensor(
            q.tensor(q.standard_ket("H"), q.standard_ket("H")),
            q.standard_ket("V"),
        ).to_density()
        prob, post = q.project_bell(state, BellState.PSI_MINUS)
        assert prob < 1e-15
        assert post is None

    def test_wrong_dim_rejected(self):
        with pytest.raises(ValueError, match="8-dim"):
            q.project_bell(q.DensityMatrix.maximally_mixed(2), BellState.PSI_MINUS)
