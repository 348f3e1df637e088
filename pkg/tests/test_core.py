import numpy as np
import pytest
import scipy.linalg

from dressedspin.core import (
    DensityState,
    HilbertSpace,
    NumericDomainError,
    Operator,
    SpaceMismatchError,
    basis_state,
    embed,
    evolve,
    expectation,
    identity,
    maximally_mixed,
    partial_trace_replace,
    product_state,
    propagator,
    space,
    spin_operators,
)


def test_spin_half_sz_is_diag_half():
    ops = spin_operators(0.5)
    assert np.allclose(ops.z.matrix, np.diag([0.5, -0.5]))


def test_spin_one_sz_and_ladder_element():
    ops = spin_operators(1)
    assert np.allclose(ops.z.matrix, np.diag([1.0, 0.0, -1.0]))
    # <0|Sx|-1> = 1/sqrt(2) in the m = +1, 0, -1 basis
    assert ops.x.matrix[1, 2] == pytest.approx(1 / np.sqrt(2), abs=1e-15)


@pytest.mark.parametrize("s", [0.5, 1, 1.5, 2, 2.5])
def test_commutation_relations(s):
    ops = spin_operators(s)
    comm = ops.x.matrix @ ops.y.matrix - ops.y.matrix @ ops.x.matrix
    assert np.max(np.abs(comm - 1j * ops.z.matrix)) < 1e-14


@pytest.mark.parametrize("s", [0.5, 1, 1.5])
def test_ladder_identities(s):
    ops = spin_operators(s)
    assert np.max(np.abs(ops.plus.matrix - (ops.x.matrix + 1j * ops.y.matrix))) < 1e-13
    # S+S- + S-S+ = 2(S^2 - Sz^2) with S^2 = s(s+1)
    lhs = ops.plus.matrix @ ops.minus.matrix + ops.minus.matrix @ ops.plus.matrix
    s2 = s * (s + 1) * np.eye(ops.z.matrix.shape[0])
    rhs = 2 * (s2 - ops.z.matrix @ ops.z.matrix)
    assert np.max(np.abs(lhs - rhs)) < 1e-13


@pytest.mark.parametrize("bad", [0, 0.3, -0.5, 1.2])
def test_non_half_integer_spin_rejected(bad):
    with pytest.raises(ValueError):
        spin_operators(bad)


def test_embed_sz_on_first_of_two_qubits():
    sp = space(("NV", 2), ("P1_1", 2))
    ops = spin_operators(0.5)
    m = embed(ops.z, sp, "NV").matrix
    assert np.allclose(m, np.diag([0.5, 0.5, -0.5, -0.5]))


def test_embeds_on_distinct_sites_commute():
    sp = space(("NV", 2), ("P1_1", 2), ("P1_2", 2))
    ops = spin_operators(0.5)
    a = embed(ops.z, sp, "NV")
    b = embed(ops.x, sp, "P1_1")
    assert np.max(np.abs(a.commutator(b).matrix)) == 0.0


def test_embed_identity_is_identity():
    sp = space(("a", 2), ("b", 3))
    sub = Operator(space(("x", 3)), np.eye(3))
    assert np.allclose(embed(sub, sp, "b").matrix, np.eye(6))


def test_embed_checks_labels_and_dims():
    sp = space(("a", 2), ("b", 2))
    ops = spin_operators(1)
    with pytest.raises(KeyError):
        embed(ops.z, sp, "missing")
    with pytest.raises(ValueError):
        embed(ops.z, sp, "a")  # 3-dim op on a 2-dim factor


def test_hilbert_space_validation():
    with pytest.raises(ValueError):
        HilbertSpace((("a", 2), ("a", 2)))
    with pytest.raises(ValueError):
        HilbertSpace((("a", 1),))
    sp = space(("a", 2), ("b", 4))
    assert sp.total_dim == 8
    assert sp.dim("b") == 4


def test_pi_pulse_inverts_population():
    # Omega = 8 MHz -> pi time 62.5 ns
    ops = spin_operators(0.5)
    u = propagator(8.0 * ops.x, 0.0625)
    rho = evolve(basis_state(ops.x.space, 0), u)
    assert rho.matrix[1, 1].real > 1 - 1e-9


def test_propagator_zero_time_is_identity():
    ops = spin_operators(1)
    u = propagator(3.7 * ops.z, 0.0)
    assert np.max(np.abs(u.matrix - np.eye(3))) < 1e-14


def test_propagator_semigroup():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = Operator(space(("q", 4)), (a + a.conj().T) / 2)
    u1 = propagator(h, 0.3)
    u2 = propagator(h, 0.45)
    u12 = propagator(h, 0.75)
    assert np.max(np.abs(u1.matrix @ u2.matrix - u12.matrix)) < 1e-10


def test_propagator_unitarity_bound():
    rng = np.random.default_rng(11)
    for _ in range(10):
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        h = Operator(space(("q", 8)), (a + a.conj().T) / 2)
        u = propagator(h, rng.uniform(0, 100))
        assert u.unitarity_defect() < 1e-10


def test_propagator_rejects_non_hermitian():
    m = np.array([[0, 1], [0, 0]], dtype=complex)
    with pytest.raises(NumericDomainError):
        propagator(Operator(space(("q", 2)), m), 1.0)


def test_propagator_matches_expm_oracle():
    # independent oracle: scipy's Pade expm on random 4-dim Hamiltonians
    rng = np.random.default_rng(123)
    sp = space(("q", 4))
    for _ in range(20):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = (a + a.conj().T) / 2
        t = rng.uniform(0, 5)
        u = propagator(Operator(sp, h), t)
        u_ref = scipy.linalg.expm(-2j * np.pi * h * t)
        rho0 = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho0 = rho0 @ rho0.conj().T
        rho0 /= rho0.trace()
        ours = u.matrix @ rho0 @ u.matrix.conj().T
        ref = u_ref @ rho0 @ u_ref.conj().T
        assert np.max(np.abs(ours - ref)) < 1e-9


def test_evolve_keeps_maximally_mixed():
    sp = space(("a", 2), ("b", 2))
    ops = spin_operators(0.5)
    h = embed(ops.x, sp, "a") + 0.5 * embed(ops.y, sp, "b")
    rho = evolve(maximally_mixed(sp), propagator(h, 2.3))
    assert np.max(np.abs(rho.matrix - np.eye(4) / 4)) < 1e-12


def test_evolve_preserves_purity_and_reverses():
    sp = space(("q", 3))
    ops = spin_operators(1)
    h = Operator(sp, 2.0 * ops.x.matrix + 0.7 * ops.z.matrix)
    u = propagator(h, 1.234)
    rho = basis_state(sp, 1)
    fwd = evolve(rho, u)
    assert fwd.purity() == pytest.approx(1.0, abs=1e-10)
    back = evolve(fwd, u.dagger())
    assert np.max(np.abs(back.matrix - rho.matrix)) < 1e-12


def test_evolve_space_mismatch():
    u = propagator(Operator(space(("q", 2)), np.diag([1.0, -1.0])), 0.1)
    rho = maximally_mixed(space(("r", 2)))
    with pytest.raises(SpaceMismatchError):
        evolve(rho, u)


def test_evolve_rejects_non_unitary():
    sp = space(("q", 2))
    not_u = Operator(sp, np.diag([1.0, 0.5]))
    with pytest.raises(NumericDomainError):
        evolve(maximally_mixed(sp), not_u)


def test_expectation_examples():
    one = spin_operators(1)
    ms0 = basis_state(one.z.space, 1)  # m = 0 of the triplet
    assert expectation(ms0, one.z) == pytest.approx(0.0, abs=1e-14)

    half = spin_operators(0.5)
    assert expectation(maximally_mixed(half.z.space), half.z) == pytest.approx(0.0, abs=1e-14)

    proj = Operator(half.z.space, np.diag([1.0, 0.0]).astype(complex))
    u = propagator(8.0 * half.x, 0.0625 / 2)  # pi/2
    after = evolve(basis_state(half.z.space, 0), u)
    assert expectation(after, proj) == pytest.approx(0.5, abs=1e-12)


def test_expectation_rejects_non_hermitian_observable():
    sp = space(("q", 2))
    with pytest.raises(NumericDomainError):
        expectation(maximally_mixed(sp), Operator(sp, np.array([[0, 1], [0, 0]])))


def test_energy_conservation_under_own_hamiltonian():
    rng = np.random.default_rng(42)
    sp = space(("q", 6))
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    h = Operator(sp, (a + a.conj().T) / 2)
    rho = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    rho = rho @ rho.conj().T
    rho = DensityState(sp, rho / rho.trace())
    e0 = expectation(rho, h)
    for t in (0.1, 1.0, 7.7, 123.4):
        e = expectation(evolve(rho, propagator(h, t)), h)
        assert abs(e - e0) <= 1e-9 * max(abs(e0), 1.0)


def test_density_state_invariants_after_long_chain():
    rng = np.random.default_rng(3)
    sp = space(("a", 2), ("b", 2), ("c", 2))
    ops = spin_operators(0.5)
    rho = product_state(sp, {"a": np.diag([1.0, 0.0]).astype(complex)})
    for _ in range(50):
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        h = Operator(sp, (a + a.conj().T) / 2)
        rho = evolve(rho, propagator(h, rng.uniform(0, 2)))
    assert abs(rho.matrix.trace() - 1) < 1e-10
    assert rho.min_eigenvalue() > -1e-10


def test_density_state_validation():
    sp = space(("q", 2))
    with pytest.raises(NumericDomainError):
        DensityState(sp, np.diag([0.7, 0.7]))  # trace 1.4
    with pytest.raises(NumericDomainError):
        DensityState(sp, np.array([[0.5, 0.5], [0.0, 0.5]]))  # not Hermitian


def test_partial_trace_replace_resets_one_site():
    sp = space(("NV", 2), ("P1_1", 2))
    ops = spin_operators(0.5)
    # entangle via a zz + drive evolution, then reset the NV
    h = embed(ops.x, sp, "NV") + 4.0 * (
        embed(ops.z, sp, "NV") @ embed(ops.z, sp, "P1_1")
    )
    rho = evolve(product_state(sp, {"NV": np.diag([1.0, 0.0]).astype(complex)}),
                 propagator(h, 0.8))
    reset = partial_trace_replace(rho, "NV", np.diag([1.0, 0.0]).astype(complex))
    # NV reduced state is pure |0>
    nv_pop = expectation(reset, embed(Operator(space(("s", 2)), np.diag([1.0, 0.0]).astype(complex)), sp, "NV"))
    assert nv_pop == pytest.approx(1.0, abs=1e-12)
    # the P1 marginal survives the reset
    p1_z_before = expectation(rho, embed(ops.z, sp, "P1_1"))
    p1_z_after = expectation(reset, embed(ops.z, sp, "P1_1"))
    assert p1_z_after == pytest.approx(p1_z_before, abs=1e-12)


def test_identity_helper():
    sp = space(("a", 2), ("b", 3))
    assert np.allclose(identity(sp).matrix, np.eye(6))
