import numpy as np
import pytest
from _oracles import annihilators, hopping_dense, impurity_dense, jw_sign, quadratic
from hypothesis import given, settings
from hypothesis import strategies as st

from impuritylab import ChainSpec, ImpuritySpec, build_hopping
from impuritylab.errors import ResourceError, SectorError
from impuritylab.exactmb import (
    SparseAction,
    apply_ops,
    enumerate_basis,
    evolve_krylov,
    fermion_operators,
    measure_observables,
    particle_distribution,
    product_state,
    reflection_time,
    run_particle,
)
from impuritylab.freeprop import propagator

VARIANTS = ["density2", "density3", "raise3", "parity_breaking"]


def test_basis_examples():
    b = enumerate_basis(2, "even")
    assert list(b.states) == [0b00, 0b11]
    assert enumerate_basis(3, "odd").dim == 4
    assert enumerate_basis(12, "full").dim == 4096


@pytest.mark.parametrize("sector", ["even", "odd"])
def test_sector_basis_complete_and_sorted(sector):
    b = enumerate_basis(9, sector)
    want = [w for w in range(2**9) if (bin(w).count("1") % 2 == 1) == (sector == "odd")]
    assert list(b.states) == want
    np.testing.assert_array_equal(b.index(b.states), np.arange(b.dim))


def test_basis_resource_error():
    with pytest.raises(ResourceError) as info:
        enumerate_basis(30, "odd")
    assert info.value.required_bytes > 8 * 2**30


def test_raise3_sign_exhaustive():
    # every 4-site word, plus spectator occupations below the impurity
    ops = [(3, True), (4, True), (5, True), (6, False)]
    words = np.arange(2**7)
    new, sign, valid = apply_ops(words, ops)
    for w in words:
        ref_word, ref_sign = jw_sign(int(w), ops)
        if ref_word is None:
            assert not valid[w]
        else:
            assert valid[w] and new[w] == ref_word and sign[w] == ref_sign


@settings(max_examples=200)
@given(st.integers(0, 2**10 - 1), st.lists(st.tuples(st.integers(1, 10), st.booleans()), min_size=1, max_size=5))
def test_apply_ops_matches_bit_counting(word, ops):
    new, sign, valid = apply_ops(np.array([word]), ops)
    ref_word, ref_sign = jw_sign(word, ops)
    if ref_word is None:
        assert not valid[0]
    else:
        assert valid[0] and new[0] == ref_word and sign[0] == ref_sign


def test_fermion_operators_match_kron_oracle():
    ours = fermion_operators(5)
    ref = annihilators(5)
    for a, b in zip(ours, ref):
        np.testing.assert_array_equal(a.toarray(), b)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("site", [1, 3])
def test_hamiltonian_matches_dense_oracle(variant, site):
    L = 7
    imp = ImpuritySpec(variant, 0.37, site, L)
    H = SparseAction(enumerate_basis(L, "full"), imp).to_sparse().toarray()
    ref = quadratic(hopping_dense(L)) + impurity_dense(L, variant, 0.37, site)
    np.testing.assert_allclose(H, ref, atol=1e-14)


@pytest.mark.parametrize("variant", VARIANTS[:3])
@pytest.mark.parametrize("sector", ["even", "odd"])
def test_sector_matvec_is_restriction(variant, sector):
    L = 8
    full = SparseAction(enumerate_basis(L, "full"), ImpuritySpec(variant, 0.5, 2, L)).to_sparse().toarray()
    b = enumerate_basis(L, sector)
    act = SparseAction(b, ImpuritySpec(variant, 0.5, 2, L))
    rng = np.random.default_rng(0)
    psi = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    ref = full[np.ix_(b.states, b.states)] @ psi
    np.testing.assert_allclose(act.matvec(psi), ref, atol=1e-12)
    np.testing.assert_allclose(act.to_sparse().toarray(), full[np.ix_(b.states, b.states)], atol=1e-14)


def test_hermiticity_random_vectors():
    L = 10
    rng = np.random.default_rng(1)
    for variant in VARIANTS:
        sector = "full" if variant == "parity_breaking" else "odd"
        act = SparseAction(enumerate_basis(L, sector), ImpuritySpec(variant, 0.3, 4, L))
        phi = rng.normal(size=act.dim) + 1j * rng.normal(size=act.dim)
        psi = rng.normal(size=act.dim) + 1j * rng.normal(size=act.dim)
        assert abs(np.vdot(phi, act(psi)) - np.conj(np.vdot(psi, act(phi)))) < 1e-10


def test_parity_breaking_needs_full_basis():
    with pytest.raises(SectorError):
        SparseAction(enumerate_basis(6, "odd"), ImpuritySpec("parity_breaking", 0.1, 1, 6))


def test_commutator_with_number():
    # <[N, A]> = 2 <A> for A = c_i^+ c_{i+1}^+ c_{i+2}^+ c_{i+3}
    L = 6
    c = annihilators(L)
    A = c[1].T @ c[2].T @ c[3].T @ c[4]
    N = sum(x.T @ x for x in c)
    rng = np.random.default_rng(2)
    for _ in range(5):
        psi = rng.normal(size=2**L) + 1j * rng.normal(size=2**L)
        psi /= np.linalg.norm(psi)
        lhs = np.vdot(psi, (N @ A - A @ N) @ psi)
        assert abs(lhs - 2 * np.vdot(psi, A @ psi)) < 1e-12


def test_krylov_norm_and_energy():
    L = 10
    act = SparseAction(enumerate_basis(L, "odd"), ImpuritySpec("raise3", 0.3, 1, L))
    state = product_state(act.basis, [1])
    E0 = act.expectation(state.amps)
    for _ in range(100):
        new = evolve_krylov(state, act, 0.05)
        assert abs(new.norm() - state.norm()) < 1e-10
        state = new
    assert abs(act.expectation(state.amps) - E0) < 1e-9


def test_krylov_matches_dense_exponential():
    from scipy.linalg import expm

    L = 8
    act = SparseAction(enumerate_basis(L, "full"), ImpuritySpec("parity_breaking", 0.4, 2, L))
    rng = np.random.default_rng(3)
    psi = rng.normal(size=act.dim) + 0j
    psi /= np.linalg.norm(psi)
    ref = expm(-1j * 0.7 * act.to_sparse().toarray()) @ psi
    np.testing.assert_allclose(evolve_krylov(psi, act, 0.7, tol=1e-12), ref, atol=1e-10)


def test_free_single_particle_matches_propagator():
    L, i = 10, 3
    act = SparseAction(enumerate_basis(L, "odd"))
    state = product_state(act.basis, [i])
    U = propagator(build_hopping(ChainSpec(L)), 1.5).matrix
    for _ in range(10):
        state = evolve_krylov(state, act, 0.15, tol=1e-12)
    probs = np.abs(state.amps) ** 2
    occ = np.array([probs @ act.basis.site_occupation(s) for s in range(1, L + 1)])
    np.testing.assert_allclose(occ, np.abs(U[:, i - 1]) ** 2, atol=1e-8)


def test_initial_observables():
    imp = ImpuritySpec("raise3", 0.3, 2, 8)
    state = product_state(enumerate_basis(8, "odd"), [2])
    obs = measure_observables(state, impurity=imp, distribution=True)
    assert (obs.N, obs.N_imp, obs.J) == (1.0, 1.0, 0.0)
    np.testing.assert_allclose(obs.P, np.eye(9)[1], atol=1e-14)


def test_current_identity_and_parity():
    L = 10
    imp = ImpuritySpec("raise3", 0.3, 1, L)
    dt = 0.02
    run = run_particle(L, imp, 1.0, dt=dt, tol=1e-12, checkpoints=[1.0])
    dN = (run.N[2:] - run.N[:-2]) / (2 * dt)
    assert np.max(np.abs(dN - 2 * run.J[1:-1])) < 1e-3
    P = run.distributions[1.0]
    assert np.all(P[0::2] < 1e-12) and P.sum() == pytest.approx(1)


def test_distribution_matches_histogram():
    L = 8
    act = SparseAction(enumerate_basis(L, "full"), ImpuritySpec("parity_breaking", 0.8, 1, L))
    state = product_state(act.basis, [1])
    for _ in range(5):
        state = evolve_krylov(state, act, 0.3)
    probs = np.abs(state.amps) ** 2
    hist = np.bincount(act.basis.occupation_counts, weights=probs, minlength=L + 1)
    np.testing.assert_allclose(particle_distribution(state), hist, atol=1e-12)


def test_parity_conserved_for_parity_preserving_variants():
    L = 9
    act = SparseAction(enumerate_basis(L, "full"), ImpuritySpec("raise3", 0.5, 2, L))
    state = product_state(act.basis, [2])
    parity = 1 - 2 * (act.basis.occupation_counts & 1)
    for _ in range(10):
        state = evolve_krylov(state, act, 0.2)
        assert abs(np.sum(np.abs(state.amps) ** 2 * parity) + 1) < 1e-12


def test_weak_coupling_boundary_saturates():
    L = 20
    run = run_particle(L, ImpuritySpec("raise3", 0.1, 1, L), reflection_time(L), dt=0.25, tol=1e-9)
    half = run.times >= run.times[-1] / 2
    assert np.max(run.N[half]) < 1.05 * run.N[-1]
    assert run.N_imp[-1] < 0.1 * run.N_imp[0]


def test_bulk_distribution_mean_non_decreasing():
    L = 14
    imp = ImpuritySpec("raise3", 0.3, 6, L)
    checkpoints = [0.5, 1.0, 1.5, 2.0]
    run = run_particle(L, imp, 2.0, dt=0.1, checkpoints=checkpoints)
    means = [np.arange(L + 1) @ run.distributions[t] for t in checkpoints]
    assert np.all(np.diff(means) >= -1e-9)
