"""Exact many-body dynamics of spinless fermions on an open chain.

Occupation words are integers with site s (1-based) stored in bit s-1.
The Jordan-Wigner order is the site order: c_s picks up (-1) to the number
of occupied sites with index < s. Every sign in this module goes through
:func:`apply_ops`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import NumericalContractError, ResourceError, SectorError
from .gaussian import counting_grid, number_distribution
from .lattice import ImpurityRegion, ImpuritySpec

SECTORS = ("full", "even", "odd")

KRYLOV_MAX_DIM = 30
#: bytes allowed for one state-dynamics run (state vectors + Krylov basis)
DEFAULT_MEMORY_BUDGET = 8 * 2**30


def popcount(words) -> np.ndarray:
    return np.bitwise_count(np.asarray(words, dtype=np.int64)).astype(np.int64)


def memory_estimate(L: int, sector: str) -> int:
    dim = 2**L if sector == "full" else 2 ** (L - 1)
    return dim * (16 * (KRYLOV_MAX_DIM + 4) + 8)


@dataclass(frozen=True, eq=False)
class FockBasis:
    L: int
    sector: str
    states: np.ndarray

    @property
    def dim(self) -> int:
        return self.states.size

    def index(self, words) -> np.ndarray:
        words = np.asarray(words, dtype=np.int64)
        return words if self.sector == "full" else words >> 1

    @cached_property
    def occupation_counts(self) -> np.ndarray:
        return popcount(self.states)

    def site_occupation(self, site: int) -> np.ndarray:
        return (self.states >> (site - 1)) & 1


def enumerate_basis(L: int, sector: str = "full", memory_budget: int | None = DEFAULT_MEMORY_BUDGET) -> FockBasis:
    """All occupation words of ``L`` sites in a parity sector, ascending.

    In a fixed-parity sector the lowest bit is fixed by the others, so the
    position of a word is simply ``word >> 1``.
    """
    if sector not in SECTORS:
        raise ValueError(f"sector must be one of {SECTORS}, got {sector!r}")
    if L < 1:
        raise ValueError("L must be positive")
    need = memory_estimate(L, sector)
    if memory_budget is not None and need > memory_budget:
        raise ResourceError(
            f"L={L} ({sector} sector) needs about {need / 2**30:.1f} GiB, budget is "
            f"{memory_budget / 2**30:.1f} GiB",
            required_bytes=need,
        )
    if sector == "full":
        states = np.arange(2**L, dtype=np.int64)
    else:
        upper = np.arange(2 ** (L - 1), dtype=np.int64)
        low = popcount(upper) & 1
        if sector == "odd":
            low ^= 1
        states = (upper << 1) | low
    return FockBasis(L=L, sector=sector, states=states)


def apply_ops(words, ops):
    """Apply a product of ladder operators to occupation words.

    ``ops`` lists ``(site, dagger)`` pairs in written order; the rightmost
    operator acts first. Returns ``(new_words, signs, valid)`` where
    ``valid`` marks words not annihilated.
    """
    w = np.array(words, dtype=np.int64, copy=True)
    sign = np.ones(w.shape, dtype=np.int64)
    valid = np.ones(w.shape, dtype=bool)
    for site, dagger in reversed(ops):
        bit = np.int64(1) << (site - 1)
        occ = (w & bit) != 0
        valid &= ~occ if dagger else occ
        below = popcount(w & (bit - 1))
        sign *= 1 - 2 * (below & 1)
        w ^= bit
    return w, sign, valid


def impurity_terms(impurity: ImpuritySpec):
    """``([ops], diagonal)`` for the term without its Hermitian conjugate."""
    i = impurity.site
    v = impurity.variant
    if v == "density2":
        return [((i, True), (i, False), (i + 1, True), (i + 1, False))], True
    if v == "density3":
        return [((i, True), (i, False), (i + 1, True), (i + 1, False), (i + 2, True), (i + 2, False))], True
    if v == "raise3":
        return [((i, True), (i + 1, True), (i + 2, True), (i + 3, False))], False
    if v == "parity_breaking":
        return [((i, True), (i + 1, True), (i + 2, False))], False
    raise ValueError(v)


class SparseAction:
    """H = H_0 + H_imp applied on the fly to vectors over a :class:`FockBasis`.

    Hopping acts by strided slicing of the amplitude tensor; the impurity is
    stored as a short list of (source, target, coefficient) triplets or as a
    diagonal.
    """

    def __init__(self, basis: FockBasis, impurity: ImpuritySpec | None = None, hopping: float = 1.0):
        self.basis = basis
        self.impurity = impurity
        self.hopping = float(hopping)
        L = basis.L
        if impurity is not None:
            if impurity.site + impurity.width - 1 > L:
                raise ValueError(f"impurity support {list(impurity.support)} exceeds chain of {L} sites")
            if not impurity.conserves_parity and basis.sector != "full":
                raise SectorError(
                    f"{impurity.variant} impurity changes fermion parity; use the full basis, not {basis.sector!r}"
                )
        self._diag = None
        self._offdiag = None
        if impurity is not None and impurity.strength != 0.0:
            ops_list, diagonal = impurity_terms(impurity)
            if diagonal:
                d = np.ones(basis.dim)
                for s in impurity.support:
                    d *= basis.site_occupation(s)
                self._diag = impurity.strength * d
            else:
                new, sign, valid = apply_ops(basis.states, ops_list[0])
                src = np.flatnonzero(valid)
                dst = basis.index(new[valid])
                self._offdiag = (src, dst, impurity.strength * sign[valid].astype(float))
        if basis.sector != "full":
            u = np.arange(basis.dim, dtype=np.int64)
            bit0 = basis.states & 1
            bit1 = u & 1
            self._edge_hop = u[bit0 != bit1]
        else:
            self._edge_hop = None

    @property
    def dim(self) -> int:
        return self.basis.dim

    def _hop_slices(self, psi, out, nbits):
        # bonds between neighbouring vector bits (b, b+1)
        for b in range(nbits - 1):
            shape = (2 ** (nbits - b - 2), 2, 2, 2**b)
            p4 = psi.reshape(shape)
            o4 = out.reshape(shape)
            if self.hopping == 1.0:
                o4[:, 0, 1, :] += p4[:, 1, 0, :]
                o4[:, 1, 0, :] += p4[:, 0, 1, :]
            else:
                o4[:, 0, 1, :] += self.hopping * p4[:, 1, 0, :]
                o4[:, 1, 0, :] += self.hopping * p4[:, 0, 1, :]

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi)
        out = np.zeros(psi.shape, dtype=np.result_type(psi.dtype, float))
        L = self.basis.L
        if L >= 2 and self.hopping != 0.0:
            if self.basis.sector == "full":
                self._hop_slices(psi, out, L)
            else:
                # vector bit k is site k+2; site 1 is slaved to the parity
                self._hop_slices(psi, out, L - 1)
                u = self._edge_hop
                out[u ^ 1] += self.hopping * psi[u]
        if self._diag is not None:
            out += self._diag * psi
        if self._offdiag is not None:
            src, dst, coef = self._offdiag
            out[dst] += coef * psi[src]
            out[src] += coef * psi[dst]
        return out

    __call__ = matvec

    def expectation(self, psi) -> float:
        return float(np.vdot(psi, self.matvec(psi)).real)

    def to_sparse(self) -> sp.csr_matrix:
        """Explicit sparse matrix (for small systems and operator dynamics)."""
        b = self.basis
        rows, cols, vals = [], [], []
        for s in range(1, b.L):
            new, sign, valid = apply_ops(b.states, [(s, True), (s + 1, False)])
            src = np.flatnonzero(valid)
            dst = b.index(new[valid])
            rows += [dst, src]
            cols += [src, dst]
            vals += [self.hopping * sign[valid], self.hopping * sign[valid]]
        if self._diag is not None:
            idx = np.arange(b.dim)
            rows.append(idx)
            cols.append(idx)
            vals.append(self._diag)
        if self._offdiag is not None:
            src, dst, coef = self._offdiag
            rows += [dst, src]
            cols += [src, dst]
            vals += [coef, coef]
        if not rows:
            return sp.csr_matrix((b.dim, b.dim))
        return sp.csr_matrix(
            (np.concatenate(vals).astype(float), (np.concatenate(rows), np.concatenate(cols))),
            shape=(b.dim, b.dim),
        )


@dataclass(eq=False)
class ManyBodyState:
    basis: FockBasis
    amps: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def product_state(basis: FockBasis, occupied_sites) -> ManyBodyState:
    """c_{s1}^+ c_{s2}^+ ... |0> with sites given in creation order (leftmost acts last)."""
    ops = [(s, True) for s in occupied_sites]
    word, sign, valid = apply_ops(np.zeros(1, dtype=np.int64), ops)
    if not valid[0]:
        raise ValueError("repeated site in product state")
    amps = np.zeros(basis.dim, dtype=complex)
    w = int(word[0])
    if basis.sector != "full" and (bin(w).count("1") % 2) != (basis.sector == "odd"):
        raise SectorError(f"product state with {len(ops)} particles is not in the {basis.sector} sector")
    amps[int(basis.index(w))] = sign[0]
    return ManyBodyState(basis, amps)


def _lanczos_step(matvec, psi, dt, tol, max_dim):
    """One Krylov step exp(-i H dt) psi. Returns (new_psi, converged)."""
    beta0 = np.linalg.norm(psi)
    if beta0 == 0.0:
        return psi.copy(), True
    n = psi.size
    V = np.empty((max_dim + 1, n), dtype=complex)
    alpha = np.zeros(max_dim)
    beta = np.zeros(max_dim)
    V[0] = psi / beta0
    for k in range(max_dim):
        w = matvec(V[k])
        alpha[k] = np.vdot(V[k], w).real
        w = w - alpha[k] * V[k]
        if k > 0:
            w -= beta[k - 1] * V[k - 1]
        # full reorthogonalization against the stored basis
        coeffs = V[: k + 1].conj() @ w
        w -= coeffs @ V[: k + 1]
        beta[k] = np.linalg.norm(w)
        m = k + 1
        evals, evecs = la.eigh_tridiagonal(alpha[:m], beta[: m - 1])
        coef = evecs @ (np.exp(-1j * evals * dt) * evecs[0, :])
        breakdown = beta[k] < 1e-13 * max(1.0, abs(alpha[k]))
        err = beta0 * beta[k] * abs(coef[-1])
        if breakdown or (m >= 2 and err < tol):
            return beta0 * (coef @ V[:m]), True
        V[k + 1] = w / beta[k]
    return beta0 * (coef @ V[:m]), False


def evolve_krylov(state, action: SparseAction, dt: float, tol: float = 1e-9,
                  max_dim: int = KRYLOV_MAX_DIM, max_halvings: int = 6):
    """exp(-i H dt)|psi> with an adaptive-dimension Lanczos subspace.

    If the subspace does not converge within ``max_dim`` vectors, the step is
    split in halves (at most ``max_halvings`` times) before giving up.
    """
    if dt <= 0 or tol <= 0:
        raise ValueError("dt and tol must be positive")
    psi = state.amps if isinstance(state, ManyBodyState) else np.asarray(state)

    def advance(vec, h, depth):
        new, ok = _lanczos_step(action.matvec, vec, h, tol, max_dim)
        if ok:
            return new
        if depth >= max_halvings:
            raise NumericalContractError(
                f"Krylov step dt={h:g} did not reach tol={tol:g} with {max_dim} vectors"
            )
        mid = advance(vec, h / 2, depth + 1)
        return advance(mid, h / 2, depth + 1)

    new = advance(np.asarray(psi, dtype=complex), float(dt), 0)
    if isinstance(state, ManyBodyState):
        return ManyBodyState(state.basis, new)
    return new


@dataclass(frozen=True)
class Observables:
    N: float
    N_imp: float
    J: float
    P: np.ndarray | None = None


def production_current(state: ManyBodyState, impurity: ImpuritySpec) -> float:
    """J = i Delta (<A^+> - <A>) = 2 Delta Im<A> for A = c_i^+ c_{i+1}^+ c_{i+2}^+ c_{i+3}."""
    if impurity is None or impurity.variant != "raise3":
        return 0.0
    basis = state.basis
    ops, _ = impurity_terms(impurity)
    new, sign, valid = apply_ops(basis.states, ops[0])
    src = np.flatnonzero(valid)
    dst = basis.index(new[valid])
    psi = state.amps
    expect_A = np.sum(psi[dst].conj() * sign[valid] * psi[src])
    return float(2.0 * impurity.strength * expect_A.imag)


def particle_distribution(state: ManyBodyState) -> np.ndarray:
    """P(n) from the characteristic function at theta_k = 2 pi k/(L+1)."""
    probs = np.abs(state.amps) ** 2
    L = state.basis.L
    hist = np.bincount(state.basis.occupation_counts, weights=probs, minlength=L + 1)
    thetas = counting_grid(L)
    chi = np.exp(1j * np.outer(thetas, np.arange(L + 1))) @ hist
    return number_distribution(chi)


def measure_observables(state: ManyBodyState, region: ImpurityRegion | None = None,
                        impurity: ImpuritySpec | None = None, distribution: bool = False) -> Observables:
    basis = state.basis
    probs = np.abs(state.amps) ** 2
    N = float(probs @ basis.occupation_counts)
    if region is None and impurity is not None:
        region = impurity.region()
    N_imp = 0.0
    if region is not None:
        occ = np.zeros(basis.dim, dtype=np.int64)
        for s in region.sites:
            occ += basis.site_occupation(s)
        N_imp = float(probs @ occ)
    J = production_current(state, impurity)
    P = particle_distribution(state) if distribution else None
    return Observables(N=N, N_imp=N_imp, J=J, P=P)


def fermion_operators(L: int) -> list:
    """Sparse annihilation operators c_1..c_L on the full 2^L Fock space."""
    basis = enumerate_basis(L, "full", memory_budget=None)
    ops = []
    for s in range(1, L + 1):
        new, sign, valid = apply_ops(basis.states, [(s, False)])
        src = np.flatnonzero(valid)
        ops.append(sp.csr_matrix((sign[valid].astype(float), (new[valid], src)), shape=(2**L, 2**L)))
    return ops


@dataclass
class ParticleRun:
    times: np.ndarray
    N: np.ndarray
    N_imp: np.ndarray
    J: np.ndarray
    distributions: dict


def run_particle(L: int, impurity: ImpuritySpec, t_max: float, dt: float = 0.05, tol: float = 1e-9,
                 region: ImpurityRegion | None = None, checkpoints=(), memory_budget=DEFAULT_MEMORY_BUDGET) -> ParticleRun:
    """Evolve c_i^+|0> under H_0 + H_imp and record N, N_imp and J every step."""
    sector = "odd" if impurity.conserves_parity else "full"
    basis = enumerate_basis(L, sector, memory_budget)
    action = SparseAction(basis, impurity)
    state = product_state(basis, [impurity.site])
    region = region or impurity.region()
    n_steps = int(round(t_max / dt))
    checkpoints = {int(round(c / dt)) for c in checkpoints}
    times = dt * np.arange(n_steps + 1)
    N = np.empty(n_steps + 1)
    N_imp = np.empty(n_steps + 1)
    J = np.empty(n_steps + 1)
    dists = {}
    for step in range(n_steps + 1):
        if step > 0:
            state = evolve_krylov(state, action, dt, tol)
        obs = measure_observables(state, region, impurity, distribution=step in checkpoints)
        N[step], N_imp[step], J[step] = obs.N, obs.N_imp, obs.J
        if obs.P is not None:
            dists[float(times[step])] = obs.P
    return ParticleRun(times=times, N=N, N_imp=N_imp, J=J, distributions=dists)


def reflection_time(L: int, v_max: float = 2.0) -> float:
    """Conservative finite-size window end L / (2 v_max)."""
    return L / (2 * v_max)
