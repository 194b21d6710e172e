"""Number-conserving fermionic Gaussian states.

Two representations are provided:

``GaussianState``
    the L x L correlation matrix C_jk = <c_j^+ c_k>; general (mixed states
    allowed) and used as the reference engine.
``SlaterEngine``
    pure states as N orbitals stored in the eigenbasis of the hopping
    matrix. Free evolution is then a diagonal phase, which makes long
    monitored trajectories cheap. Its correlation matrix is checked against
    the ``GaussianState`` engine in the test suite.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CorruptedStateError
from .freeprop import Propagator
from .lattice import ImpurityRegion, QuadraticHamiltonian

PROB_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GaussianState:
    corr: np.ndarray

    @property
    def L(self) -> int:
        return self.corr.shape[0]

    @property
    def occupations(self) -> np.ndarray:
        return np.real(np.diag(self.corr))

    def particle_number(self) -> float:
        return float(np.real(np.trace(self.corr)))

    def check(self, tol: float = PROB_TOL):
        C = self.corr
        if np.max(np.abs(C - C.conj().T)) > 10 * tol:
            raise CorruptedStateError("correlation matrix lost Hermiticity")
        ev = np.linalg.eigvalsh(C)
        if ev[0] < -tol or ev[-1] > 1 + tol:
            raise CorruptedStateError(f"correlation eigenvalues outside [0, 1]: [{ev[0]:.3e}, {ev[-1]:.3e}]")


@dataclass(frozen=True)
class MeasurementOutcome:
    site: int
    occupied: bool
    probability: float


@dataclass(frozen=True)
class CountingFunction:
    thetas: np.ndarray
    values: np.ndarray


def init_single_particle(L: int, i: int) -> GaussianState:
    C = np.zeros((L, L), dtype=complex)
    C[i - 1, i - 1] = 1.0
    return GaussianState(C)


def slater_state(orbitals: np.ndarray) -> GaussianState:
    """Correlation matrix of prod_n c^+(phi_n)|0> for orthonormal columns phi_n."""
    Phi = np.asarray(orbitals, dtype=complex)
    return GaussianState(Phi.conj() @ Phi.T)


def evolve(state: GaussianState, U: Propagator | np.ndarray) -> GaussianState:
    """Heisenberg update c_j -> sum_l U_jl c_l gives C -> U* C U^T."""
    U = U.matrix if isinstance(U, Propagator) else np.asarray(U)
    if U.shape != state.corr.shape:
        raise ValueError(f"propagator shape {U.shape} does not match state size {state.L}")
    return GaussianState(U.conj() @ state.corr @ U.T)


def _hermitize(C):
    return 0.5 * (C + C.conj().T)


def measure_occupation(state: GaussianState, j: int, rng=None, outcome: bool | None = None):
    """Projective measurement of N_j with Born-rule sampling.

    Pass ``outcome`` to force a branch (its probability is still reported).
    Returns ``(MeasurementOutcome, post_state)``.
    """
    C = state.corr
    a = j - 1
    p = float(np.real(C[a, a]))
    if p < -PROB_TOL or p > 1 + PROB_TOL:
        raise CorruptedStateError(f"occupation probability {p:.3e} at site {j}")
    p = min(max(p, 0.0), 1.0)
    if outcome is None:
        if rng is None:
            raise ValueError("either rng or a forced outcome is required")
        outcome = bool(rng.random() < p)
    col = C[:, a].copy()
    row = C[a, :].copy()
    if outcome:
        if p <= 0.0:
            raise CorruptedStateError(f"forced occupied outcome at site {j} has zero probability")
        new = C - np.outer(col, row) / p
        new[a, :] = 0.0
        new[:, a] = 0.0
        new[a, a] = 1.0
        prob = p
    else:
        if p >= 1.0:
            raise CorruptedStateError(f"forced empty outcome at site {j} has zero probability")
        new = C + np.outer(col, row) / (1.0 - p)
        new[a, :] = 0.0
        new[:, a] = 0.0
        prob = 1.0 - p
    return MeasurementOutcome(site=j, occupied=outcome, probability=prob), GaussianState(_hermitize(new))


def reset_cluster(state: GaussianState, region: ImpurityRegion) -> GaussianState:
    """Fill every site of a just-measured (hence factorized) region."""
    C = state.corr.copy()
    idx = region.index_array()
    C[idx, :] = 0.0
    C[:, idx] = 0.0
    C[idx, idx] = 1.0
    return GaussianState(C)


def counting_characteristic(state: GaussianState, theta: float) -> complex:
    """<exp(i theta N)> = det(1 + (e^{i theta} - 1) C), via pivoted LU."""
    M = np.eye(state.L, dtype=complex) + (np.exp(1j * theta) - 1.0) * state.corr
    return complex(np.linalg.det(M))


def counting_grid(L: int) -> np.ndarray:
    M = L + 1
    return 2 * np.pi * np.arange(M) / M


def counting_function(state: GaussianState) -> CountingFunction:
    """chi on the full DFT grid, from the spectrum of C (one eigensolve for all angles)."""
    thetas = counting_grid(state.L)
    occ = np.clip(np.linalg.eigvalsh(state.corr), 0.0, 1.0)
    z = np.exp(1j * thetas)[:, None]
    vals = np.prod(1.0 + (z - 1.0) * occ[None, :], axis=1)
    return CountingFunction(thetas=thetas, values=vals)


def number_distribution(source) -> np.ndarray:
    """P(n), n = 0..L, from a state or from chi sampled at theta_k = 2 pi k / (L+1).

    Tiny imaginary parts are dropped, negative entries clipped to zero and
    the result renormalized.
    """
    if isinstance(source, GaussianState):
        source = counting_function(source)
    chi = np.asarray(source.values if isinstance(source, CountingFunction) else source, dtype=complex)
    M = chi.size
    # sum_k e^{-2 pi i k n / M} chi_k is exactly the forward DFT
    P = np.fft.fft(chi) / M
    P = np.real(P)
    P[P < 0] = 0.0
    total = P.sum()
    if abs(total - 1.0) > 1e-3:
        warnings.warn(
            f"distribution renormalized by {total:.6f}; ensemble may be undersampled",
            stacklevel=2,
        )
    return P / total


class SlaterEngine:
    """Pure-state trajectory engine for a fixed free Hamiltonian and step ``dt``.

    A state is a complex array ``Y`` of shape (L, N): orbital n in real space
    is ``V @ Y[:, n]`` with ``V`` the (real) eigenvectors of the hopping matrix.
    """

    def __init__(self, H: QuadraticHamiltonian, dt: float):
        evals, V = H.spectrum
        self.L = H.L
        self.V = V
        self.dt = float(dt)
        self.step_phase = np.exp(-1j * evals * dt)

    def single_particle(self, i: int) -> np.ndarray:
        return self.V[i - 1, :].astype(complex)[:, None]

    def evolve(self, Y: np.ndarray) -> np.ndarray:
        return Y * self.step_phase[:, None]

    def amplitudes(self, Y: np.ndarray, sites) -> np.ndarray:
        """Real-space orbital amplitudes on 1-based ``sites``; shape (len(sites), N)."""
        return self.V[np.asarray(sites) - 1, :] @ Y

    def occupations(self, Y: np.ndarray, sites) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes(Y, sites)) ** 2, axis=1)

    def measure(self, Y: np.ndarray, j: int, rng=None, outcome: bool | None = None):
        """Projective N_j measurement; returns ``(MeasurementOutcome, Y_new)``.

        A Householder rotation among the orbitals concentrates all weight on
        site j into a single orbital, which is then replaced by e_j
        (occupied) or by its normalized remainder (empty).
        """
        N = Y.shape[1]
        vj = self.V[j - 1, :]
        if N == 0:
            if outcome:
                raise CorruptedStateError(f"forced occupied outcome at site {j} has zero probability")
            return MeasurementOutcome(j, False, 1.0), Y
        r = vj @ Y
        p = float(np.vdot(r, r).real)
        if p > 1 + PROB_TOL:
            raise CorruptedStateError(f"occupation probability {p:.3e} at site {j}")
        p = min(p, 1.0)
        if outcome is None:
            if rng is None:
                raise ValueError("either rng or a forced outcome is required")
            outcome = bool(rng.random() < p)
        if p == 0.0:
            if outcome:
                raise CorruptedStateError(f"forced occupied outcome at site {j} has zero probability")
            return MeasurementOutcome(j, False, 1.0), Y

        y = r.conj()
        k = int(np.argmax(np.abs(y)))
        norm = np.sqrt(p)
        beta = -np.exp(1j * np.angle(y[k])) * norm
        u = y.copy()
        u[k] -= beta
        uu = np.vdot(u, u).real
        Y = Y.copy()
        if uu > 0.0:
            Y -= np.outer(Y @ u, u.conj()) * (2.0 / uu)
        a = vj @ Y[:, k]
        if outcome:
            Y[:, k] = vj
            prob = p
        else:
            rest = 1.0 - abs(a) ** 2
            if rest <= 0.0:
                raise CorruptedStateError(f"forced empty outcome at site {j} has zero probability")
            Y[:, k] = (Y[:, k] - a * vj) / np.sqrt(rest)
            prob = 1.0 - p
        return MeasurementOutcome(j, outcome, prob), Y

    def fill(self, Y: np.ndarray, sites) -> np.ndarray:
        """Add an orbital e_k for every listed (measured-empty) site."""
        if len(sites) == 0:
            return Y
        extra = self.V[np.asarray(sites) - 1, :].T.astype(complex)
        return np.concatenate([Y, extra], axis=1)

    def to_gaussian(self, Y: np.ndarray) -> GaussianState:
        return slater_state(self.V @ Y)

    def counting_function(self, Y: np.ndarray) -> CountingFunction:
        """chi(theta) = det(1_N + (e^{i theta} - 1) Y^+ Y) by Sylvester's identity."""
        thetas = counting_grid(self.L)
        g = np.clip(np.linalg.eigvalsh(Y.conj().T @ Y), 0.0, 1.0) if Y.shape[1] else np.zeros(0)
        z = np.exp(1j * thetas)[:, None]
        vals = np.prod(1.0 + (z - 1.0) * g[None, :], axis=1)
        return CountingFunction(thetas=thetas, values=vals)
