"""Heisenberg operator dynamics on small chains and free Majorana evolution.

Operators are dense 2^L x 2^L matrices in the occupation basis with the
Jordan-Wigner ordering of :mod:`exactmb` (site s is bit s-1), which makes
them identical to their spin-chain representation. Single-site weights use
the orthonormal basis {I/sqrt2, eta/sqrt2, sigma+, sigma-} with eta = 1 - 2N.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import InvalidSpecError, ResourceError
from .exactmb import SparseAction, enumerate_basis
from .freeprop import V_MAX
from .lattice import ImpuritySpec, QuadraticHamiltonian

#: largest chain for dense interacting operator evolution
OPERATOR_MAX_L = 12


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    mat: np.ndarray
    hs_norm_sq: float

    @classmethod
    def from_matrix(cls, mat) -> "OperatorMatrix":
        mat = np.asarray(mat)
        return cls(mat, float(np.vdot(mat, mat).real / mat.shape[0]))

    @property
    def L(self) -> int:
        return int(self.mat.shape[0]).bit_length() - 1

    def current_norm_sq(self) -> float:
        return float(np.vdot(self.mat, self.mat).real / self.mat.shape[0])


@dataclass(frozen=True)
class LocalWeights:
    w_I: float
    w_eta: float
    w_plus: float
    w_minus: float

    @property
    def w(self) -> float:
        return self.w_plus + self.w_minus

    def total(self) -> float:
        return self.w_I + self.w_eta + self.w_plus + self.w_minus


@dataclass(frozen=True)
class FloquetSpec:
    omega: float

    def __post_init__(self):
        if not self.omega > 0:
            raise InvalidSpecError(f"Floquet frequency must be positive, got {self.omega}")

    @property
    def period(self) -> float:
        return 2.0 / self.omega


@dataclass
class WeightSeries:
    times: np.ndarray
    weights: list
    entropy: np.ndarray | None = None

    @property
    def w(self) -> np.ndarray:
        return np.array([x.w for x in self.weights])


def _check_size(L: int):
    if L > OPERATOR_MAX_L:
        need = 16 * 4**L * 4
        raise ResourceError(
            f"dense operator evolution is capped at L={OPERATOR_MAX_L}, got L={L}", required_bytes=need
        )


def hamiltonian_matrix(L: int, impurity: ImpuritySpec | None = None, hopping: float = 1.0) -> np.ndarray:
    """Dense H_0 + H_imp on the full 2^L Fock space (real symmetric)."""
    _check_size(L)
    basis = enumerate_basis(L, "full", memory_budget=None)
    return SparseAction(basis, impurity, hopping=hopping).to_sparse().toarray()


def number_operator(L: int, i: int) -> OperatorMatrix:
    words = np.arange(2**L)
    return OperatorMatrix.from_matrix(np.diag(((words >> (i - 1)) & 1).astype(float)))


def normalized(O: OperatorMatrix) -> OperatorMatrix:
    return OperatorMatrix(O.mat / np.sqrt(O.hs_norm_sq), 1.0)


class HeisenbergPropagator:
    """O -> e^{iHt} O e^{-iHt} from one eigendecomposition of H."""

    def __init__(self, H: np.ndarray):
        H = np.asarray(H)
        _check_size(H.shape[0].bit_length() - 1)
        self.energies, self.vectors = np.linalg.eigh(H)

    def _to_eigen(self, O: np.ndarray) -> np.ndarray:
        V = self.vectors
        return V.conj().T @ O @ V

    def _from_eigen(self, Ot: np.ndarray) -> np.ndarray:
        V = self.vectors
        return V @ Ot @ V.conj().T

    def evolve(self, O: OperatorMatrix, t: float) -> OperatorMatrix:
        return next(iter(self.series(O, [t])))

    def series(self, O: OperatorMatrix, times):
        """Yield O(t) for each t; the eigenbasis transform of O is done once."""
        Oe = self._to_eigen(O.mat)
        for t in times:
            ph = np.exp(1j * self.energies * t)
            yield OperatorMatrix(self._from_eigen(ph[:, None] * Oe * ph.conj()[None, :]), O.hs_norm_sq)

    def unitary(self, t: float) -> np.ndarray:
        V = self.vectors
        return (V * np.exp(-1j * self.energies * t)) @ V.conj().T


def heisenberg_evolve(O: OperatorMatrix, L: int, impurity: ImpuritySpec | None, t: float) -> OperatorMatrix:
    return HeisenbergPropagator(hamiltonian_matrix(L, impurity)).evolve(O, t)


def _site_blocks(mat: np.ndarray, i: int):
    L = mat.shape[0].bit_length() - 1
    hi, lo = 2 ** (L - i), 2 ** (i - 1)
    T = mat.reshape(hi, 2, lo, hi, 2, lo)
    return T[:, 0, :, :, 0, :], T[:, 0, :, :, 1, :], T[:, 1, :, :, 0, :], T[:, 1, :, :, 1, :]


def local_weights(O: OperatorMatrix, i: int) -> LocalWeights:
    """Squared overlaps of O with {I, eta, sigma+, sigma-} on site i, summed over the rest."""
    B00, B01, B10, B11 = _site_blocks(O.mat, i)
    norm = O.hs_norm_sq * O.mat.shape[0]

    def sq(x):
        return float(np.vdot(x, x).real)

    return LocalWeights(
        w_I=sq(B00 + B11) / (2 * norm),
        w_eta=sq(B00 - B11) / (2 * norm),
        w_plus=sq(B10) / norm,
        w_minus=sq(B01) / norm,
    )


def operator_entanglement(O: OperatorMatrix, cut: int) -> float:
    """Entropy of the vectorized operator across the bond between sites cut and cut+1."""
    mat = O.mat
    L = mat.shape[0].bit_length() - 1
    if not 0 <= cut <= L:
        raise ValueError(f"cut must lie in 0..{L}")
    if cut in (0, L):
        return 0.0
    nB = L - cut
    # row index = (sites L..cut+1, sites cut..1); same for columns
    T = mat.reshape(2**nB, 2**cut, 2**nB, 2**cut).transpose(1, 3, 0, 2).reshape(4**cut, 4**nB)
    s = np.linalg.svd(T, compute_uv=False)
    p = s**2 / np.sum(s**2)
    p = p[p > 1e-300]
    return max(0.0, float(-np.sum(p * np.log(p))))


def weight_series(L: int, impurity: ImpuritySpec | None, site: int, times, entanglement_cut: int | None = None,
                  observable: OperatorMatrix | None = None) -> WeightSeries:
    """Evolve O(0) = N_site (default) and record local weights at ``site``."""
    O = normalized(observable if observable is not None else number_operator(L, site))
    prop = HeisenbergPropagator(hamiltonian_matrix(L, impurity))
    times = np.asarray(times, dtype=float)
    weights, ent = [], []
    for Ot in prop.series(O, times):
        weights.append(local_weights(Ot, site))
        if entanglement_cut is not None:
            ent.append(operator_entanglement(Ot, entanglement_cut))
    return WeightSeries(times, weights, np.array(ent) if entanglement_cut is not None else None)


def parity_breaking_w(delta: float, L: int, times, site: int = 1) -> np.ndarray:
    """w(t) for O(0) = N_site under H_0 + delta (c_i^+ c_{i+1}^+ c_{i+2} + h.c.)."""
    imp = ImpuritySpec("parity_breaking", delta, site, L)
    return weight_series(L, imp, site, times).w


def free_weight_identity(U_ii) -> np.ndarray:
    """w(t) of the free evolution of N_i in terms of the return amplitude U_ii."""
    p = np.abs(np.asarray(U_ii)) ** 2
    return p * (1.0 - p)


# Floquet ---------------------------------------------------------------


class FloquetMap:
    """Stroboscopic Heisenberg map O -> U_F^+ O U_F, U_F = e^{-iH_0/w} e^{-iH_imp/w}."""

    def __init__(self, L: int, impurity: ImpuritySpec | None, spec: FloquetSpec):
        self.spec = spec
        tau = 1.0 / spec.omega
        U0 = HeisenbergPropagator(hamiltonian_matrix(L, None)).unitary(tau)
        if impurity is None or impurity.strength == 0.0:
            self.U = U0
        else:
            Himp = hamiltonian_matrix(L, impurity, hopping=0.0)
            Uimp = HeisenbergPropagator(Himp).unitary(tau)
            self.U = U0 @ Uimp

    def step(self, O: OperatorMatrix) -> OperatorMatrix:
        return OperatorMatrix(self.U.conj().T @ O.mat @ self.U, O.hs_norm_sq)

    def series(self, O: OperatorMatrix, n_steps: int):
        """Yield (n T_F, O(n T_F)) for n = 0..n_steps."""
        yield 0.0, O
        for n in range(1, n_steps + 1):
            O = self.step(O)
            yield n * self.spec.period, O


def floquet_step(O: OperatorMatrix, L: int, impurity: ImpuritySpec | None, omega: float) -> OperatorMatrix:
    return FloquetMap(L, impurity, FloquetSpec(omega)).step(O)


def floquet_weight_series(L: int, impurity: ImpuritySpec | None, site: int, omega: float, n_steps: int,
                          entanglement_cut: int | None = None) -> WeightSeries:
    fmap = FloquetMap(L, impurity, FloquetSpec(omega))
    times, weights, ent = [], [], []
    for t, Ot in fmap.series(normalized(number_operator(L, site)), n_steps):
        times.append(t)
        weights.append(local_weights(Ot, site))
        if entanglement_cut is not None:
            ent.append(operator_entanglement(Ot, entanglement_cut))
    return WeightSeries(np.array(times), weights, np.array(ent) if entanglement_cut is not None else None)


# free Majorana evolution -------------------------------------------------


def majorana_generator(H: QuadraticHamiltonian) -> np.ndarray:
    """Real antisymmetric A with H = (i/4) sum_kl A_kl g_k g_l + const.

    Majoranas are ordered (a_1..a_L, b_1..b_L) with a = c + c^+ and
    b = i(c^+ - c); the Heisenberg equation is then dg/dt = A g.
    """
    L = H.L
    I = np.eye(L)
    Winv = 0.5 * np.block([[I, 1j * I], [I, -1j * I]])
    M = Winv.conj().T @ H.bdg() @ Winv
    return 2.0 * M.imag


def creation_coefficients(L: int, site: int = 1) -> np.ndarray:
    """Unit-norm Majorana coefficients of sqrt(2) c_site^+ = (a - i b)/sqrt(2)."""
    v = np.zeros(2 * L, dtype=complex)
    v[site - 1] = 1 / np.sqrt(2)
    v[L + site - 1] = -1j / np.sqrt(2)
    return v


@dataclass
class MajoranaSeries:
    times: np.ndarray
    w: np.ndarray
    t_edge: float


def majorana_free_evolve(H: QuadraticHamiltonian, times, site: int = 1, coeffs=None) -> MajoranaSeries:
    """Weight of the evolved c_site^+ on the two Majoranas of ``site``.

    With g(t) = R g, R = e^{At}, an operator sum_m v_m g_m evolves to
    sum_l (R^T v)_l g_l; only the two site components are formed.
    """
    L = H.L
    A = majorana_generator(H)
    lam, Q = np.linalg.eigh(1j * A)  # A = -i Q diag(lam) Q^+
    v0 = creation_coefficients(L, site) if coeffs is None else np.asarray(coeffs, dtype=complex)
    c = Q.conj().T @ v0
    rows = Q[[site - 1, L + site - 1], :]
    times = np.asarray(times, dtype=float)
    # R^T = e^{-At} = Q diag(e^{i lam t}) Q^+
    amps = (rows[None, :, :] * np.exp(1j * np.outer(times, lam))[:, None, :]) @ c
    w = np.sum(np.abs(amps) ** 2, axis=1)
    return MajoranaSeries(times=times, w=w, t_edge=(L - site) / V_MAX)


def majorana_norm(H: QuadraticHamiltonian, t: float, coeffs) -> float:
    """Total squared coefficient weight after free evolution (conserved)."""
    R = expm(majorana_generator(H) * t)
    v = R.T @ np.asarray(coeffs, dtype=complex)
    return float(np.vdot(v, v).real)
