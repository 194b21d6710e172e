"""Renewal equation for monitored return amplitudes, branching arithmetic and
the configuration-entropy estimate for operator growth."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import special

from .freeprop import V_MAX, PowerLawFit, ReturnSeries, fit_power_law

DEFAULT_GRID_DT = 0.1
DEFAULT_T_MAX = 500.0


@dataclass(frozen=True, eq=False)
class ReturnKernel:
    times: np.ndarray
    A0: np.ndarray
    A: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def probability(self) -> ReturnSeries:
        amp = self.A0 if self.A is None else self.A
        return ReturnSeries(self.times, np.abs(amp) ** 2)


def time_grid(t_max: float = DEFAULT_T_MAX, dt: float = DEFAULT_GRID_DT) -> np.ndarray:
    return dt * np.arange(int(round(t_max / dt)) + 1)


def bulk_kernel(times) -> np.ndarray:
    """Infinite-chain return amplitude J_0(2t)."""
    return special.jv(0, 2.0 * np.asarray(times, dtype=float)).astype(complex)


def boundary_kernel(times) -> np.ndarray:
    """Semi-infinite-chain edge amplitude J_1(2t)/t (equal to the quadrature in freeprop)."""
    t = np.asarray(times, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, special.jv(1, 2.0 * safe) / safe, 1.0).astype(complex)


def _check_uniform(times):
    times = np.asarray(times, dtype=float)
    if times.size > 2:
        d = np.diff(times)
        if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
            raise ValueError("renewal grid must be uniform")
    return times


def solve_renewal(A0, p_m: float, times=None, kernel=None) -> np.ndarray:
    """Forward solve of A_n = A0_n - p_m sum_{k<n} K_{n-k} A_k with K = A0 by default.

    The sum runs over grid points strictly before n (left endpoint rule), so
    each A_n depends only on earlier values. For a fixed kernel the solution
    is linear in the source A0.
    """
    A0 = np.asarray(A0, dtype=complex)
    K = A0 if kernel is None else np.asarray(kernel, dtype=complex)
    if K.shape != A0.shape:
        raise ValueError("kernel and source must share the same grid")
    if times is not None:
        times = _check_uniform(times)
        if times.shape != A0.shape:
            raise ValueError("A0 and times must share the same grid")
    if p_m == 0.0:
        return A0.copy()
    A = np.empty_like(A0)
    if A0.size == 0:
        return A
    A[0] = A0[0]
    for n in range(1, A0.size):
        A[n] = A0[n] - p_m * np.dot(K[n:0:-1], A[:n])
    return A


def renewal_kernel(kind: str, p_m: float, t_max: float = DEFAULT_T_MAX, dt: float = DEFAULT_GRID_DT) -> ReturnKernel:
    times = time_grid(t_max, dt)
    if kind == "bulk":
        A0 = bulk_kernel(times)
    elif kind == "boundary":
        A0 = boundary_kernel(times)
    else:
        raise ValueError(f"kernel must be 'bulk' or 'boundary', got {kind!r}")
    return ReturnKernel(times, A0, solve_renewal(A0, p_m))


def renewal_exponent(kernel: ReturnKernel, window=(20.0, 400.0)) -> PowerLawFit:
    return fit_power_law(kernel.probability(), window, envelope=True)


# branching arithmetic ----------------------------------------------------


def _check_probability(p_r):
    if not 0 <= p_r <= 1:
        raise ValueError(f"recurrence probability must lie in [0, 1], got {p_r}")


def recurrence_arithmetic(p_r):
    """Mean number of returns p_r / (1 - p_r); p_r = 1 gives math.inf.

    Fractions stay exact; floats use floating point.
    """
    _check_probability(p_r)
    if p_r == 1:
        return math.inf
    return p_r / (1 - p_r)


def recurrence_inverse(n_ret):
    """p_r = N_ret / (1 + N_ret)."""
    if n_ret < 0:
        raise ValueError(f"number of returns must be nonnegative, got {n_ret}")
    if n_ret == math.inf:
        return 1.0
    return n_ret / (1 + n_ret)


def branching_criterion(n_br, p_r, rel_tol: float = 1e-12) -> str:
    """Classify the branching product n_br * p_r against 1."""
    if n_br < 0 or p_r < 0:
        raise ValueError("branching inputs must be nonnegative")
    if isinstance(n_br, (int, Fraction)) and isinstance(p_r, (int, Fraction)):
        prod = Fraction(n_br) * Fraction(p_r)
        tie = prod == 1
    else:
        prod = float(n_br) * float(p_r)
        tie = math.isclose(prod, 1.0, rel_tol=rel_tol, abs_tol=0.0)
    if tie:
        return "critical"
    return "subcritical" if prod < 1 else "supercritical"


# configuration entropy ---------------------------------------------------


@dataclass(frozen=True)
class ConfigEntropyParams:
    xi: float
    t: float
    v: float = V_MAX


def config_entropy(params: ConfigEntropyParams) -> float:
    """S_conf = -sum P log P + sum P log Omega, P(l) ~ exp(-l/xi), Omega = C(n, l).

    l runs over 1..n with n = floor(v t).
    """
    xi, v, t = params.xi, params.v, params.t
    if xi <= 0:
        raise ValueError(f"correlation length must be positive, got {xi}")
    n = int(math.floor(v * t))
    if n < 1:
        raise ValueError(f"light cone v*t = {v * t:g} is below one site")
    if xi > 0.1 * v * t:
        warnings.warn(f"xi = {xi:g} is not small compared with v*t = {v * t:g}", stacklevel=2)
    ell = np.arange(1, n + 1, dtype=float)
    logw = -(ell - 1.0) / xi
    logZ = np.logaddexp.reduce(logw)
    logP = logw - logZ
    P = np.exp(logP)
    log_omega = special.gammaln(n + 1) - special.gammaln(ell + 1) - special.gammaln(n - ell + 1)
    return float(-np.sum(P * logP) + np.sum(P * log_omega))


def entropy_series(times, xi, v: float = V_MAX) -> np.ndarray:
    """S_conf(t) for a constant xi or a callable schedule xi(t)."""
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for t in np.asarray(times, dtype=float):
            x = xi(t) if callable(xi) else xi
            out.append(config_entropy(ConfigEntropyParams(xi=float(x), t=float(t), v=v)))
    return np.array(out)
