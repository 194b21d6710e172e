"""Single-particle propagators, return probabilities and power-law fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import InsufficientDataError, QuadratureError, UnsupportedHamiltonianError
from .lattice import ImpurityRegion, QuadraticHamiltonian

#: maximal group velocity of the 2 cos k band
V_MAX = 2.0

MIN_FIT_POINTS = 10


@dataclass(frozen=True)
class Propagator:
    matrix: np.ndarray
    time: float


@dataclass(frozen=True)
class ReturnSeries:
    times: np.ndarray
    values: np.ndarray
    t_edge: float | None = None


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    window: tuple
    r_squared: float
    n_points: int = 0


def _require_number_conserving(H: QuadraticHamiltonian):
    if not H.number_conserving:
        raise UnsupportedHamiltonianError(
            "pairing terms present; use opdyn.majorana_free_evolve for Bogoliubov dynamics"
        )


def propagator(H: QuadraticHamiltonian, t: float) -> Propagator:
    """U(t) = exp(-i h t) from the cached eigendecomposition of h."""
    _require_number_conserving(H)
    if t < 0:
        raise ValueError("propagator time must be nonnegative")
    evals, evecs = H.spectrum
    U = (evecs * np.exp(-1j * evals * t)) @ evecs.conj().T
    return Propagator(matrix=U, time=float(t))


def propagator_columns(H: QuadraticHamiltonian, rows, source: int, times) -> np.ndarray:
    """U_{j, source}(t) for 1-based ``rows`` and every t; shape (len(times), len(rows))."""
    _require_number_conserving(H)
    evals, evecs = H.spectrum
    rows0 = np.asarray(rows, dtype=int) - 1
    weights = evecs[rows0, :] * evecs[source - 1, :].conj()  # (m, L)
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, rows0.size), dtype=complex)
    chunk = max(1, 2**22 // max(evals.size, 1))
    for a in range(0, times.size, chunk):
        phases = np.exp(-1j * np.outer(times[a:a + chunk], evals))
        out[a:a + chunk] = phases @ weights.T
    return out


def bessel_amplitude(n, t):
    """Infinite-chain amplitude <j|exp(-i h t)|l> for n = j - l.

    Equals (-i)^n J_n(2t) for the +1 hopping convention used throughout.
    """
    n = np.asarray(n)
    phase = (-1j) ** np.mod(n, 4)
    out = phase * special.jv(n, 2.0 * np.asarray(t, dtype=float))
    return out[()] if np.ndim(out) == 0 else out


def boundary_amplitude(t: float, quadrature_tol: float = 1e-10) -> complex:
    """Semi-infinite-chain return amplitude at the edge site, by quadrature.

    The integrand oscillates with local period ~pi/t in k, so the interval
    [0, pi] is split into panels of that width before adaptive integration.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    n_panels = max(1, int(math.ceil(t)))
    edges = np.linspace(0.0, np.pi, n_panels + 1)
    tol = quadrature_tol / (2 * n_panels)

    def re(k):
        return np.sin(k) ** 2 * np.cos(2 * t * np.cos(k))

    def im(k):
        return -np.sin(k) ** 2 * np.sin(2 * t * np.cos(k))

    total = 0j
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        vr, er = integrate.quad(re, a, b, epsabs=tol, epsrel=0.0, limit=200)
        vi, ei = integrate.quad(im, a, b, epsabs=tol, epsrel=0.0, limit=200)
        total += vr + 1j * vi
        err += er + ei
    err *= 2 / np.pi
    if err > quadrature_tol:
        raise QuadratureError("boundary amplitude quadrature did not converge", err)
    return complex(2 / np.pi * total)


def boundary_amplitude_series(times, quadrature_tol: float = 1e-10) -> np.ndarray:
    return np.array([boundary_amplitude(t, quadrature_tol) for t in np.asarray(times, dtype=float)])


def edge_time(L: int, region: ImpurityRegion, source: int) -> float:
    """Time for the fastest mode to reach the nearest boundary not touching ``region``."""
    distances = []
    if region.start > 1:
        distances.append(source - 1)
    if region.stop < L:
        distances.append(L - source)
    if not distances:
        return math.inf
    return min(distances) / V_MAX


def return_probability(H: QuadraticHamiltonian, region: ImpurityRegion, source: int, times) -> ReturnSeries:
    """P_I(t) = sum_{j in I} |U_{j,source}(t)|^2 on the given time grid."""
    if not 1 <= source <= H.L:
        raise ValueError(f"source site {source} outside chain of {H.L} sites")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    amps = propagator_columns(H, list(region.sites), source, times)
    values = np.sum(np.abs(amps) ** 2, axis=1)
    return ReturnSeries(times=times, values=values, t_edge=edge_time(H.L, region, source))


def envelope_indices(values) -> np.ndarray:
    """Indices of strict local maxima; a flat top counts once, at its first point."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return np.empty(0, dtype=int)
    # collapse runs of equal values so plateaus behave like single points
    starts = np.concatenate(([0], np.flatnonzero(np.diff(v) != 0) + 1))
    runs = v[starts]
    if runs.size < 3:
        return np.empty(0, dtype=int)
    peak = (runs[1:-1] > runs[:-2]) & (runs[1:-1] > runs[2:])
    return starts[1:-1][peak]


def fit_power_law(series: ReturnSeries, window, envelope: bool = True) -> PowerLawFit:
    """Least-squares fit of log P against log t inside ``window``.

    With ``envelope`` the series is first reduced to its local maxima, which
    strips the Bessel-type oscillations riding on the power law.
    """
    t_min, t_max = float(window[0]), float(window[1])
    times = np.asarray(series.times, dtype=float)
    values = np.asarray(series.values, dtype=float)
    if t_min < times[0] or t_max > times[-1]:
        raise ValueError(f"window {window} outside series range [{times[0]}, {times[-1]}]")
    if series.t_edge is not None and t_max > series.t_edge:
        warnings.warn(
            f"fit window ends at t={t_max:g}, past the finite-size edge time {series.t_edge:g}",
            stacklevel=2,
        )
    idx = envelope_indices(values) if envelope else np.arange(values.size)
    sel = idx[(times[idx] >= t_min) & (times[idx] <= t_max)]
    sel = sel[values[sel] > 0]
    if sel.size < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"only {sel.size} usable points in window [{t_min:g}, {t_max:g}], need {MIN_FIT_POINTS}"
        )
    x = np.log(times[sel])
    y = np.log(values[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(
        exponent=float(slope),
        prefactor=float(np.exp(intercept)),
        window=(t_min, t_max),
        r_squared=float(min(r2, 1.0)),
        n_points=int(sel.size),
    )


def asymptotic_exponent(d: int, location: str) -> int:
    """Decay exponent alpha of P(t) ~ t^-alpha for a d-dimensional lattice."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if location == "bulk":
        return d
    if location == "boundary":
        return d + 2
    raise ValueError(f"location must be 'bulk' or 'boundary', got {location!r}")
