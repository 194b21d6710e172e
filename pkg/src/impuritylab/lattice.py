"""Chains, quadratic Hamiltonians and impurity descriptors.

Site indices are 1-based everywhere in the public interface. The hopping
amplitude is fixed to 1, so time is measured in inverse-hopping units.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidSpecError

#: number of consecutive sites each impurity variant acts on
SUPPORT_WIDTH = {"density2": 2, "density3": 3, "raise3": 4, "parity_breaking": 3}

#: default monitored cluster size
DEFAULT_REGION_SIZE = 5


@dataclass(frozen=True)
class ChainSpec:
    L: int
    boundary: str = "open"
    d: int = 1

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise InvalidSpecError(f"chain length must be an integer >= 2, got L={self.L}")
        if self.boundary != "open":
            raise InvalidSpecError(f"only open boundaries are supported, got {self.boundary!r}")
        if int(self.d) != self.d or self.d < 1:
            raise InvalidSpecError(f"dimension must be a positive integer, got d={self.d}")


@dataclass(frozen=True, eq=False)
class QuadraticHamiltonian:
    """H = sum_jk h_jk c_j^+ c_k + 1/2 sum_jk (D_jk c_j^+ c_k^+ + h.c.).

    ``hopping`` already contains the chemical potential on its diagonal;
    ``chemical`` records the value for reporting. ``pairing`` is None for
    number-conserving Hamiltonians.
    """

    hopping: np.ndarray
    pairing: np.ndarray | None = None
    chemical: float = 0.0
    pairing_strength: float = 0.0

    def __post_init__(self):
        h = self.hopping
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidSpecError("hopping matrix must be square")
        if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-12:
            raise InvalidSpecError("hopping matrix is not Hermitian")
        if self.pairing is not None:
            p = self.pairing
            if p.shape != h.shape:
                raise InvalidSpecError("pairing and hopping shapes differ")
            if np.max(np.abs(p + p.T), initial=0.0) > 1e-12:
                raise InvalidSpecError("pairing matrix is not antisymmetric")
        h.setflags(write=False)
        if self.pairing is not None:
            self.pairing.setflags(write=False)

    @property
    def L(self) -> int:
        return self.hopping.shape[0]

    @property
    def number_conserving(self) -> bool:
        return self.pairing is None

    @cached_property
    def spectrum(self):
        """Eigenvalues and eigenvectors of the hopping matrix, computed once."""
        evals, evecs = np.linalg.eigh(self.hopping)
        evals.setflags(write=False)
        evecs.setflags(write=False)
        return evals, evecs

    def bdg(self) -> np.ndarray:
        """2L x 2L Bogoliubov-de Gennes matrix in the (c, c^+) basis.

        H = 1/2 Psi^+ H_BdG Psi + const with Psi = (c_1..c_L, c_1^+..c_L^+).
        """
        h = np.asarray(self.hopping, dtype=complex)
        D = np.zeros_like(h) if self.pairing is None else np.asarray(self.pairing, dtype=complex)
        return np.block([[h, D], [D.conj().T, -h.T]])

    def phase(self) -> str:
        """Kitaev phase label: 'topological', 'critical' or 'trivial'."""
        if self.pairing_strength == 0.0:
            return "trivial"
        mu = abs(self.chemical)
        if mu < 2.0:
            return "topological"
        if mu == 2.0:
            return "critical"
        return "trivial"

    def is_topological(self) -> bool:
        return self.phase() == "topological"


def build_hopping(spec: ChainSpec) -> QuadraticHamiltonian:
    """Open-chain nearest-neighbour hopping matrix with unit amplitude."""
    L = spec.L
    h = np.zeros((L, L))
    idx = np.arange(L - 1)
    h[idx, idx + 1] = 1.0
    h[idx + 1, idx] = 1.0
    return QuadraticHamiltonian(hopping=h)


def build_kitaev(spec: ChainSpec, mu: float, lam: float) -> QuadraticHamiltonian:
    """Hopping chain plus ``mu * N_j`` onsite and ``lam`` nearest-neighbour pairing."""
    base = build_hopping(spec)
    h = base.hopping + mu * np.eye(spec.L)
    if lam == 0.0:
        pairing = None
    else:
        L = spec.L
        pairing = np.zeros((L, L))
        idx = np.arange(L - 1)
        pairing[idx, idx + 1] = lam
        pairing[idx + 1, idx] = -lam
    return QuadraticHamiltonian(hopping=h, pairing=pairing, chemical=float(mu), pairing_strength=float(lam))


@dataclass(frozen=True)
class ImpurityRegion:
    start: int
    size: int
    L: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.size < 1:
            raise InvalidSpecError(f"region size must be positive, got {self.size}")
        if self.start < 1:
            raise InvalidSpecError(f"region start must be >= 1, got {self.start}")
        if self.L and self.stop > self.L:
            raise InvalidSpecError(
                f"region {self.start}..{self.stop} does not fit in a chain of {self.L} sites"
            )

    @property
    def stop(self) -> int:
        """Last site of the region (inclusive)."""
        return self.start + self.size - 1

    @property
    def sites(self) -> range:
        return range(self.start, self.stop + 1)

    def index_array(self) -> np.ndarray:
        """0-based positions for array indexing."""
        return np.arange(self.start - 1, self.stop)

    def __contains__(self, site) -> bool:
        return self.start <= site <= self.stop


def impurity_region(i: int, m: int = DEFAULT_REGION_SIZE, spec: ChainSpec | None = None) -> ImpurityRegion:
    L = spec.L if spec is not None else 0
    return ImpurityRegion(start=int(i), size=int(m), L=L)


@dataclass(frozen=True)
class ImpuritySpec:
    """Local interaction anchored at ``site`` (1-based).

    density2         Delta N_i N_{i+1}
    density3         Delta N_i N_{i+1} N_{i+2}
    raise3           Delta (c_i^+ c_{i+1}^+ c_{i+2}^+ c_{i+3} + h.c.)
    parity_breaking  Delta (c_i^+ c_{i+1}^+ c_{i+2} + h.c.)
    """

    variant: str
    strength: float
    site: int
    L: int | None = None

    def __post_init__(self):
        if self.variant not in SUPPORT_WIDTH:
            raise InvalidSpecError(
                f"unknown impurity variant {self.variant!r}; expected one of {sorted(SUPPORT_WIDTH)}"
            )
        if self.site < 1:
            raise InvalidSpecError(f"impurity site must be >= 1, got {self.site}")
        if self.L is not None and self.site + self.width - 1 > self.L:
            raise InvalidSpecError(
                f"{self.variant} impurity at site {self.site} needs {self.width} sites, chain has {self.L}"
            )

    @property
    def width(self) -> int:
        return SUPPORT_WIDTH[self.variant]

    @property
    def support(self) -> range:
        return range(self.site, self.site + self.width)

    @property
    def conserves_parity(self) -> bool:
        return self.variant != "parity_breaking"

    @property
    def conserves_number(self) -> bool:
        return self.variant in ("density2", "density3")

    def region(self) -> ImpurityRegion:
        return ImpurityRegion(start=self.site, size=self.width, L=self.L or 0)
