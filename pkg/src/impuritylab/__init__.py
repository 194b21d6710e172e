"""Impurity-induced growth and scrambling in clean free-fermion chains."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CorruptedStateError,
    ImpurityLabError,
    InsufficientDataError,
    InvalidSpecError,
    NumericalContractError,
    QuadratureError,
    ResourceError,
    SectorError,
    UnsupportedHamiltonianError,
)
from .lattice import (
    ChainSpec,
    ImpurityRegion,
    ImpuritySpec,
    QuadraticHamiltonian,
    build_hopping,
    build_kitaev,
    impurity_region,
)

__all__ = [
    "ChainSpec",
    "ConfigError",
    "CorruptedStateError",
    "ImpurityLabError",
    "ImpurityRegion",
    "ImpuritySpec",
    "InsufficientDataError",
    "InvalidSpecError",
    "NumericalContractError",
    "QuadraticHamiltonian",
    "QuadratureError",
    "ResourceError",
    "SectorError",
    "UnsupportedHamiltonianError",
    "build_hopping",
    "build_kitaev",
    "impurity_region",
]
