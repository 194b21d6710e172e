"""Monitored free fermions with reset feedback on a finite impurity cluster.

Each step: evolve under H_0 for ``dt``; with probability ``p_m`` measure the
occupation of every cluster site (ascending order); if any site was found
occupied, refill the whole cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .errors import CorruptedStateError, InvalidSpecError
from .gaussian import CountingFunction, SlaterEngine, counting_grid, number_distribution
from .lattice import DEFAULT_REGION_SIZE, ChainSpec, ImpurityRegion, build_hopping

DEFAULT_DT = 0.5


@dataclass(frozen=True)
class MonitoredConfig:
    chain: ChainSpec
    region: ImpurityRegion
    p_m: float
    steps: int
    samples: int
    seed: int
    dt: float = DEFAULT_DT
    initial_site: int | None = None
    distribution_checkpoints: tuple = ()

    def __post_init__(self):
        errors = []
        if not 0.0 <= self.p_m <= 1.0:
            errors.append(f"p_m must lie in [0, 1], got {self.p_m}")
        if self.dt <= 0:
            errors.append(f"dt must be positive, got {self.dt}")
        if self.samples < 1:
            errors.append(f"samples must be >= 1, got {self.samples}")
        if self.steps < 0:
            errors.append(f"steps must be >= 0, got {self.steps}")
        if self.region.stop > self.chain.L:
            errors.append(f"region {self.region.start}..{self.region.stop} exceeds L={self.chain.L}")
        for c in self.distribution_checkpoints:
            if not 0 <= c <= self.steps:
                errors.append(f"checkpoint step {c} outside 0..{self.steps}")
        if errors:
            raise InvalidSpecError("; ".join(errors))

    @property
    def start_site(self) -> int:
        return self.initial_site if self.initial_site is not None else self.region.start


def placement_config(L, p_m, steps, samples, seed, placement="boundary", m=DEFAULT_REGION_SIZE,
                     dt=DEFAULT_DT, checkpoints=()) -> MonitoredConfig:
    """Boundary runs start at site 1 with region {1..m}; bulk runs start at
    floor(L/2) with the region centred on it."""
    chain = ChainSpec(L)
    if placement == "boundary":
        site = 1
        start = 1
    elif placement == "bulk":
        site = L // 2
        start = site - (m - 1) // 2
    else:
        raise InvalidSpecError(f"placement must be 'boundary' or 'bulk', got {placement!r}")
    region = ImpurityRegion(start=start, size=m, L=L)
    return MonitoredConfig(chain=chain, region=region, p_m=p_m, steps=steps, samples=samples, seed=seed,
                           dt=dt, initial_site=site, distribution_checkpoints=tuple(checkpoints))


@dataclass
class TrajectoryRecord:
    index: int
    N: np.ndarray
    N_imp: np.ndarray
    reset: np.ndarray
    chi: dict = field(default_factory=dict)


@dataclass
class TimeSeries:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


@dataclass
class EnsembleResult:
    config: MonitoredConfig
    steps: np.ndarray
    N_series: TimeSeries
    Nimp_series: TimeSeries
    distributions: dict
    N_trajectories: np.ndarray
    reset_counts: np.ndarray


@lru_cache(maxsize=8)
def _engine(L: int, dt: float) -> SlaterEngine:
    return SlaterEngine(build_hopping(ChainSpec(L)), dt)


def trajectory_rng(seed: int, trajectory_index: int) -> np.random.Generator:
    """Independent stream per trajectory, derived from (seed, index) only."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trajectory_index),))
    return np.random.Generator(np.random.PCG64(ss))


def run_trajectory(config: MonitoredConfig, trajectory_index: int) -> TrajectoryRecord:
    """Simulate one measurement record; entry k describes the state after step k+1."""
    engine = _engine(config.chain.L, float(config.dt))
    rng = trajectory_rng(config.seed, trajectory_index)
    sites = list(config.region.sites)
    checkpoints = set(config.distribution_checkpoints)
    n = config.steps
    N = np.empty(n, dtype=np.int64)
    N_imp = np.empty(n)
    reset = np.zeros(n, dtype=bool)
    chi = {}
    Y = engine.single_particle(config.start_site)
    if 0 in checkpoints:
        chi[0] = engine.counting_function(Y).values
    try:
        for k in range(n):
            Y = engine.evolve(Y)
            if config.p_m > 0.0 and rng.random() < config.p_m:
                empty = []
                for j in sites:
                    outcome, Y = engine.measure(Y, j, rng)
                    if not outcome.occupied:
                        empty.append(j)
                if len(empty) < len(sites):
                    Y = engine.fill(Y, empty)
                    reset[k] = True
            N[k] = Y.shape[1]
            N_imp[k] = engine.occupations(Y, sites).sum()
            if k + 1 in checkpoints:
                chi[k + 1] = engine.counting_function(Y).values
    except CorruptedStateError as exc:
        raise CorruptedStateError(str(exc), trajectory_index=trajectory_index) from exc
    return TrajectoryRecord(index=trajectory_index, N=N, N_imp=N_imp, reset=reset, chi=chi)


def _run_one(config, idx):
    # pin BLAS to one thread so results do not depend on the worker layout
    with threadpool_limits(limits=1):
        return run_trajectory(config, idx)


def _stderr(x: np.ndarray) -> np.ndarray:
    if x.shape[0] < 2:
        return np.zeros(x.shape[1:])
    return x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


def run_ensemble(config: MonitoredConfig, workers: int = 1) -> EnsembleResult:
    """Average ``config.samples`` trajectories; output is independent of ``workers``."""
    if workers == 1:
        records = [_run_one(config, i) for i in range(config.samples)]
    else:
        records = Parallel(n_jobs=workers)(delayed(_run_one)(config, i) for i in range(config.samples))
    records.sort(key=lambda r: r.index)
    N = np.stack([r.N for r in records]) if config.steps else np.zeros((config.samples, 0))
    Nimp = np.stack([r.N_imp for r in records]) if config.steps else np.zeros((config.samples, 0))
    steps = np.arange(1, config.steps + 1)
    times = steps * config.dt
    dists = {}
    for c in sorted(config.distribution_checkpoints):
        chi = np.mean([r.chi[c] for r in records], axis=0)
        dists[c * config.dt] = number_distribution(CountingFunction(counting_grid(config.chain.L), chi))
    return EnsembleResult(
        config=config,
        steps=steps,
        N_series=TimeSeries(times, N.mean(axis=0), _stderr(N.astype(float))),
        Nimp_series=TimeSeries(times, Nimp.mean(axis=0), _stderr(Nimp)),
        distributions=dists,
        N_trajectories=N,
        reset_counts=np.array([r.reset.sum() for r in records]),
    )
