import numpy as np
import pytest
from _oracles import ManyBodyOracle, number_ops

from impuritylab import ChainSpec, ImpurityRegion, build_hopping
from impuritylab.errors import InvalidSpecError
from impuritylab.freeprop import return_probability
from impuritylab.monitored import (
    MonitoredConfig,
    placement_config,
    run_ensemble,
    run_trajectory,
    trajectory_rng,
)


def test_placement_conventions():
    b = placement_config(100, 0.1, 5, 1, 0)
    assert b.start_site == 1 and list(b.region.sites) == [1, 2, 3, 4, 5]
    k = placement_config(100, 0.1, 5, 1, 0, placement="bulk")
    assert k.start_site == 50 and list(k.region.sites) == [48, 49, 50, 51, 52]
    with pytest.raises(InvalidSpecError):
        placement_config(100, 0.1, 5, 1, 0, placement="corner")


def test_config_validation_collects_errors():
    with pytest.raises(InvalidSpecError) as info:
        MonitoredConfig(ChainSpec(10), ImpurityRegion(1, 5), p_m=1.5, steps=3, samples=0, seed=0, dt=-1)
    msg = str(info.value)
    assert "p_m" in msg and "dt" in msg and "samples" in msg


@pytest.mark.parametrize("placement", ["boundary", "bulk"])
def test_no_monitoring_is_free_return(placement):
    cfg = placement_config(60, 0.0, 40, 3, 1, placement=placement)
    res = run_ensemble(cfg)
    np.testing.assert_array_equal(res.N_series.mean, 1)
    ref = return_probability(build_hopping(ChainSpec(60)), cfg.region, cfg.start_site, res.N_series.times)
    np.testing.assert_allclose(res.Nimp_series.mean, ref.values, atol=1e-9)
    np.testing.assert_allclose(res.Nimp_series.stderr, 0, atol=1e-12)


def test_trajectory_monotone_and_bounded():
    cfg = placement_config(40, 0.7, 120, 8, 3, placement="bulk")
    for idx in range(cfg.samples):
        rec = run_trajectory(cfg, idx)
        assert np.all(np.diff(rec.N) >= 0) and rec.N[0] >= 1
        assert np.all(rec.N_imp <= np.minimum(5, rec.N) + 1e-9)
        # resets add exactly m - n_I particles and nothing else changes N
        jumps = np.diff(np.concatenate([[1], rec.N]))
        assert np.all(jumps[~rec.reset] == 0)


def test_first_step_reset_frequency_matches_oracle():
    # p_m = 1: a reset happens at step 1 iff the post-evolution cluster is not empty
    L, dt = 6, 0.5
    cfg = placement_config(L, 1.0, 1, 4000, 11, m=3, dt=dt)
    res = run_ensemble(cfg)
    freq = np.mean(res.reset_counts)
    orc = ManyBodyOracle(L)
    psi = np.zeros(2**L, dtype=complex)
    psi[1] = 1.0  # c_1^+|0>
    psi = orc.evolve(psi, dt)
    n = number_ops(L)
    P_empty = np.eye(2**L)
    for j in range(3):
        P_empty = P_empty @ (np.eye(2**L) - n[j])
    p_reset = 1 - np.vdot(psi, P_empty @ psi).real
    sigma = np.sqrt(p_reset * (1 - p_reset) / 4000)
    assert abs(freq - p_reset) < 4 * sigma


def test_trajectory_matches_manybody_oracle_replay():
    # replay the engine's outcomes in the exact 2^L simulation
    L = 6
    cfg = placement_config(L, 0.6, 12, 1, 5, m=3)
    rec = run_trajectory(cfg, 0)
    orc = ManyBodyOracle(L)
    n = number_ops(L)
    psi = np.zeros(2**L, dtype=complex)
    psi[1] = 1.0
    rng = trajectory_rng(cfg.seed, 0)
    for k in range(cfg.steps):
        psi = orc.evolve(psi, cfg.dt)
        if rng.random() < cfg.p_m:
            any_occ = False
            for j in cfg.region.sites:
                p = orc.prob_occupied(psi, j)
                occ = bool(rng.random() < p)
                psi = orc.project(psi, j, occ)
                any_occ |= occ
            if any_occ:
                psi = orc.fill(psi, cfg.region.sites)
        N = sum(np.vdot(psi, x @ psi).real for x in n)
        Nimp = sum(np.vdot(psi, n[j - 1] @ psi).real for j in cfg.region.sites)
        assert N == pytest.approx(rec.N[k], abs=1e-10)
        assert Nimp == pytest.approx(rec.N_imp[k], abs=1e-9)


def test_determinism_across_workers():
    cfg = placement_config(30, 0.5, 30, 6, 42, checkpoints=[10, 30])
    a = run_ensemble(cfg, workers=1)
    b = run_ensemble(cfg, workers=3)
    assert np.array_equal(a.N_trajectories, b.N_trajectories)
    assert a.Nimp_series.mean.tobytes() == b.Nimp_series.mean.tobytes()
    for t in a.distributions:
        assert a.distributions[t].tobytes() == b.distributions[t].tobytes()


def test_trajectories_differ_and_seed_matters():
    cfg = placement_config(30, 0.5, 50, 2, 1)
    r0, r1 = run_trajectory(cfg, 0), run_trajectory(cfg, 1)
    assert not np.array_equal(r0.N_imp, r1.N_imp)
    cfg2 = placement_config(30, 0.5, 50, 2, 2)
    assert not np.array_equal(run_trajectory(cfg2, 0).N_imp, r0.N_imp)


def test_stderr_definition():
    cfg = placement_config(30, 0.5, 20, 7, 3)
    res = run_ensemble(cfg)
    N = res.N_trajectories.astype(float)
    np.testing.assert_allclose(res.N_series.stderr, N.std(axis=0, ddof=1) / np.sqrt(7))
    single = run_ensemble(placement_config(30, 0.5, 20, 1, 3))
    np.testing.assert_array_equal(single.N_series.stderr, 0)


def test_distributions_are_normalized_and_consistent():
    cfg = placement_config(40, 0.5, 40, 20, 9, checkpoints=[0, 20, 40])
    res = run_ensemble(cfg)
    P0 = res.distributions[0.0]
    np.testing.assert_allclose(P0, np.eye(41)[1], atol=1e-12)
    for t, P in res.distributions.items():
        assert P.sum() == pytest.approx(1)
        step = int(round(t / cfg.dt))
        if step:
            mean_n = np.arange(41) @ P
            assert mean_n == pytest.approx(res.N_series.mean[step - 1], abs=1e-8)


@pytest.mark.slow
def test_distribution_time_dependence():
    # weak monitoring: distributions nearly collapse; strong: the peak moves up
    L = 100
    weak = run_ensemble(placement_config(L, 0.1, 200, 100, 4, checkpoints=[100, 200])).distributions
    strong = run_ensemble(placement_config(L, 0.9, 200, 50, 4, checkpoints=[100, 200])).distributions

    def tv(P, Q):
        return 0.5 * np.abs(P - Q).sum()

    assert tv(weak[50.0], weak[100.0]) < 0.2
    assert tv(strong[50.0], strong[100.0]) > 0.5
    assert np.argmax(strong[100.0]) > np.argmax(strong[50.0])
