import math
import warnings

import numpy as np
import pytest
from scipy.stats import kstest

from attrition import equilibrium as eq
from attrition import stopping
from attrition.diffusion import DiffusionSpec, resolve_truncation
from attrition.simulate import (
    SimConfig,
    SimulationError,
    estimate_values,
    indifference_diagnostic,
    play_game,
    simulate_paths,
)


class ConstHazard:
    def __init__(self, c):
        self.c = c

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.c)


def test_paths_deterministic_mode_exact_flow():
    import dataclasses
    spec = dataclasses.replace(DiffusionSpec.abm(-0.2, 0.0), deterministic=True).with_truncation(-10, 5)
    cfg = SimConfig(x0=1.0, n_paths=3, dt=0.01, horizon=2.0, seed=1)
    t, X, touched = simulate_paths(spec, cfg).to_array()
    assert np.allclose(X, 1.0 - 0.2 * t[None, :], atol=1e-12)
    assert not touched.any()


def test_paths_wiener_moments():
    spec = resolve_truncation(DiffusionSpec.abm(0.0, 1.0), 0.5, center=0.0)
    cfg = SimConfig(x0=0.0, n_paths=20000, dt=1e-2, horizon=1.0, seed=7)
    _, X, _ = simulate_paths(spec, cfg).to_array()
    xt = X[:, -1]
    se = xt.std(ddof=1) / math.sqrt(len(xt))
    assert abs(xt.mean()) <= 3 * se
    var_se = math.sqrt(2 / (len(xt) - 1))  # variance-of-variance for gaussians
    assert abs(xt.var(ddof=1) - 1.0) <= 3 * var_se


def test_paths_fixed_seed_reproducible():
    spec = resolve_truncation(DiffusionSpec.abm(-0.1, 1.0), 0.2, center=0.0)
    cfg = SimConfig(x0=0.5, n_paths=500, dt=1e-2, horizon=0.5, seed=42)
    _, x1, _ = simulate_paths(spec, cfg).to_array()
    _, x2, _ = simulate_paths(spec, cfg).to_array()
    assert np.array_equal(x1, x2)


def test_antithetic_pairs_mirror():
    spec = resolve_truncation(DiffusionSpec.abm(0.0, 1.0), 0.5, center=0.0)
    cfg = SimConfig(x0=0.0, n_paths=10, dt=1e-2, horizon=0.1, seed=3, antithetic=True)
    _, X, _ = simulate_paths(spec, cfg).to_array()
    assert np.allclose(X[0::2], -X[1::2], atol=1e-14)


def test_materialization_guard():
    spec = resolve_truncation(DiffusionSpec.abm(0.0, 1.0), 0.5, center=0.0)
    cfg = SimConfig(x0=0.0, n_paths=200_000, dt=1e-4, horizon=100.0, seed=3)
    with pytest.raises(SimulationError):
        simulate_paths(spec, cfg).to_array()


def test_constant_hazard_exponential_law(abm_model):
    profile = eq.StrategyProfile(eq.Strategy(hazard=ConstHazard(0.5)), eq.never_exit())
    cfg = SimConfig(x0=2.0, n_paths=100_000, dt=1e-2, horizon=40.0, seed=3)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    alive = out.winner != -1
    # state-independent hazard: the game length is exactly exponential
    stat = kstest(out.exit_time[alive], "expon", args=(0, 2.0))
    assert stat.pvalue > 0.01
    assert np.all(out.winner[alive] == 2)  # firm 1 exits, firm 2 wins


def test_atom_fires_with_its_probability(abm_model):
    level, q = -0.5, 0.35
    profile = eq.StrategyProfile(eq.Strategy(atoms=(eq.Atom(level, q),)), eq.never_exit())
    cfg = SimConfig(x0=1.0, n_paths=40_000, dt=2e-3, horizon=120.0, seed=11)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    fired = np.sum(out.winner == 2)  # atom fired at the first hit, firm 2 won
    n = out.n
    se = math.sqrt(q * (1 - q) / n)
    assert fired / n == pytest.approx(q, abs=3 * se)


def test_tie_accounting(abm_model):
    th = -1.05
    profile = eq.StrategyProfile(eq.Strategy(exit_threshold=th), eq.Strategy(exit_threshold=th))
    cfg = SimConfig(x0=0.0, n_paths=20_000, dt=2e-3, horizon=400.0, seed=11)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    ties = out.winner == 0
    assert ties.mean() > 0.99
    split = (out.prize_to[ties] == 1).mean()
    assert split == pytest.approx(0.5, abs=3 * math.sqrt(0.25 / ties.sum()))
    # shared flow cancels in the payoff difference, leaving the discounted
    # coin-average (l1 - l2)/2 of the split-the-prize rule
    disc = np.exp(-abm_model.r(1) * out.exit_time[ties])
    diff = np.mean(out.pay1[ties] - out.pay2[ties])
    expected = np.mean(disc) * 0.5 * (abm_model.l_const(1) - abm_model.l_const(2))
    assert diff == pytest.approx(expected, abs=0.02)


def test_initial_state_inside_exit_region(abm_model):
    sol2 = stopping.optimal_threshold(abm_model, 2)
    profile, _ = eq.pure_mpe_weak_exits(abm_model)
    cfg = SimConfig(x0=sol2.threshold - 1.0, n_paths=100, dt=1e-2, horizon=10.0, seed=5)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    assert np.all(out.exit_time == 0.0)
    assert np.all(out.winner == 1)  # firm 2 exits immediately, firm 1 collects the prize
    w0 = float(abm_model.firms[1].winner(cfg.x0))
    assert np.allclose(out.pay1, w0)
    assert np.allclose(out.pay2, abm_model.l_const(2))


def test_pure_weak_values_match_closed_form(abm_model):
    profile, _ = eq.pure_mpe_weak_exits(abm_model)
    th2 = profile.firm2.exit_threshold
    x0 = th2 + 0.5
    v1 = eq._waiting_value(abm_model, 1, th2, x0)
    v2 = stopping.single_player_value(abm_model, 2, x0)
    cfg = SimConfig(x0=x0, n_paths=30_000, dt=4e-3, horizon=500.0, seed=42, bridge_correction=True)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_values(out, abm_model)
    assert est[1].mean == pytest.approx(v1, abs=3 * est[1].se)
    assert est[2].mean == pytest.approx(v2, abs=3 * est[2].se)


def test_dt_refinement_stability(abm_model):
    profile, _ = eq.pure_mpe_weak_exits(abm_model)
    x0 = profile.firm2.exit_threshold + 0.4
    means = {}
    ses = {}
    for dt in (4e-3, 2e-3):
        cfg = SimConfig(x0=x0, n_paths=40_000, dt=dt, horizon=500.0, seed=9, bridge_correction=True)
        out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = estimate_values(out, abm_model)
        means[dt], ses[dt] = est[1].mean, est[1].se
    combined = ses[4e-3] + ses[2e-3]
    assert abs(means[4e-3] - means[2e-3]) < combined


def test_estimate_values_censoring_policies(abm_model):
    profile = eq.StrategyProfile(eq.Strategy(hazard=ConstHazard(0.02)), eq.never_exit())
    cfg = SimConfig(x0=2.0, n_paths=4000, dt=1e-2, horizon=20.0, seed=5)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    assert out.n_censored > 0
    with pytest.warns(UserWarning):
        est = estimate_values(out, abm_model, censored="exclude")
    assert est[1].bounds is None
    est_b = estimate_values(out, abm_model, censored="bound")
    lo, hi = est_b[1].bounds
    assert lo <= hi


def test_all_censored_raises(abm_model):
    profile = eq.StrategyProfile(eq.never_exit(), eq.never_exit())
    cfg = SimConfig(x0=2.0, n_paths=50, dt=1e-2, horizon=1.0, seed=5)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    with pytest.raises(SimulationError):
        estimate_values(out, abm_model)


def test_indifference_diagnostic_homogeneous(homogeneous_model):
    mix = eq.mixed_mpe_analysis(homogeneous_model)
    x0 = mix.support_hi - 1.0
    cfg = SimConfig(x0=x0, n_paths=30_000, dt=1e-3, horizon=250.0, seed=17)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = indifference_diagnostic(homogeneous_model, mix.profile, x0, cfg)
    assert abs(d[1]["z"]) <= 3
    assert abs(d[2]["z"]) <= 3


def test_doubled_hazard_pushes_value_above_exit(homogeneous_model):
    mix = eq.mixed_mpe_analysis(homogeneous_model)

    class Doubled:
        def __init__(self, h):
            self.h = h
        def __call__(self, x):
            return 2.0 * self.h(x)

    boosted = eq.StrategyProfile(eq.Strategy(hazard=mix.profile.firm1.hazard),
                                 eq.Strategy(hazard=Doubled(mix.profile.firm2.hazard)))
    x0 = mix.support_hi - 1.0
    cfg = SimConfig(x0=x0, n_paths=30_000, dt=1e-3, horizon=250.0, seed=23)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = indifference_diagnostic(homogeneous_model, boosted, x0, cfg)
    # firm 1 faces twice the rival exit rate: staying strictly beats its exit payoff
    assert d[1]["z"] > 3


def test_atom_then_hazard_profile(homogeneous_model):
    # non-Markov flavored profile: one firm exits with an instantaneous
    # probability at the first hit of the common threshold, then both mix
    mix = eq.mixed_mpe_analysis(homogeneous_model)
    theta = mix.support_hi
    profile = eq.StrategyProfile(
        eq.Strategy(hazard=mix.profile.firm1.hazard, atoms=(eq.Atom(theta, 0.4),)),
        eq.Strategy(hazard=mix.profile.firm2.hazard),
    )
    x0 = theta + 0.5
    cfg = SimConfig(x0=x0, n_paths=30_000, dt=1e-3, horizon=250.0, seed=29)
    out = play_game(simulate_paths(homogeneous_model.diffusion, cfg), profile, homogeneous_model)
    assert out.n_censored < 50
    # firm 1 randomizes everywhere on the support, so its rival's hazard keeps
    # it exactly at the exit payoff; the atom only reshuffles who wins
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_values(out, homogeneous_model)
    # firm 2's value from above the support: at least its exit payoff, at most the winner cap
    assert est[2].mean >= homogeneous_model.l_const(2) - 3 * est[2].se
    # the atom hands firm 2 extra wins relative to the symmetric mixed profile
    out_sym = play_game(simulate_paths(homogeneous_model.diffusion, cfg), mix.profile, homogeneous_model)
    w2_atom = np.mean(out.winner == 2)
    w2_sym = np.mean(out_sym.winner == 2)
    assert w2_atom > w2_sym + 0.05


def test_simulation_consistent_with_chain_oracle(abm_model):
    # the two verification routes share no code: chain DP value vs Monte Carlo
    from attrition import oracle
    profile, _ = eq.pure_mpe_weak_exits(abm_model)
    x0 = profile.firm2.exit_threshold + 1.0
    cfg = SimConfig(x0=x0, n_paths=20_000, dt=4e-3, horizon=500.0, seed=13, bridge_correction=True)
    out = play_game(simulate_paths(abm_model.diffusion, cfg), profile, abm_model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_values(out, abm_model)
    grid = oracle.build_grid(abm_model, 4001)
    j = int(np.argmin(np.abs(grid.states - x0)))
    for firm in (1, 2):
        cand = oracle.evaluate_strategy(grid, abm_model, firm, profile.strategy(firm), profile.opponent(firm))
        # allow the chain's first-order boundary quantization on top of the MC band
        w_slope = float(abm_model.firms[firm].winner.deriv(profile.firm2.exit_threshold, 1))
        tol = 3 * est[firm].se + 3 * grid.dx * max(1.0, w_slope)
        assert est[firm].mean == pytest.approx(float(cand[j]), abs=tol)


def test_forced_homogeneous_profile_exposes_heterogeneity():
    # unequal outside options pushed through the equal-options hazard recipe:
    # above its break-even state the smaller-l firm gets no compensating hazard
    # yet earns flow above its exit interest, so its value detaches from l
    from attrition.benchmarks import sweep_benchmark
    m = sweep_benchmark(1.0, 1.5)
    theta2 = stopping.optimal_threshold(m, 2).threshold
    theta1 = stopping.optimal_threshold(m, 1).threshold
    forced = eq.StrategyProfile(
        eq.Strategy(hazard=eq.IndifferenceHazard(m, keeps_indifferent=2, cutoff=theta2)),
        eq.Strategy(hazard=eq.IndifferenceHazard(m, keeps_indifferent=1, cutoff=theta2)),
    )
    x0 = theta1 + 0.75 * (theta2 - theta1)
    assert x0 > m.x_c(1)  # inside the negative-rate witness interval
    cfg = SimConfig(x0=x0, n_paths=100_000, dt=5e-3, horizon=250.0, seed=31)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = indifference_diagnostic(m, forced, x0, cfg)
    assert d[1]["z"] > 3.0
