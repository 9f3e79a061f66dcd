"""Monte Carlo engine: path simulation and strategy-profile execution.

Paths follow the Euler scheme X' = X + mu(X) dt + sigma(X) sqrt(dt) Z,
clamped to the truncation window with a touch flag.  Game execution is
fused with path generation and streamed in fixed-size path blocks, each
with its own counter-derived RNG stream, so results are byte-identical
for a given seed regardless of how blocks are scheduled and do not
require storing paths.

Exit mechanics per step: exit regions fire on the post-step state (or,
with the bridge option, with the Brownian-bridge crossing probability and
the exact crossing state); hazards fire when the accumulated integrated
hazard crosses a per-firm exponential draw (inverse transform, exact for
the discretized integral); atoms fire once at the first hit of their
trigger level.  Simultaneous exits split the prize by a fair coin, as the
payoff accounting prescribes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import DiffusionSpec
from .equilibrium import StrategyProfile
from .payoffs import GameModel

WINNER_TIE = 0
WINNER_CENSORED = -1


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    x0: float
    n_paths: int = 10_000
    dt: float = 1e-3
    horizon: float = None          # default 50 / r, set when the model is known
    seed: int = 0
    antithetic: bool = False
    bridge_correction: bool = False
    block_size: int = 65536
    censored: str = "exclude"      # or "bound"

    def __post_init__(self):
        if self.dt <= 0 or self.n_paths < 1:
            raise SimulationError("dt must be positive and n_paths >= 1")
        if self.censored not in ("exclude", "bound"):
            raise SimulationError("censored policy must be 'exclude' or 'bound'")

    def resolved_horizon(self, r_min: float) -> float:
        return self.horizon if self.horizon is not None else 50.0 / r_min


@dataclass
class Paths:
    """Lazy path-set descriptor; blocks are regenerated on demand."""
    spec: DiffusionSpec
    cfg: SimConfig

    def block_sizes(self):
        n, b = self.cfg.n_paths, self.cfg.block_size
        return [min(b, n - i) for i in range(0, n, b)]

    def _rng(self, block_index: int, stream: int):
        return np.random.default_rng([self.cfg.seed, block_index, stream])

    def step_draws(self, rng, n):
        """One step's standard normal draws (antithetic pairs interleaved)."""
        if not self.cfg.antithetic:
            return rng.standard_normal(n)
        half = (n + 1) // 2
        z = rng.standard_normal(half)
        out = np.empty(2 * half)
        out[0::2] = z
        out[1::2] = -z
        return out[:n]

    def to_array(self, n_steps: int = None):
        """Materialize (times, paths, touched) -- small runs only."""
        if self.cfg.horizon is None:
            raise SimulationError("set an explicit horizon to materialize paths")
        steps = n_steps if n_steps is not None else int(math.ceil(self.cfg.horizon / self.cfg.dt))
        total = self.cfg.n_paths * (steps + 1)
        if total > 5e7:
            raise SimulationError("path matrix too large to materialize; stream through play_game instead")
        lo, hi = self.spec.trunc_lo, self.spec.trunc_hi
        out = np.empty((self.cfg.n_paths, steps + 1))
        touched = np.zeros(self.cfg.n_paths, dtype=bool)
        pos = 0
        for b, nb in enumerate(self.block_sizes()):
            rng = self._rng(b, 0)
            x = np.full(nb, float(self.cfg.x0))
            out[pos:pos + nb, 0] = x
            for k in range(steps):
                x = self._advance(x, rng, nb)
                hit = (x < lo) | (x > hi)
                touched[pos:pos + nb] |= hit
                x = np.clip(x, lo, hi)
                out[pos:pos + nb, k + 1] = x
            pos += nb
        times = np.arange(steps + 1) * self.cfg.dt
        return times, out, touched

    def _advance(self, x, rng, n):
        dt = self.cfg.dt
        drift = np.asarray(self.spec.mu(x), dtype=float) * dt
        if self.spec.deterministic:
            return x + drift
        z = self.step_draws(rng, n)
        return x + drift + np.asarray(self.spec.sigma(x), dtype=float) * math.sqrt(dt) * z


def simulate_paths(spec: DiffusionSpec, cfg: SimConfig) -> Paths:
    spec._require_truncation()
    return Paths(spec, cfg)


# ---------------------------------------------------------------------------
# game execution
# ---------------------------------------------------------------------------


@dataclass
class OutcomeSet:
    winner: np.ndarray              # 1, 2, 0 = simultaneous, -1 = censored
    tie: np.ndarray                 # bool: simultaneous exit resolved by coin
    prize_to: np.ndarray            # which firm received w on this path (0 if none)
    exit_time: np.ndarray
    pay1: np.ndarray
    pay2: np.ndarray
    truncation_touched: int
    horizon: float

    @property
    def n(self) -> int:
        return len(self.winner)

    @property
    def n_censored(self) -> int:
        return int(np.sum(self.winner == WINNER_CENSORED))

    def payoffs(self, firm: int) -> np.ndarray:
        return self.pay1 if firm == 1 else self.pay2

    def summary(self) -> dict:
        counts = {"firm1_wins": int(np.sum(self.winner == 1)),
                  "firm2_wins": int(np.sum(self.winner == 2)),
                  "ties": int(np.sum(self.winner == WINNER_TIE)),
                  "censored": self.n_censored}
        alive = self.winner != WINNER_CENSORED
        return {
            "n_paths": self.n,
            "outcomes": counts,
            "mean_exit_time": float(np.mean(self.exit_time[alive])) if np.any(alive) else None,
            "truncation_touched": self.truncation_touched,
            "horizon": self.horizon,
        }


def _fast_form(form):
    """Hoist constant/affine payoff forms to closures without array plumbing."""
    if callable(form) and not hasattr(form, "family"):
        return form
    if form.family == "const":
        c = form.coeffs[0]
        return lambda x: c
    if form.family == "affine":
        a, b = form.coeffs
        return lambda x: a + b * x
    return form


class _FirmState:
    """Per-block mutable execution state for one firm's strategy."""

    def __init__(self, strat, n, rng):
        self.strat = strat
        self.active = strat.exit_threshold is not None or strat.hazard is not None or bool(strat.atoms)
        self.cum_hazard = np.zeros(n)
        self.exp_threshold = rng.exponential(size=n) if strat.hazard is not None else None
        self.atom_pending = [np.ones(n, dtype=bool) for _ in strat.atoms]
        self.atom_draws = [rng.random(n) for _ in strat.atoms]


def play_game(paths: Paths, profile: StrategyProfile, model: GameModel) -> OutcomeSet:
    """Execute the profile along simulated paths and record discounted payoffs."""
    cfg = paths.cfg
    spec = paths.spec
    r1, r2 = model.firms[1].discount, model.firms[2].discount
    horizon = cfg.resolved_horizon(min(r1, r2))
    n_steps = int(math.ceil(horizon / cfg.dt))
    lo, hi = spec.trunc_lo, spec.trunc_hi

    n_total = cfg.n_paths
    winner = np.full(n_total, WINNER_CENSORED, dtype=np.int8)
    tie = np.zeros(n_total, dtype=bool)
    prize_to = np.zeros(n_total, dtype=np.int8)
    exit_time = np.full(n_total, horizon)
    pay1 = np.zeros(n_total)
    pay2 = np.zeros(n_total)
    touched_total = 0

    pos = 0
    for b, nb in enumerate(paths.block_sizes()):
        res = _play_block(paths, profile, model, b, nb, n_steps, horizon)
        sl = slice(pos, pos + nb)
        winner[sl], tie[sl], prize_to[sl], exit_time[sl], pay1[sl], pay2[sl] = res[:6]
        touched_total += res[6]
        pos += nb

    return OutcomeSet(winner, tie, prize_to, exit_time, pay1, pay2, touched_total, horizon)


def _play_block(paths, profile, model, block, nb, n_steps, horizon):
    cfg = paths.cfg
    spec = paths.spec
    dt = cfg.dt
    lo, hi = spec.trunc_lo, spec.trunc_hi
    rng_path = paths._rng(block, 0)
    rng_game = paths._rng(block, 1)

    f1, f2 = model.firms[1], model.firms[2]
    w_fns = {1: f1.winner, 2: f2.winner}
    l_fns = {1: f1.exit_payoff, 2: f2.exit_payoff}
    pi_fns = {1: f1.profit, 2: f2.profit}
    rs = {1: f1.discount, 2: f2.discount}

    winner = np.full(nb, WINNER_CENSORED, dtype=np.int8)
    tie = np.zeros(nb, dtype=bool)
    prize_to = np.zeros(nb, dtype=np.int8)
    exit_time = np.full(nb, horizon)
    pay = {1: np.zeros(nb), 2: np.zeros(nb)}
    touched = np.zeros(nb, dtype=bool)

    tie_coin = rng_game.random(nb)
    states = {i: _FirmState(profile.strategy(i), nb, rng_game) for i in (1, 2)}

    x = np.full(nb, float(cfg.x0))
    idx = np.arange(nb)
    flow = {1: np.zeros(nb), 2: np.zeros(nb)}

    def settle(local, t_ev, state_ev, who_exits):
        """Record outcomes for the local active-array positions in `local`."""
        g = idx[local]
        exit_time[g] = t_ev
        both = who_exits == 3
        for i in (1, 2):
            disc = np.exp(-rs[i] * t_ev)
            li = np.asarray(l_fns[i](state_ev), dtype=float)
            wi = np.asarray(w_fns[i](state_ev), dtype=float)
            exits_i = (who_exits == i) | both
            coin_win = tie_coin[g] < 0.5 if i == 1 else tie_coin[g] >= 0.5
            lump = np.where(both, np.where(coin_win, wi, li),
                            np.where(exits_i, li, wi))
            pay[i][g] = flow[i][local] + disc * lump
            if i == 1:
                winner[g] = np.where(both, WINNER_TIE, np.where(who_exits == 1, 2, 1)).astype(np.int8)
                tie[g] = both
                prize_to[g] = np.where(both, np.where(coin_win, 1, 2),
                                       np.where(who_exits == 1, 2, 1)).astype(np.int8)

    # time-0 exits: exit regions and atoms can fire at the initial state
    ev_t0 = {}
    for i in (1, 2):
        st = states[i]
        fire = np.zeros(nb, dtype=bool)
        if st.strat.exit_threshold is not None and cfg.x0 <= st.strat.exit_threshold:
            fire[:] = True
        for a_idx, atom in enumerate(st.strat.atoms):
            if cfg.x0 <= atom.level:
                st.atom_pending[a_idx][:] = False
                fire |= st.atom_draws[a_idx] < atom.prob
        ev_t0[i] = fire
    any0 = ev_t0[1] | ev_t0[2]
    if np.any(any0):
        who = np.where(ev_t0[1] & ev_t0[2], 3, np.where(ev_t0[1], 1, 2))[any0]
        settle(any0, 0.0, np.full(int(np.sum(any0)), float(cfg.x0)), who)
        keep = ~any0
        x, idx = x[keep], idx[keep]
        for i in (1, 2):
            flow[i] = flow[i][keep]
            _trim_state(states[i], keep)

    # hoisted coefficient access: constants and affine forms cost one vector op
    mu_f = _fast_form(spec.mu_form)
    sig_f = None if spec.deterministic else _fast_form(spec.sigma_form)
    pi_f = {1: _fast_form(f1.profit), 2: _fast_form(f2.profit)}
    shared_pi = f2.profit is f1.profit or f2.profit == f1.profit
    sqdt = math.sqrt(dt)

    t = 0.0
    for k in range(n_steps):
        if len(x) == 0:
            break
        drift = mu_f(x) * dt
        if spec.deterministic:
            x_new = x + drift
            sig_v = None
        else:
            z = paths.step_draws(rng_path, len(x))
            sig_v = sig_f(x)
            x_new = x + drift + sig_v * sqdt * z
        if x_new.min() < lo or x_new.max() > hi:
            hit = (x_new < lo) | (x_new > hi)
            touched[idx[hit]] = True
            x_new = np.clip(x_new, lo, hi)

        ev_time = {1: None, 2: None}
        ev_state = {1: None, 2: None}
        for i in (1, 2):
            st = states[i]
            if not st.active:
                continue
            t_i = s_i = None
            if st.strat.hazard is not None:
                lam_dt = np.asarray(st.strat.hazard_at(x), dtype=float) * dt
                new_cum = st.cum_hazard + lam_dt
                crossed = new_cum >= st.exp_threshold
                if crossed.any():
                    t_i = np.full(len(x), np.inf)
                    s_i = x_new.copy()
                    frac = (st.exp_threshold[crossed] - st.cum_hazard[crossed]) / lam_dt[crossed]
                    t_i[crossed] = t + frac * dt
                    s_i[crossed] = x[crossed]          # pre-step state at a hazard exit
                st.cum_hazard = new_cum
            if st.strat.exit_threshold is not None:
                crossed, c_state = _crossing(x, x_new, st.strat.exit_threshold, sig_v, dt,
                                             cfg.bridge_correction, rng_game)
                if crossed is not None:
                    if t_i is None:
                        t_i = np.full(len(x), np.inf)
                        s_i = x_new.copy()
                    first = crossed & (t + dt < t_i)
                    t_i[first] = t + dt
                    s_i[first] = c_state[first]
            for a_idx, atom in enumerate(st.strat.atoms):
                pending = st.atom_pending[a_idx]
                crossed, c_state = _crossing(x, x_new, atom.level, sig_v, dt,
                                             cfg.bridge_correction, rng_game)
                if crossed is None or not (pending & crossed).any():
                    continue
                trig = pending & crossed
                st.atom_pending[a_idx] = pending & ~crossed
                fire = trig & (st.atom_draws[a_idx] < atom.prob)
                if t_i is None:
                    t_i = np.full(len(x), np.inf)
                    s_i = x_new.copy()
                first = fire & (t + dt < t_i)
                t_i[first] = t + dt
                s_i[first] = c_state[first]
            ev_time[i], ev_state[i] = t_i, s_i

        # flow accrues exactly for frozen profit; survivors share scalar factors
        pv1 = pi_f[1](x)
        pv2 = pv1 if shared_pi else pi_f[2](x)
        r1_, r2_ = rs[1], rs[2]
        flow[1] += pv1 * (math.exp(-r1_ * t) * (1.0 - math.exp(-r1_ * dt)) / r1_)
        flow[2] += pv2 * (math.exp(-r2_ * t) * (1.0 - math.exp(-r2_ * dt)) / r2_)

        if ev_time[1] is not None or ev_time[2] is not None:
            t1 = ev_time[1] if ev_time[1] is not None else np.full(len(x), np.inf)
            t2 = ev_time[2] if ev_time[2] is not None else np.full(len(x), np.inf)
            t_min = np.minimum(t1, t2)
            ended = np.isfinite(t_min)
            if ended.any():
                # correct the flow of exiting paths back to their partial span
                for i, pv, ri in ((1, pv1, r1_), (2, pv2, r2_)):
                    pvv = pv[ended] if isinstance(pv, np.ndarray) else pv
                    span = np.minimum(t_min[ended] - t, dt)
                    full = math.exp(-ri * t) * (1.0 - math.exp(-ri * dt)) / ri
                    part = math.exp(-ri * t) * (1.0 - np.exp(-ri * span)) / ri
                    flow[i][ended] += pvv * (part - full)
                e1, e2 = t1[ended], t2[ended]
                who = np.where(e1 == e2, 3, np.where(e1 < e2, 1, 2))
                s1 = ev_state[1][ended] if ev_state[1] is not None else x_new[ended]
                s2 = ev_state[2][ended] if ev_state[2] is not None else x_new[ended]
                state_ev = np.where(who == 2, s2, s1)
                settle(ended, t_min[ended], state_ev, who)
                keep = ~ended
                x, idx = x_new[keep], idx[keep]
                for i in (1, 2):
                    flow[i] = flow[i][keep]
                    _trim_state(states[i], keep)
                t += dt
                continue
        x = x_new
        t += dt

    return winner, tie, prize_to, exit_time, pay[1], pay[2], int(np.sum(touched))


def _trim_state(st: _FirmState, keep):
    st.cum_hazard = st.cum_hazard[keep]
    if st.exp_threshold is not None:
        st.exp_threshold = st.exp_threshold[keep]
    st.atom_pending = [p[keep] for p in st.atom_pending]
    st.atom_draws = [d[keep] for d in st.atom_draws]


def _crossing(x, x_new, level, sig_v, dt, bridge, rng_game):
    """Post-step (or bridged) detection of a down-crossing of `level`.

    Returns (None, None) when no path crossed; bridge probabilities are
    evaluated only on the handful of paths that ended the step near the
    level, which keeps the correction O(candidates) per step.
    """
    crossed = x_new <= level
    any_plain = crossed.any()
    if not bridge or sig_v is None:
        return (crossed, x_new) if any_plain else (None, None)
    sig_hi = float(np.max(sig_v)) if isinstance(sig_v, np.ndarray) else float(sig_v)
    cand = (~crossed) & (x > level) & (x_new <= level + 6.0 * sig_hi * math.sqrt(dt))
    if not cand.any():
        if not any_plain:
            return None, None
        state = np.where(crossed, level, x_new)
        return crossed, state
    xc, xnc = x[cand], x_new[cand]
    var = (sig_v[cand] if isinstance(sig_v, np.ndarray) else sig_v) ** 2 * dt
    p_cross = np.exp(-2.0 * (xc - level) * (xnc - level) / var)
    u = rng_game.random(len(xc))
    bridged = np.zeros_like(crossed)
    bridged[np.nonzero(cand)[0][u < p_cross]] = True
    crossed = crossed | bridged
    if not crossed.any():
        return None, None
    state = np.where(crossed, level, x_new)
    return crossed, state


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------


@dataclass
class ValueEstimate:
    mean: float
    se: float
    n: int
    n_censored: int
    bounds: tuple = None

    def to_dict(self):
        return {"mean": self.mean, "se": self.se, "n": self.n,
                "n_censored": self.n_censored,
                "bounds": list(self.bounds) if self.bounds else None}


def estimate_values(outcomes: OutcomeSet, model: GameModel = None, censored: str = "exclude") -> dict:
    """Per-firm mean discounted payoff with standard errors."""
    if outcomes.n < 2:
        raise SimulationError("need at least two outcomes to estimate")
    alive = outcomes.winner != WINNER_CENSORED
    n_cens = outcomes.n_censored
    if not np.any(alive):
        raise SimulationError("all paths censored; extend the horizon")
    out = {}
    for i in (1, 2):
        p = outcomes.payoffs(i)
        if censored == "exclude":
            if n_cens:
                warnings.warn(f"{n_cens} censored paths excluded from the value estimate")
            sample = p[alive]
            bounds = None
        else:
            lo_fill, hi_fill = _censor_bounds(outcomes, model, i)
            sample = p[alive]
            full_lo = np.where(alive, p, p + lo_fill)
            full_hi = np.where(alive, p, p + hi_fill)
            bounds = (float(np.mean(full_lo)), float(np.mean(full_hi)))
        mean = float(np.mean(sample))
        se = float(np.std(sample, ddof=1) / math.sqrt(len(sample)))
        out[i] = ValueEstimate(mean, se, int(len(sample)), n_cens, bounds)
    return out


def _censor_bounds(outcomes, model, firm):
    if model is None:
        raise SimulationError("bounding censored paths requires the model")
    lo, hi = model.window
    r = model.firms[firm].discount
    disc = math.exp(-r * outcomes.horizon)
    l_lo = float(np.min(model.firms[firm].exit_payoff(np.linspace(lo, hi, 201))))
    w_hi = float(np.max(model.firms[firm].winner(np.linspace(lo, hi, 201))))
    return disc * min(l_lo, 0.0), disc * max(w_hi, 0.0)


def indifference_diagnostic(model: GameModel, profile: StrategyProfile, x0: float,
                            cfg: SimConfig = None) -> dict:
    """z-scores of (simulated value - exit payoff) per firm at x0 in the support."""
    if cfg is None:
        cfg = SimConfig(x0=x0, n_paths=100_000)
    elif cfg.x0 != x0:
        cfg = replace(cfg, x0=x0)
    paths = simulate_paths(model.diffusion, cfg)
    outcomes = play_game(paths, profile, model)
    est = estimate_values(outcomes, model)
    out = {}
    for i in (1, 2):
        li = float(model.firms[i].exit_payoff(x0))
        e = est[i]
        out[i] = {"z": (e.mean - li) / e.se if e.se > 0 else math.inf,
                  "mean": e.mean, "se": e.se, "target": li, "n": e.n,
                  "n_censored": e.n_censored}
    return out
