"""Brute-force verifier: locally consistent Markov chain + dynamic programming.

The diffusion is discretized to a trinomial chain on the truncation
window (upwinded drift, so probabilities are nonnegative for any drift
size), and optimal exit problems are solved exactly on the chain by
Howard policy iteration: each policy is evaluated with a banded linear
solve, the stopping set is re-optimized, and the returned fixed point is
certified with a sup-norm Bellman residual.  Nothing here touches the
analytic machinery, so agreement between the two routes is evidence, not
tautology.

Opponent strategies enter through their per-step exit probability: one
for exit regions, 1 - exp(-lambda dt) for hazards, and a one-shot
trigger probability for an atom, which is handled by doubling the state
with an "atom consumed" layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .equilibrium import Strategy
from .payoffs import GameModel

BELLMAN_TOL = 1e-10
MAX_POLICY_ITERATIONS = 2000


class OracleError(RuntimeError):
    pass


class GridResolutionError(OracleError):
    pass


@dataclass
class GridModel:
    states: np.ndarray
    dx: float                       # uniform spacing of the internal coordinate
    dt: float
    p_up: np.ndarray
    p_down: np.ndarray
    p_stay: np.ndarray
    log_state: bool = False         # geometric state grid (chain built in log state)

    @property
    def n(self) -> int:
        return len(self.states)

    def interior(self) -> slice:
        return slice(1, self.n - 1)

    def cell_width(self, i: int) -> float:
        """Local grid spacing in state units."""
        if not self.log_state:
            return self.dx
        i = min(max(i, 0), self.n - 2)
        return float(self.states[i + 1] - self.states[i])

    def cell_width_at(self, x: float) -> float:
        return self.cell_width(int(np.searchsorted(self.states, x)) - 1)


def build_grid(model: GameModel, n_states: int = 2001) -> GridModel:
    """Trinomial chain matching the drift exactly and the variance to O(dx).

    dt = dx^2 / max(sigma^2 + dx |mu|) keeps every probability in [0, 1];
    the two edge states are frozen (absorbing), which matches the
    truncation rationale: their discounted weight seen from the interior
    is below the truncation tail bound.  Multiplicative state spaces
    (windows spanning decades on (0, inf)) are discretized uniformly in
    log state, where their coefficients are tame; a linear grid there
    would bury the whole decision region inside one cell.
    """
    if n_states < 200:
        raise GridResolutionError("n_states must be at least 200")
    lo, hi = model.window
    log_state = lo > 0 and hi / lo > 1e3
    if log_state:
        # flows grow across the full multiplicative window until the value span
        # exceeds float resolution of the decision region; the chain only needs
        # the sub-window still reachable at weight 1e-9 from the decision region
        # (the geometric mean of the break-even states)
        from . import diffusion as dfn
        r_min = min(model.firms[1].discount, model.firms[2].discount)
        center = math.sqrt(model.x_c(1) * model.x_c(2))
        sub = dfn.resolve_truncation(model.diffusion, r_min, center, weight=1e-9)
        lo, hi = max(lo, sub.trunc_lo), min(hi, sub.trunc_hi)
        ys = np.linspace(math.log(lo), math.log(hi), n_states)
        xs = np.exp(ys)
        sig2_x = np.asarray(model.diffusion.sigma2(xs), dtype=float)
        mu_c = np.asarray(model.diffusion.mu(xs), dtype=float) / xs - 0.5 * sig2_x / (xs * xs)
        sig2_c = sig2_x / (xs * xs)
        dx = float(ys[1] - ys[0])
    else:
        xs = np.linspace(lo, hi, n_states)
        mu_c = np.asarray(model.diffusion.mu(xs), dtype=float)
        sig2_c = np.asarray(model.diffusion.sigma2(xs), dtype=float)
        dx = float(xs[1] - xs[0])
    denom = float(np.max(sig2_c + dx * np.abs(mu_c)))
    if denom <= 0:
        raise GridResolutionError("degenerate chain: sigma^2 + dx|mu| vanishes")
    dt = dx * dx / denom
    up = (0.5 * sig2_c + dx * np.maximum(mu_c, 0.0)) * dt / (dx * dx)
    down = (0.5 * sig2_c + dx * np.maximum(-mu_c, 0.0)) * dt / (dx * dx)
    stay = 1.0 - up - down
    if np.any(up < -1e-15) or np.any(down < -1e-15) or np.any(stay < -1e-12):
        worst = int(np.argmin(stay))
        raise GridResolutionError(
            f"negative transition probability at state {xs[worst]:.6g}; increase n_states"
        )
    up[0] = down[0] = 0.0
    up[-1] = down[-1] = 0.0
    stay[0] = stay[-1] = 1.0
    grid = GridModel(states=xs, dx=dx, dt=dt, p_up=up, p_down=down, p_stay=stay, log_state=log_state)
    _moment_check(grid, mu_c, sig2_c)
    return grid


def _moment_check(grid, mu_c, sig2_c):
    """Local consistency in the chain's own coordinate."""
    inner = slice(1, grid.n - 1)
    drift = (grid.p_up[inner] - grid.p_down[inner]) * grid.dx
    err = np.abs(drift - mu_c[inner] * grid.dt)
    tol = 1e-12 + 1e-3 * np.abs(mu_c[inner]) * grid.dt
    if np.any(err > tol):
        raise GridResolutionError("chain first moment failed local consistency")
    var = (grid.p_up[inner] + grid.p_down[inner]) * grid.dx ** 2 - (mu_c[inner] * grid.dt) ** 2
    tol_var = (np.abs(mu_c[inner]) * grid.dx + 1e-12) * grid.dt + (mu_c[inner] * grid.dt) ** 2 + 1e-15
    if np.any(np.abs(var - sig2_c[inner] * grid.dt) > tol_var):
        raise GridResolutionError("chain second moment failed local consistency")


def expectation(grid: GridModel, v: np.ndarray) -> np.ndarray:
    """E[v(X')] per state, with frozen edge states."""
    out = grid.p_stay * v
    out[:-1] += grid.p_up[:-1] * v[1:]
    out[1:] += grid.p_down[1:] * v[:-1]
    return out


def _policy_solve(grid: GridModel, disc: float, couple: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve V = rhs + couple * disc * E[V] (couple and rhs per state) by banded LU."""
    n = grid.n
    ab = np.zeros((3, n))
    factor = couple * disc
    ab[1, :] = 1.0 - factor * grid.p_stay
    ab[0, 1:] = -(factor[:-1] * grid.p_up[:-1])     # A[i, i+1]
    ab[2, :-1] = -(factor[1:] * grid.p_down[1:])    # A[i+1, i]
    return solve_banded((1, 1), ab, rhs)


def _per_step_exit_prob(grid: GridModel, opponent: Strategy):
    """Opponent per-step exit probability split into the no-atom part and atom data."""
    xs = grid.states
    q = np.zeros_like(xs)
    if opponent.hazard is not None:
        q = 1.0 - np.exp(-np.asarray(opponent.hazard_at(xs), dtype=float) * grid.dt)
    if opponent.exit_threshold is not None:
        q = np.where(xs <= opponent.exit_threshold + 1e-12 * (xs[-1] - xs[0]), 1.0, q)
    if len(opponent.atoms) > 1:
        raise OracleError("the chain supports at most one atom per opponent strategy")
    atom = opponent.atoms[0] if opponent.atoms else None
    return q, atom


@dataclass
class ResponseResult:
    value: np.ndarray
    stop_mask: np.ndarray
    iterations: int
    bellman_residual: float
    value_pre_atom: np.ndarray = None

    def to_dict(self):
        return {"iterations": self.iterations, "bellman_residual": self.bellman_residual}


def _firm_arrays(grid, model, firm):
    xs = grid.states
    f = model.firms[firm]
    pi = np.asarray(f.profit(xs), dtype=float)
    w = np.asarray(f.winner(xs), dtype=float)
    l = np.asarray(f.exit_payoff(xs), dtype=float)
    m = 0.5 * (l + w)
    disc = math.exp(-f.discount * grid.dt)
    return pi, w, l, m, disc


def _optimal_stop_layer(grid, pi, w, l, m, disc, q, cont_offset=None, couple_scale=None,
                        tie_tol=None):
    """Howard iteration for V = max(stop, continue) against exit probability q.

    stop     = q*m + (1-q)*l                  (simultaneous exits split the prize)
    continue = q*w + (1-q)*(pi dt + disc E[V' or offset])
    cont_offset, when given, replaces the self-coupled continuation at the
    flagged states (atom layer hand-off); couple_scale multiplies the
    self-coupling (own mixed candidate evaluation).
    """
    n = grid.n
    stop_val = q * m + (1.0 - q) * l
    flow = (1.0 - q) * pi * grid.dt + q * w
    couple_base = (1.0 - q) if couple_scale is None else (1.0 - q) * couple_scale
    if tie_tol is None:
        tie_tol = 1e-12 * max(1.0, float(np.max(np.abs(l))))

    offset = np.zeros(n) if cont_offset is None else cont_offset
    off_mask = np.zeros(n, dtype=bool) if cont_offset is None else ~np.isnan(cont_offset)
    offset = np.where(off_mask, np.nan_to_num(offset), 0.0)

    # seed from the never-stop value: one extra solve, but the first stop set is
    # then value-consistent and the iteration settles in a few sweeps
    couple0 = np.where(off_mask, 0.0, couple_base)
    rhs0 = flow + np.where(off_mask, couple_base * offset, 0.0)
    v0 = _policy_solve(grid, disc, couple0, rhs0)
    cont0 = flow + couple_base * np.where(off_mask, offset, disc * expectation(grid, v0))
    stop = stop_val > cont0 + tie_tol
    value = None
    prev = None
    for it in range(1, MAX_POLICY_ITERATIONS + 1):
        couple = np.where(stop | off_mask, 0.0, couple_base)
        rhs = np.where(stop, stop_val, flow + np.where(off_mask, couple_base * offset, 0.0))
        value = _policy_solve(grid, disc, couple, rhs)
        cont = flow + couple_base * np.where(off_mask, offset, disc * expectation(grid, value))
        new_stop = stop_val > cont + tie_tol
        if np.array_equal(new_stop, stop):
            stop = new_stop
            break
        if prev is not None and np.array_equal(new_stop, prev):
            # boundary-cell flicker at float resolution: both sets price identically
            break
        prev = stop
        stop = new_stop
    else:
        raise OracleError("policy iteration did not converge")
    resid = float(np.max(np.abs(value - np.maximum(stop_val, cont))))
    return value, stop, it, resid, stop_val, cont


def _residual_tolerance(l, value) -> float:
    # exact-policy-evaluation residuals are pure roundoff; on windows where the
    # flow (and so the value) spans many orders of magnitude, the float floor
    # scales with the value magnitude, not with the exit payoff
    scale = max(1.0, float(np.max(np.abs(l))))
    return BELLMAN_TOL * scale + 64 * np.finfo(float).eps * float(np.max(np.abs(value)))


def dp_best_response(grid: GridModel, model: GameModel, firm: int, opponent: Strategy) -> ResponseResult:
    """Exact best response on the chain against the opponent's strategy."""
    pi, w, l, m, disc = _firm_arrays(grid, model, firm)
    q_plain, atom = _per_step_exit_prob(grid, opponent)

    value1, stop1, it1, res1, _, _ = _optimal_stop_layer(grid, pi, w, l, m, disc, q_plain)
    if res1 > _residual_tolerance(l, value1):
        raise OracleError(f"Bellman residual {res1:.3g} above tolerance")
    if atom is None:
        return ResponseResult(value1, stop1, it1, res1)

    # pre-atom layer: in the trigger zone the atom fires this step and the
    # continuation hands off to the consumed layer
    xs = grid.states
    zone = xs <= atom.level + 1e-12 * (xs[-1] - xs[0])
    q0 = np.where(zone, atom.prob + (1.0 - atom.prob) * q_plain, q_plain)
    offset = np.full(grid.n, np.nan)
    offset[zone] = disc * expectation(grid, value1)[zone]
    value0, stop0, it0, res0, _, _ = _optimal_stop_layer(grid, pi, w, l, m, disc, q0, cont_offset=offset)
    if res0 > _residual_tolerance(l, value0):
        raise OracleError(f"Bellman residual {res0:.3g} above tolerance (atom layer)")
    return ResponseResult(value0, stop0, it0 + it1, max(res0, res1), value_pre_atom=value0)


def evaluate_strategy(grid: GridModel, model: GameModel, firm: int, own: Strategy,
                      opponent: Strategy) -> np.ndarray:
    """Value of following `own` exactly (no optimization) against the opponent."""
    pi, w, l, m, disc = _firm_arrays(grid, model, firm)
    q, atom = _per_step_exit_prob(grid, opponent)
    if atom is not None:
        raise OracleError("candidate evaluation against an atom opponent is not supported")
    if own.atoms:
        raise OracleError("candidate evaluation of an own-atom strategy is not supported")
    xs = grid.states
    s = np.zeros_like(xs)
    if own.hazard is not None:
        s = 1.0 - np.exp(-np.asarray(own.hazard_at(xs), dtype=float) * grid.dt)
    if own.exit_threshold is not None:
        s = np.where(xs <= own.exit_threshold + 1e-12 * (xs[-1] - xs[0]), 1.0, s)
    # V = s[q m + (1-q) l] + (1-s)[q w + (1-q)(pi dt + disc E V)]
    rhs = s * (q * m + (1.0 - q) * l) + (1.0 - s) * (q * w + (1.0 - q) * pi * grid.dt)
    couple = (1.0 - s) * (1.0 - q)
    return _policy_solve(grid, disc, couple, rhs)


@dataclass
class StoppingResult:
    value: np.ndarray
    exit_mask: np.ndarray
    threshold_state: float          # largest grid state in the exit set (nan if empty)
    threshold_refined: float        # sub-grid estimate from the quadratic value fit
    iterations: int
    bellman_residual: float

    def to_dict(self):
        return {"threshold_state": self.threshold_state, "threshold_refined": self.threshold_refined,
                "iterations": self.iterations, "bellman_residual": self.bellman_residual}


def dp_single_player(grid: GridModel, model: GameModel, firm: int) -> StoppingResult:
    """Optimal stopping against a rival that never exits."""
    res = dp_best_response(grid, model, firm, Strategy())
    xs = grid.states
    exit_mask = res.stop_mask
    if not np.any(exit_mask[grid.interior()]):
        theta = math.nan
        refined = math.nan
    else:
        idx = int(np.max(np.nonzero(exit_mask[:-1])[0]))
        theta = float(xs[idx])
        refined = _refine_threshold(grid, model, firm, res.value, idx)
    return StoppingResult(res.value, exit_mask, theta, refined, res.iterations, res.bellman_residual)


def _refine_threshold(grid, model, firm, value, idx, npts: int = 6):
    """Sub-grid boundary: vertex of a quadratic fit to V - l above the exit set.

    Smooth pasting makes V - l quadratically flat at the boundary; fitting a
    full quadratic (rather than pinning the curve to zero) absorbs the local
    linear part of the chain's value bias into the low-order coefficients, so
    the vertex estimate contracts with the grid instead of flooring out.
    """
    xs = grid.states
    l = np.asarray(model.firms[firm].exit_payoff(xs), dtype=float)
    js = np.arange(idx + 1, min(idx + 1 + npts, grid.n))
    if len(js) < 3:
        return float(xs[idx])
    v = value[js] - l[js]
    if np.any(v < 0) or v[-1] <= v[0]:
        return float(xs[idx])
    coef = np.polyfit(xs[js] - xs[idx], v, 2)
    if coef[0] <= 0:
        return float(xs[idx])
    theta = float(xs[idx] - coef[1] / (2.0 * coef[0]))
    width = xs[js[-1]] - xs[idx]
    if not (xs[idx] - width <= theta <= xs[js[0]]):
        return float(xs[idx])
    return theta


def deviation_gain(grid: GridModel, model: GameModel, firm: int, profile) -> float:
    """sup over grid states of best-response value minus candidate-strategy value."""
    own = profile.strategy(firm)
    opp = profile.opponent(firm)
    br = dp_best_response(grid, model, firm, opp)
    cand = evaluate_strategy(grid, model, firm, own, opp)
    return float(np.max(br.value - cand))


def first_passage_discount(grid: GridModel, model: GameModel, level: float, firm: int = 1) -> np.ndarray:
    """Chain E[e^{-r tau_level}] from above the level (1 at and below it)."""
    xs = grid.states
    disc = math.exp(-model.firms[firm].discount * grid.dt)
    below = xs <= level + 1e-12 * (xs[-1] - xs[0])
    couple = np.where(below, 0.0, 1.0)
    rhs = np.where(below, 1.0, 0.0)
    return _policy_solve(grid, disc, couple, rhs)


def certify_profile(grid: GridModel, model: GameModel, profile) -> dict:
    """No-profitable-deviation gains for both firms under a candidate profile."""
    return {f"deviation_gain_firm{i}": deviation_gain(grid, model, i, profile) for i in (1, 2)}
