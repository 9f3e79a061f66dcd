"""Single-player optimal exit: discounted flow values, exit thresholds, values.

The expected discounted flow profit R(x) is evaluated through the
Green's-function representation

    R(x) = phi(x)/B * int_lo^x psi(y) pi(y) m'(y) dy
         + psi(x)/B * int_x^hi phi(y) pi(y) m'(y) dy,

with every integrand assembled from log-space factors so that strongly
drifting models stay inside float range.  The optimal exit threshold is
the root of the signed integral

    G_i(x) = int_x^hi phi(y) h_i(y) m'(y) dy,

where h_i = pi_i - r_i l_i (plus exit-payoff generator terms when the
exit payoff is state-dependent); the slope of the stopping coefficient
is -S'(x)/phi(x)^2 * G_i(x), positive left of the threshold and negative
right of it, which makes bracketed root-finding robust.  Value matching
holds by construction; smooth pasting is reported as a residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .diffusion import log_scale_density, log_speed_density
from .payoffs import GameModel

QUAD_EPSREL = 1e-11
QUAD_LIMIT = 200
ROOT_TOL_FACTOR = 1e-10


class ThresholdError(RuntimeError):
    """Exit-threshold bracketing failed inside the truncation window."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not converge; message carries partial diagnostics."""


def _peak_breakpoints(a, b, peak_at_b):
    """Log-spaced interior breakpoints clustered at the peaked endpoint.

    The resolvent integrands decay exponentially away from the evaluation
    point; feeding QUADPACK geometrically refined subdivisions toward the
    peak keeps long windows from hiding an endpoint spike.
    """
    span = b - a
    fracs = [0.5 ** k for k in range(1, 24)]
    if peak_at_b:
        pts = [b - span * f for f in fracs]
    else:
        pts = [a + span * f for f in fracs]
    return [p for p in pts if a < p < b]


def _quad_window(spec, f, a, b, epsabs, peak_at_b=True):
    """Adaptive quadrature of f over [a, b] inside the window.

    Multiplicative state spaces (window spanning decades on (0, inf))
    are integrated in log state, where the integrand decay is exponential
    rather than power-law.
    """
    if a >= b:
        return 0.0
    if spec.trunc_lo > 0 and spec.trunc_hi / spec.trunc_lo > 1e3:
        g = lambda u: f(math.exp(u)) * math.exp(u)
        a, b = math.log(a), math.log(b)
    else:
        g = f
    out = quad(g, a, b, epsabs=epsabs, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT,
               points=_peak_breakpoints(a, b, peak_at_b), full_output=1)
    if len(out) > 3:
        raise QuadratureError(f"quadrature failed on [{a:.6g}, {b:.6g}]: {out[3]} (partial value {out[0]:.6g})")
    return out[0]


@dataclass
class ThresholdSolution:
    firm: int
    threshold: float
    coef_at_threshold: float        # weight on phi in the continuation value
    break_even: float
    value_matching_residual: float
    smooth_pasting_residual: float
    slope_at_threshold: float       # stop-coefficient slope at the solved root
    bracket_scale: float            # |slope| at the bracket midpoint, for tolerance reporting
    tail_bound: float               # bound on the neglected upper-tail of the root integral
    _model: GameModel = None

    def value(self, x):
        """l_i below the threshold, continuation value above; always >= l_i."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        firm = self._model.firms[self.firm]
        lvals = np.asarray(firm.exit_payoff(xv), dtype=float)
        out = lvals.copy()
        pair = self._model.pair(self.firm)
        above = xv > self.threshold
        for j in np.nonzero(above)[0]:
            xj = float(xv[j])
            lower, upper = _resolvent_parts(self._model, self.firm, _h_flow(self._model, self.firm), xj)
            out[j] = lvals[j] + (lower + upper) / pair.wronskian_B \
                + self.coef_at_threshold * math.exp(float(pair.log_phi(xj)))
        return float(out[0]) if scalar else out

    def to_dict(self):
        return {
            "firm": self.firm,
            "threshold": self.threshold,
            "coef_at_threshold": self.coef_at_threshold,
            "break_even": self.break_even,
            "value_matching_residual": self.value_matching_residual,
            "smooth_pasting_residual": self.smooth_pasting_residual,
            "slope_at_threshold": self.slope_at_threshold,
            "bracket_scale": self.bracket_scale,
            "tail_bound": self.tail_bound,
        }


def _h_flow(model, firm):
    return lambda y: float(model.h(firm, y))


def _quad_scale(model, firm) -> float:
    mid = model.diffusion.x_ref
    return (1.0 + abs(float(model.firms[firm].profit(mid)))) / model.firms[firm].discount


def _resolvent_parts(model: GameModel, firm: int, flow, x: float):
    """phi(x)-weighted lower integral and psi(x)-weighted upper integral of the flow."""
    spec = model.diffusion
    pair = model.pair(firm)
    lo, hi = model.window
    lphi_x = float(pair.log_phi(x))
    lpsi_x = float(pair.log_psi(x))
    epsabs = 1e-13 * _quad_scale(model, firm)

    def lower_ig(y):
        return flow(y) * math.exp(lphi_x + float(pair.log_psi(y)) + float(log_speed_density(spec, y)))

    def upper_ig(y):
        return flow(y) * math.exp(lpsi_x + float(pair.log_phi(y)) + float(log_speed_density(spec, y)))

    lower = _quad_window(spec, lower_ig, lo, x, epsabs, peak_at_b=True)
    upper = _quad_window(spec, upper_ig, x, hi, epsabs, peak_at_b=False)
    return lower, upper


def expected_profit(model: GameModel, x, firm: int = 1):
    """Expected discounted flow profit R(x) of staying in forever."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    _check_in_window(model, xv)
    pair = model.pair(firm)
    flow = lambda y: float(model.firms[firm].profit(y))
    out = np.empty_like(xv)
    for j, xj in enumerate(xv):
        lower, upper = _resolvent_parts(model, firm, flow, float(xj))
        out[j] = (lower + upper) / pair.wronskian_B
    return float(out[0]) if scalar else out


def expected_profit_slope(model: GameModel, x, firm: int = 1) -> float:
    """d/dx of the expected discounted flow profit (cross terms cancel)."""
    x = float(x)
    pair = model.pair(firm)
    flow = lambda y: float(model.firms[firm].profit(y))
    lower, upper = _resolvent_parts(model, firm, flow, x)
    return (float(pair.dlog_phi(x)) * lower + float(pair.dlog_psi(x)) * upper) / pair.wronskian_B


def stop_coefficient(model: GameModel, firm: int, x):
    """(l_i - R(x)) / phi(x): the phi-weight that pegs the value to l_i at x."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    pair = model.pair(firm)
    lvals = np.asarray(model.firms[firm].exit_payoff(xv), dtype=float)
    out = np.empty_like(xv)
    for j, xj in enumerate(xv):
        r_val = expected_profit(model, float(xj), firm)
        out[j] = (lvals[j] - r_val) * math.exp(-float(pair.log_phi(float(xj))))
    return float(out[0]) if scalar else out


def _root_integral(model: GameModel, firm: int, x: float, norm: float) -> float:
    """int_x^hi h_i(y) exp(log phi + log m' - norm) dy; sign opposite to the coefficient slope."""
    spec = model.diffusion
    pair = model.pair(firm)
    hflow = _h_flow(model, firm)
    _, hi = model.window

    def ig(y):
        return hflow(y) * math.exp(float(pair.log_phi(y)) + float(log_speed_density(spec, y)) - norm)

    return _quad_window(spec, ig, x, hi, 1e-14 * _quad_scale(model, firm), peak_at_b=False)


def _root_norm(model, firm) -> float:
    xc = model.x_c(firm)
    pair = model.pair(firm)
    return float(pair.log_phi(xc)) + float(log_speed_density(model.diffusion, xc))


def _bracket_candidates(lo, xc, multiplicative, n=60):
    """Points marching from just below the break-even state down toward the window edge."""
    out = []
    if multiplicative:
        x = xc
        while x > lo * 1.0000001 and len(out) < n:
            x *= 0.5
            out.append(max(x, lo * 1.0000001))
    else:
        step = (xc - lo) / 128.0
        x = xc
        while len(out) < n:
            x = xc - step
            if x <= lo:
                out.append(lo + 1e-9 * (xc - lo))
                break
            out.append(x)
            step *= 2.0
    return out


def stop_coefficient_slope(model: GameModel, firm: int, x):
    """Slope of the stopping coefficient, evaluated by quadrature (never by differencing)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    spec = model.diffusion
    pair = model.pair(firm)
    norm = _root_norm(model, firm)
    out = np.empty_like(xv)
    for j, xj in enumerate(xv):
        xj = float(xj)
        g = _root_integral(model, firm, xj, norm)
        pref = math.exp(float(log_scale_density(spec, xj)) - 2.0 * float(pair.log_phi(xj)) + norm)
        out[j] = -pref * g
    return float(out[0]) if scalar else out


def optimal_threshold(model: GameModel, firm: int) -> ThresholdSolution:
    """Unique exit threshold: the root of the coefficient slope in (lo, x_c]."""
    model.require_valid()
    if model.diffusion.deterministic:
        raise ThresholdError("threshold machinery requires sigma > 0; deterministic thresholds equal the break-even states")
    cache = getattr(model, "_threshold_cache", None)
    if cache is None:
        cache = model._threshold_cache = {}
    if firm in cache:
        return cache[firm]

    lo, hi = model.window
    xc = model.x_c(firm)
    norm = _root_norm(model, firm)
    g = lambda x: _root_integral(model, firm, x, norm)

    g_xc = g(xc)
    if not g_xc > 0:
        raise ThresholdError("root integral is not positive at the break-even state; model badly scaled")
    a = None
    for cand in _bracket_candidates(lo, xc, multiplicative=(lo > 0 and hi / lo > 1e3)):
        if g(cand) < 0.0:
            a = cand
            break
    if a is None:
        raise ThresholdError(
            "no sign bracket for the exit threshold inside the truncation window; "
            f"widen it (current window [{lo:.6g}, {hi:.6g}])"
        )
    theta = brentq(g, a, xc, xtol=1e-15 * max(1.0, abs(xc - a)), rtol=8.9e-16)

    pair = model.pair(firm)
    spec = model.diffusion

    def slope_at(x):
        pref = math.exp(float(log_scale_density(spec, x)) - 2.0 * float(pair.log_phi(x)) + norm)
        return -pref * g(x)

    mid = 0.5 * (a + xc)
    bracket_scale = abs(slope_at(mid))
    slope_root = slope_at(theta)

    # coefficient on phi from exact value matching at the root
    lower, upper = _resolvent_parts(model, firm, _h_flow(model, firm), theta)
    rh_theta = (lower + upper) / pair.wronskian_B
    coef = -rh_theta * math.exp(-float(pair.log_phi(theta)))

    vm_residual = abs(rh_theta + coef * math.exp(float(pair.log_phi(theta))))
    rh_slope = (float(pair.dlog_phi(theta)) * lower + float(pair.dlog_psi(theta)) * upper) / pair.wronskian_B
    sp_residual = abs(rh_slope + coef * float(pair.dlog_phi(theta)) * math.exp(float(pair.log_phi(theta))))

    # neglected upper tail of the root integral, bounded by its edge value over the local decay rate
    hflow = _h_flow(model, firm)
    edge = abs(hflow(hi)) * math.exp(float(pair.log_phi(hi)) + float(log_speed_density(spec, hi)) - norm)
    gm_hi, gp_hi = spec.local_roots(hi, model.firms[firm].discount)
    tail = edge / max(float(gp_hi), 1e-12)

    sol = ThresholdSolution(
        firm=firm, threshold=float(theta), coef_at_threshold=float(coef),
        break_even=float(xc), value_matching_residual=float(vm_residual),
        smooth_pasting_residual=float(sp_residual), slope_at_threshold=float(slope_root),
        bracket_scale=float(bracket_scale), tail_bound=float(tail), _model=model,
    )
    if abs(slope_root) > ROOT_TOL_FACTOR * max(bracket_scale, 1e-300):
        raise ThresholdError(
            f"threshold root did not meet tolerance: |slope| = {abs(slope_root):.3g} "
            f"> {ROOT_TOL_FACTOR:.0e} * bracket scale {bracket_scale:.3g}"
        )
    cache[firm] = sol
    return sol


def single_player_value(model: GameModel, firm: int, x):
    """Optimal-stopping value against an opponent that never exits."""
    return optimal_threshold(model, firm).value(x)


def curve_table(model: GameModel, xs) -> dict:
    """Plot-ready columns on a grid (fixed documented order)."""
    xs = np.asarray(xs, dtype=float)
    sols = {i: optimal_threshold(model, i) for i in (1, 2)}
    cols = {
        "x": xs,
        "R": np.array([expected_profit(model, float(x)) for x in xs]),
        "beta_1": stop_coefficient(model, 1, xs),
        "beta_2": stop_coefficient(model, 2, xs),
        "beta_prime_1": stop_coefficient_slope(model, 1, xs),
        "beta_prime_2": stop_coefficient_slope(model, 2, xs),
        "V1": sols[1].value(xs),
        "V2": sols[2].value(xs),
    }
    return cols


def _check_in_window(model, xv):
    lo, hi = model.window
    if np.any(xv < lo - 1e-12) or np.any(xv > hi + 1e-12):
        raise ValueError("evaluation point outside the truncation window")
