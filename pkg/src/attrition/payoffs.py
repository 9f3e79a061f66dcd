"""Game payoff primitives and standing-assumption validation.

A GameModel bundles the diffusion with the discount rate(s), the flow
profit earned while both firms are in the market, the winner payoff,
and the two exit payoffs.  Firms may be heterogeneous (per-firm rates,
profits, winner payoffs, and state-dependent exit payoffs); everything
downstream works through the transformed flow

    h_i(x) = pi_i(x) + 0.5 sigma^2 l_i'' + mu l_i' - r_i l_i(x),

which reduces to pi(x) - r*l_i for the usual constant exit payoff.
Validation never raises on a violated assumption: it reports, and the
solvers refuse models whose report contains a failure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import diffusion as dfn
from .diffusion import DiffusionSpec, fundamental_solutions
from .forms import Form

BREAK_EVEN_TOL = 1e-10


class ModelError(ValueError):
    """Structurally invalid model (as opposed to a failed assumption check)."""


class ModelInvalidError(RuntimeError):
    """A solver was handed a model whose validation report contains failures."""


@dataclass(frozen=True)
class FirmSpec:
    discount: float
    profit: Form
    winner: Form
    exit_payoff: Form

    def __post_init__(self):
        if self.discount <= 0:
            raise ModelError("discount rate must be positive")


def _deriv(f, x, order, h):
    if isinstance(f, Form):
        return f.deriv(x, order)
    x = np.asarray(x, dtype=float)
    if order == 1:
        return (f(x + h) - f(x - h)) / (2.0 * h)
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


class GameModel:
    """Immutable-after-validation container for the game's primitives."""

    def __init__(self, diffusion: DiffusionSpec, firm1: FirmSpec, firm2: FirmSpec):
        if not diffusion.has_truncation:
            raise ModelError("diffusion truncation window must be resolved before building a model")
        self.diffusion = diffusion
        self.firms = {1: firm1, 2: firm2}
        self._pairs: dict[float, object] = {}
        self._x_c: dict[int, float] = {}
        self.validation = None

    # -- constructors ------------------------------------------------

    @classmethod
    def basic(cls, diffusion: DiffusionSpec, r: float, profit: Form, winner: Form,
              l1: float, l2: float, center: float = None,
              truncation_weight: float = dfn.DEFAULT_TRUNCATION_WEIGHT) -> "GameModel":
        """Shared r/profit/winner, constant exit payoffs with l1 <= l2."""
        if l1 > l2:
            raise ModelError("exit payoffs must be ordered l1 <= l2")
        f1 = FirmSpec(r, profit, winner, Form("const", (float(l1),)))
        f2 = FirmSpec(r, profit, winner, Form("const", (float(l2),)))
        diffusion = cls._resolve_window(diffusion, (f1, f2), center, truncation_weight)
        return cls(diffusion, f1, f2)

    @classmethod
    def heterogeneous(cls, diffusion: DiffusionSpec, firm1: FirmSpec, firm2: FirmSpec,
                      center: float = None,
                      truncation_weight: float = dfn.DEFAULT_TRUNCATION_WEIGHT) -> "GameModel":
        diffusion = cls._resolve_window(diffusion, (firm1, firm2), center, truncation_weight)
        return cls(diffusion, firm1, firm2)

    @staticmethod
    def _resolve_window(spec, firms, center, weight):
        if spec.has_truncation:
            return spec
        roots = [_expanding_root(lambda x, f=f: _h_raw(spec, f, x), _default_guess(spec)) for f in firms]
        if spec.deterministic:
            span = max(max(roots) - min(roots), 1e-6)
            margin = max(1.0, span)
            hi_anchor = max(max(roots), center if center is not None else max(roots))
            return spec.with_truncation(min(roots) - 5.0 * margin, hi_anchor + 2.0 * margin)
        mid = center if center is not None else 0.5 * (min(roots) + max(roots))
        r_min = min(f.discount for f in firms)
        return dfn.resolve_truncation(spec, r_min, mid, weight)

    # -- basic accessors ---------------------------------------------

    @property
    def window(self):
        return self.diffusion.trunc_lo, self.diffusion.trunc_hi

    def firm(self, i: int) -> FirmSpec:
        return self.firms[i]

    def r(self, i: int = None) -> float:
        if i is not None:
            return self.firms[i].discount
        r1, r2 = self.firms[1].discount, self.firms[2].discount
        if r1 != r2:
            raise ModelError("firms have different discount rates; ask per firm")
        return r1

    def profit(self, i: int):
        return self.firms[i].profit

    def winner(self, i: int):
        return self.firms[i].winner

    def exit_payoff(self, i: int) -> Form:
        return self.firms[i].exit_payoff

    def l_const(self, i: int) -> float:
        form = self.firms[i].exit_payoff
        if not form.is_constant:
            raise ModelError("exit payoff is state-dependent; no constant value")
        return form.constant_value()

    @property
    def is_heterogeneous(self) -> bool:
        f1, f2 = self.firms[1], self.firms[2]
        shared = f1.discount == f2.discount and f1.profit == f2.profit and f1.winner == f2.winner
        const_l = f1.exit_payoff.is_constant and f2.exit_payoff.is_constant
        return not (shared and const_l)

    @property
    def firms_identical(self) -> bool:
        return self.firms[1] == self.firms[2]

    def h(self, i: int, x):
        """Transformed flow pi_i + (generator - r_i) applied to the exit payoff."""
        return _h_raw(self.diffusion, self.firms[i], x)

    def pair(self, i: int):
        r = self.firms[i].discount
        if r not in self._pairs:
            self._pairs[r] = fundamental_solutions(self.diffusion, r)
        return self._pairs[r]

    def x_c(self, i: int) -> float:
        if i not in self._x_c:
            self._x_c[i] = break_even_state(self, i)
        return self._x_c[i]

    def require_valid(self):
        if self.validation is None:
            validate(self)
        if not self.validation.ok:
            failed = [c.name for c in self.validation.checks if c.status == "fail"]
            raise ModelInvalidError(f"model failed validation checks: {', '.join(failed)}")
        return self


def _h_raw(spec, firm: FirmSpec, x):
    x = np.asarray(x, dtype=float)
    out = np.asarray(firm.profit(x), dtype=float).copy()
    l = firm.exit_payoff
    if l.is_constant:
        out -= firm.discount * l.constant_value()
    else:
        out += 0.5 * spec.sigma2(x) * l.deriv(x, 2) + spec.mu(x) * l.deriv(x, 1) - firm.discount * l(x)
    return out


def _default_guess(spec):
    if spec.kind == "gbm":
        return 1.0
    lo, hi = spec.state_lo, spec.state_hi
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return lo + 1.0
    if math.isfinite(hi):
        return hi - 1.0
    return 0.0


def _expanding_root(f, guess, max_doublings=60):
    """Bracket a sign change of an increasing function by geometric expansion, then bisect."""
    step = max(0.5, abs(guess) * 0.5)
    a = b = guess
    fa = fb = f(guess)
    for _ in range(max_doublings):
        if fa > 0:
            a -= step
            fa = f(a)
        elif fb < 0:
            b += step
            fb = f(b)
        else:
            break
        step *= 2.0
    if not (fa <= 0 <= fb):
        raise ModelError("no interior break-even state: pi - r*l has no sign change")
    if fa == 0:
        return a
    return brentq(f, a, b, xtol=1e-13 * max(1.0, abs(a) + abs(b)), rtol=8.9e-16)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    status: str  # pass | fail | warn
    worst_x: float = None
    magnitude: float = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "status": self.status, "worst_x": self.worst_x,
                "magnitude": self.magnitude, "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    grid_size: int = 0
    window: tuple = (math.nan, math.nan)
    break_even: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def check(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "ok": self.ok,
            "grid_size": self.grid_size,
            "window": list(self.window),
            "break_even": {str(k): v for k, v in self.break_even.items()},
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _worst(xs, margin):
    """Worst (smallest) margin and where it occurs."""
    i = int(np.argmin(margin))
    return float(xs[i]), float(margin[i])


def validate(model: GameModel, grid_size: int = 400) -> ValidationReport:
    """Check every standing assumption on a uniform grid over the window."""
    if grid_size < 100:
        raise ModelError("grid_size must be at least 100")
    spec = model.diffusion
    lo, hi = model.window
    xs = np.linspace(lo, hi, grid_size)
    fd_h = (hi - lo) / 1e4
    rep = ValidationReport(grid_size=grid_size, window=(lo, hi))
    hetero = model.is_heterogeneous

    # sigma positivity (or the sanctioned deterministic flag)
    if spec.deterministic:
        rep.checks.append(CheckResult("sigma_positive", "pass", detail="deterministic mode (sigma == 0)"))
    else:
        s = np.asarray(spec.sigma(xs), dtype=float)
        if np.all(np.isfinite(s)) and np.all(s > 0):
            rep.checks.append(CheckResult("sigma_positive", "pass", magnitude=float(np.min(s))))
        else:
            wx, wm = _worst(xs, s)
            rep.checks.append(CheckResult("sigma_positive", "fail", wx, wm, "sigma must be positive"))

    # exit payoff ordering (constant case only; state-dependent payoffs have no canonical order)
    f1, f2 = model.firms[1], model.firms[2]
    if f1.exit_payoff.is_constant and f2.exit_payoff.is_constant:
        l1v, l2v = f1.exit_payoff.constant_value(), f2.exit_payoff.constant_value()
        status = "pass" if l1v <= l2v else "fail"
        rep.checks.append(CheckResult("exit_payoffs_ordered", status, magnitude=l2v - l1v))
    else:
        d = f2.exit_payoff(xs) - f1.exit_payoff(xs)
        status = "pass" if np.all(d >= 0) else "warn"
        wx, wm = _worst(xs, d)
        rep.checks.append(CheckResult("exit_payoffs_ordered", status, wx, wm,
                                      "state-dependent exit payoffs; ordering is informational"))

    for i in (1, 2):
        firm = model.firms[i]
        tag = f"_firm{i}" if hetero else ""

        if i == 1 or hetero:
            # strictly increasing flow profit
            pv = np.asarray(firm.profit(xs), dtype=float)
            dp = np.diff(pv)
            if np.all(dp > 0):
                rep.checks.append(CheckResult(f"profit_increasing{tag}", "pass", magnitude=float(np.min(dp))))
            else:
                j = int(np.argmin(dp))
                rep.checks.append(CheckResult(f"profit_increasing{tag}", "fail", float(xs[j]), float(dp[j]),
                                              "flow profit must be strictly increasing"))

            # winner beats the exit payoff everywhere
            wv = np.asarray(firm.winner(xs), dtype=float)
            floor = (f2.exit_payoff(xs) if not hetero else firm.exit_payoff(xs))
            gap = wv - np.asarray(floor, dtype=float)
            wx, wm = _worst(xs, gap)
            rep.checks.append(CheckResult(f"winner_exceeds_exit{tag}", "pass" if wm > 0 else "fail", wx, wm))

            # winner impatience: flow + generator applied to w stays below r*w
            w1 = _deriv(firm.winner, xs, 1, fd_h)
            w2 = _deriv(firm.winner, xs, 2, fd_h)
            slack = firm.discount * wv - (0.5 * spec.sigma2(xs) * w2 + spec.mu(xs) * w1 + pv)
            wx, wm = _worst(xs, slack)
            rep.checks.append(CheckResult(f"winner_impatience{tag}", "pass" if wm > 0 else "fail", wx, wm,
                                          "requires 0.5 sigma^2 w'' + mu w' + pi < r w"))

        # interior break-even state for the transformed flow
        hv = model.h(i, xs)
        if hv[0] < 0 < hv[-1]:
            xc = break_even_state(model, i)
            rep.break_even[i] = xc
            rep.checks.append(CheckResult(f"break_even_interior{tag or '_firm%d' % i}", "pass", xc,
                                          float(abs(model.h(i, xc)))))
        else:
            rep.checks.append(CheckResult(f"break_even_interior{tag or '_firm%d' % i}", "fail", None, None,
                                          "pi - r*l (plus exit-payoff generator terms) has no interior sign change"))

        if hetero:
            dh = np.diff(hv)
            if np.all(dh > 0):
                rep.checks.append(CheckResult(f"flow_transform_increasing{tag}", "pass", magnitude=float(np.min(dh))))
            else:
                j = int(np.argmin(dh))
                rep.checks.append(CheckResult(f"flow_transform_increasing{tag}", "fail", float(xs[j]), float(dh[j]),
                                              "pi_i + generator(l_i) must be increasing"))
            rep.checks.append(CheckResult(f"exit_payoff_smooth{tag}", "pass",
                                          detail=f"exit payoff family {firm.exit_payoff.family!r} has exact second derivative"))

    # absolute integrability of the discounted flow: inconclusive cases warn, never fail
    if not spec.deterministic and rep.ok:
        try:
            rep.checks.append(_integrability_check(model, xs))
        except Exception as exc:  # pair construction failure is reported, not raised
            rep.checks.append(CheckResult("flow_integrability", "warn", detail=f"tail check unavailable: {exc}"))

    # Lipschitz coefficients cannot be verified from samples; advisory only
    lip = spec.lipschitz_estimate()
    if spec.kind == "custom":
        rep.checks.append(CheckResult("coefficients_lipschitz", "warn",
                                      magnitude=max(lip.values()),
                                      detail=f"sampled slope bounds mu {lip['mu']:.3g}, sigma {lip['sigma']:.3g}; "
                                             "Lipschitz continuity of custom coefficients is not verifiable"))
    else:
        rep.checks.append(CheckResult("coefficients_lipschitz", "pass", magnitude=max(lip.values())))

    model.validation = rep
    return rep


def _integrability_check(model, xs) -> CheckResult:
    """Tail domination of the resolvent integrand at the window edges."""
    lo, hi = model.window
    worst = 0.0
    for i in (1, 2):
        pair = model.pair(i)
        firm = model.firms[i]
        mid = model.diffusion.x_ref
        ref = abs(float(firm.profit(mid))) + 1.0

        def kernel(y, side):
            lw = pair.log_psi(y) if side == "lo" else pair.log_phi(y)
            return abs(float(firm.profit(y))) * math.exp(float(lw) + float(dfn.log_speed_density(model.diffusion, y)))

        k_mid = kernel(mid, "lo") + kernel(mid, "hi") + 1e-300
        edge = max(kernel(lo, "lo"), kernel(hi, "hi"))
        worst = max(worst, edge / max(k_mid, ref * 1e-300))
    if worst <= 1e-8:
        return CheckResult("flow_integrability", "pass", magnitude=float(worst),
                           detail="resolvent integrand decays at both window edges")
    return CheckResult("flow_integrability", "warn", magnitude=float(worst),
                       detail="flow growth not clearly dominated at the window edges; "
                              "discounted-flow integrability is inconclusive")


def break_even_state(model: GameModel, firm: int) -> float:
    """Unique root of the transformed flow h_i on the truncation window."""
    lo, hi = model.window
    fn = lambda x: float(model.h(firm, x))
    f_lo, f_hi = fn(lo), fn(hi)
    if not (f_lo < 0 < f_hi):
        raise ModelError(
            f"no sign change of pi - r*l for firm {firm} on the window "
            f"(h({lo:.4g}) = {f_lo:.4g}, h({hi:.4g}) = {f_hi:.4g})"
        )
    root = brentq(fn, lo, hi, xtol=1e-14 * max(1.0, abs(lo), abs(hi)), rtol=8.9e-16)
    scale = max(1.0, abs(model.firms[firm].discount * model.firms[firm].exit_payoff(root)))
    if abs(fn(root)) > BREAK_EVEN_TOL * scale:
        raise ModelError(f"break-even root did not meet tolerance for firm {firm}")
    return float(root)
