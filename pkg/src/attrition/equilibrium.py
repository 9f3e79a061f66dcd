"""Equilibrium construction and certification for the two-firm exit game.

Produces, for a validated model with sigma > 0:

  * the always-existing pure profile where the better-outside-option firm
    exits at its single-player threshold and the rival never exits, with
    an analytic no-deviation certificate;
  * the gap threshold kappa below which the reversed pure profile is also
    an equilibrium (plus a direct sufficient-condition check, since kappa
    is only sufficient);
  * either the mixed profile that keeps both firms indifferent on a common
    support (identical outside options) or a non-existence certificate
    exhibiting the threshold gap and the interval where the required
    opponent exit rate turns negative.

The deterministic mode (sigma == 0, strictly negative drift) instead
verifies a candidate profile with an instantaneous exit probability q1 at
the lower threshold, scanning for the feasible q1 range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .payoffs import GameModel
from .stopping import expected_profit, optimal_threshold

HOMOGENEITY_RTOL = 1e-9
W_INF_GRID = 2001
CERT_GRID = 201


class EquilibriumError(RuntimeError):
    """Internal inconsistency: an unconditional certificate failed numerically."""


class ModeError(ValueError):
    """Operation called in the wrong sigma mode."""


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """Instantaneous exit with probability prob at the first hit of level from above."""
    level: float
    prob: float

    def __post_init__(self):
        if not 0.0 < self.prob < 1.0:
            raise ValueError("atom probability must lie in (0, 1)")


class IndifferenceHazard:
    """Exit rate that keeps the given rival indifferent, cut off above the support."""

    def __init__(self, model: GameModel, keeps_indifferent: int, cutoff: float):
        self.model = model
        self.keeps_indifferent = keeps_indifferent
        self.cutoff = float(cutoff)
        self._fast = self._build_fast(model.firms[keeps_indifferent])

    @staticmethod
    def _build_fast(firm):
        # simulation hot path: constant exit payoff with affine profit needs no
        # generic dispatch per step
        l_form, pi_form, w_form = firm.exit_payoff, firm.profit, firm.winner
        if not (l_form.is_constant and pi_form.family == "affine"):
            return None
        l = l_form.constant_value()
        rl = firm.discount * l
        a, b = pi_form.coeffs
        if w_form.family == "exp":
            wa, wb, wc = w_form.coeffs
            return lambda x: (rl - a - b * x) / (wa * np.exp(wb * x) + (wc - l))
        if w_form.family == "affine":
            wa, wb = w_form.coeffs
            return lambda x: (rl - a - b * x) / ((wa - l) + wb * x)
        if w_form.is_constant:
            wc = w_form.constant_value()
            return lambda x: (rl - a - b * x) / (wc - l)
        return None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self._fast is not None:
            rate = self._fast(x)
        else:
            rate = candidate_exit_rate(self.model, self.keeps_indifferent, x)
        return np.where(x <= self.cutoff, np.maximum(rate, 0.0), 0.0)

    def to_dict(self):
        return {"kind": "indifference", "keeps_indifferent": self.keeps_indifferent, "cutoff": self.cutoff}


@dataclass
class Strategy:
    """Markov strategy: threshold exit region, hazard rate, finitely many atoms."""
    exit_threshold: float = None
    hazard: object = None          # callable x -> rate, or None
    atoms: tuple = ()

    def __post_init__(self):
        if self.hazard is not None and self.exit_threshold is not None:
            sup = getattr(self.hazard, "cutoff", None)
            if sup is not None and sup > self.exit_threshold:
                raise ValueError("hazard support must not meet the exit region")

    @property
    def is_pure(self) -> bool:
        return self.hazard is None and not self.atoms

    def hazard_at(self, x):
        if self.hazard is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.hazard(x)

    def to_dict(self):
        return {
            "exit_threshold": self.exit_threshold,
            "hazard": self.hazard.to_dict() if hasattr(self.hazard, "to_dict") else
                      (None if self.hazard is None else "custom"),
            "atoms": [{"level": a.level, "prob": a.prob} for a in self.atoms],
        }


def never_exit() -> Strategy:
    return Strategy()


@dataclass
class StrategyProfile:
    firm1: Strategy
    firm2: Strategy

    def strategy(self, i: int) -> Strategy:
        return self.firm1 if i == 1 else self.firm2

    def opponent(self, i: int) -> Strategy:
        return self.firm2 if i == 1 else self.firm1

    def to_dict(self):
        return {"firm1": self.firm1.to_dict(), "firm2": self.firm2.to_dict()}


# ---------------------------------------------------------------------------
# pure equilibria
# ---------------------------------------------------------------------------


@dataclass
class AnalyticCertificate:
    name: str
    grid_lo: float
    grid_hi: float
    grid_n: int
    min_margin: float
    argmin: float
    ok: bool

    def to_dict(self):
        return {"name": self.name, "grid": [self.grid_lo, self.grid_hi, self.grid_n],
                "min_margin": self.min_margin, "argmin": self.argmin, "ok": self.ok}


def _waiting_value(model: GameModel, firm: int, opp_threshold: float, x):
    """Value for `firm` of waiting until the rival exits at its threshold.

    R(x) + [w(theta) - R(theta)] / phi(theta) * phi(x) for x above the threshold.
    """
    pair = model.pair(firm)
    w_theta = float(model.firms[firm].winner(opp_threshold))
    r_theta = expected_profit(model, opp_threshold, firm)
    coef = (w_theta - r_theta) * math.exp(-float(pair.log_phi(opp_threshold)))
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    out = np.array([expected_profit(model, float(xi), firm) for xi in xv])
    out = out + coef * np.exp(pair.log_phi(xv))
    return float(out[0]) if scalar else out


def pure_mpe_weak_exits(model: GameModel):
    """Pure profile: firm 2 exits at its single-player threshold, firm 1 never.

    The certificate samples the waiting value of firm 1 above the rival's
    threshold against its exit payoff; existence is unconditional, so a
    failed certificate signals numerical breakdown and raises.
    """
    model.require_valid()
    _require_stochastic(model)
    sol2 = optimal_threshold(model, 2)
    profile = StrategyProfile(never_exit(), Strategy(exit_threshold=sol2.threshold))
    lo, hi = model.window
    xs = np.linspace(sol2.threshold, hi, CERT_GRID)
    vals = _waiting_value(model, 1, sol2.threshold, xs)
    margin = vals - np.asarray(model.firms[1].exit_payoff(xs), dtype=float)
    j = int(np.argmin(margin))
    cert = AnalyticCertificate("weak_exits_no_deviation", float(xs[0]), float(xs[-1]), CERT_GRID,
                               float(margin[j]), float(xs[j]), bool(margin[j] > 0))
    if not cert.ok:
        raise EquilibriumError(
            f"unconditional no-deviation certificate failed (margin {margin[j]:.3g} at x={xs[j]:.6g}); "
            "this indicates numerical breakdown, not a model property"
        )
    return profile, cert


def kappa_theta(model: GameModel) -> float:
    """Largest threshold gap guaranteed safe for the strong-exits profile.

    Solves (inf w - R(t)) / phi(t) = stop-coefficient of firm 2 at its
    threshold for t below that threshold; +inf when no root exists in the
    window (the defining curve stays above the target everywhere).
    """
    model.require_valid()
    _require_stochastic(model)
    sol2 = optimal_threshold(model, 2)
    lo, hi = model.window
    xs = np.linspace(lo, hi, W_INF_GRID)
    w_inf = float(np.min(model.firms[2].winner(xs)))
    pair = model.pair(2)
    target = sol2.coef_at_threshold

    def gap_fn(t):
        return (w_inf - expected_profit(model, t, 2)) * math.exp(-float(pair.log_phi(t))) - target

    t_hi = sol2.threshold
    val_hi = gap_fn(t_hi)
    if val_hi <= 0:
        raise EquilibriumError("waiting-for-the-prize curve is not above the target at the threshold")
    from .stopping import _bracket_candidates  # same marching logic as the threshold solve
    bracket = None
    for cand in _bracket_candidates(lo, t_hi, multiplicative=(lo > 0 and hi / lo > 1e3)):
        if gap_fn(cand) < 0:
            bracket = cand
            break
    if bracket is None:
        return math.inf
    root = brentq(gap_fn, bracket, t_hi, xtol=1e-14 * max(1.0, abs(t_hi - bracket)), rtol=8.9e-16)
    return float(sol2.threshold - root)


def pure_mpe_strong_exits(model: GameModel):
    """Pure profile with firm 1 exiting at its own threshold, if supportable.

    Returns (profile, certificate, reason) where profile is None when firm 2
    would rather exit than wait.  reason is "kappa" when the gap test passes,
    "condition-direct" when only the direct waiting-value check does.
    """
    model.require_valid()
    _require_stochastic(model)
    sol1 = optimal_threshold(model, 1)
    sol2 = optimal_threshold(model, 2)
    gap = sol2.threshold - sol1.threshold
    kappa = kappa_theta(model)

    xs = np.linspace(sol1.threshold, sol2.threshold, CERT_GRID)
    xs[0] = np.nextafter(sol1.threshold, sol2.threshold)
    vals = _waiting_value(model, 2, sol1.threshold, xs)
    margin = vals - np.asarray(model.firms[2].exit_payoff(xs), dtype=float)
    j = int(np.argmin(margin))
    cert = AnalyticCertificate("strong_exits_waiting_beats_exit", float(xs[0]), float(xs[-1]), CERT_GRID,
                               float(margin[j]), float(xs[j]), bool(margin[j] > 0))

    if gap < kappa and not cert.ok:
        raise EquilibriumError(
            "gap below kappa but the direct waiting-value check failed; numerical inconsistency "
            f"(gap {gap:.6g}, kappa {kappa:.6g}, margin {cert.min_margin:.3g})"
        )
    if gap < kappa:
        reason = "kappa"
    elif cert.ok:
        reason = "condition-direct"
    else:
        return None, cert, "absent"
    profile = StrategyProfile(Strategy(exit_threshold=sol1.threshold), never_exit())
    return profile, cert, reason


# ---------------------------------------------------------------------------
# mixed equilibria
# ---------------------------------------------------------------------------


def candidate_exit_rate(model: GameModel, firm_to_keep_indifferent: int, x):
    """Signed rival exit rate that would keep the given firm indifferent.

    (r l_i - pi(x)) / (w(x) - l_i), generalized through the exit-payoff
    transform; negative values witness that indifference is impossible.
    """
    i = firm_to_keep_indifferent
    x = np.asarray(x, dtype=float)
    spec = model.firms[i]
    denom = np.asarray(spec.winner(x), dtype=float) - np.asarray(spec.exit_payoff(x), dtype=float)
    return -np.asarray(model.h(i, x), dtype=float) / denom


@dataclass
class MixedEquilibrium:
    profile: StrategyProfile
    support_hi: float
    thresholds: tuple

    def to_dict(self):
        return {"profile": self.profile.to_dict(), "support_hi": self.support_hi,
                "thresholds": list(self.thresholds)}


@dataclass
class NonExistenceCertificate:
    theta1: float
    theta2: float
    gap: float
    witness_lo: float = None       # interval where the rate keeping firm 1 indifferent is negative
    witness_hi: float = None
    witness_rate_mid: float = None
    note: str = ""

    @property
    def has_witness(self) -> bool:
        return self.witness_lo is not None and self.witness_hi is not None and self.witness_hi > self.witness_lo

    def to_dict(self):
        return {"theta1": self.theta1, "theta2": self.theta2, "gap": self.gap,
                "witness_interval": [self.witness_lo, self.witness_hi] if self.has_witness else None,
                "witness_rate_mid": self.witness_rate_mid, "note": self.note}


def _homogeneous(model: GameModel) -> bool:
    if model.firms_identical:
        return True
    f1, f2 = model.firms[1], model.firms[2]
    shared = (f1.discount == f2.discount and f1.profit == f2.profit and f1.winner == f2.winner
              and f1.exit_payoff.is_constant and f2.exit_payoff.is_constant)
    if not shared:
        return False
    l1, l2 = f1.exit_payoff.constant_value(), f2.exit_payoff.constant_value()
    return abs(l1 - l2) <= HOMOGENEITY_RTOL * max(1.0, abs(l2))


def mixed_mpe_analysis(model: GameModel):
    """Mixed equilibrium (identical outside options) or a non-existence certificate.

    The certificate carries the threshold gap and, when the candidate common
    support reaches above firm 1's break-even state, the interval on which
    the exit rate required to keep firm 1 indifferent is negative.
    """
    model.require_valid()
    _require_stochastic(model)
    sol1 = optimal_threshold(model, 1)
    sol2 = optimal_threshold(model, 2)

    if _homogeneous(model):
        theta = 0.5 * (sol1.threshold + sol2.threshold)
        profile = StrategyProfile(
            Strategy(hazard=IndifferenceHazard(model, keeps_indifferent=2, cutoff=theta)),
            Strategy(hazard=IndifferenceHazard(model, keeps_indifferent=1, cutoff=theta)),
        )
        return MixedEquilibrium(profile, support_hi=theta, thresholds=(sol1.threshold, sol2.threshold))

    gap = sol2.threshold - sol1.threshold
    if abs(gap) <= HOMOGENEITY_RTOL * max(1.0, abs(sol2.threshold)):
        # heterogeneous primitives but numerically equal thresholds: outside the clean dichotomy
        return NonExistenceCertificate(sol1.threshold, sol2.threshold, gap,
                                       note="indistinguishable thresholds at tolerance; "
                                            "dichotomy not decidable for these primitives")
    xc1 = model.x_c(1)
    cert = NonExistenceCertificate(sol1.threshold, sol2.threshold, gap)
    if xc1 < sol2.threshold:
        cert.witness_lo, cert.witness_hi = xc1, sol2.threshold
        mid = 0.5 * (xc1 + sol2.threshold)
        cert.witness_rate_mid = float(candidate_exit_rate(model, 1, mid))
        cert.note = ("common support would need to reach the larger threshold, but the rate keeping "
                     "firm 1 indifferent is negative on the witness interval")
    else:
        cert.note = ("threshold gap: the common support would need two different upper endpoints; "
                     "required rates stay nonnegative below the smaller break-even state")
    return cert


# ---------------------------------------------------------------------------
# deterministic mode
# ---------------------------------------------------------------------------


@dataclass
class DeterministicCheck:
    q1: float
    feasible: bool
    min_margin: float
    worst_x: float
    indifference_error: float
    rates_nonnegative: bool
    no_atom: bool = False

    def to_dict(self):
        return {"q1": self.q1, "feasible": self.feasible, "min_margin": self.min_margin,
                "worst_x": self.worst_x, "indifference_error": self.indifference_error,
                "rates_nonnegative": self.rates_nonnegative, "no_atom": self.no_atom}


@dataclass
class DeterministicReport:
    theta1: float
    theta2: float
    check: DeterministicCheck
    feasible_q_lo: float = None
    feasible_q_hi: float = None
    scan_step: float = 1e-3

    @property
    def interval_empty(self) -> bool:
        return self.feasible_q_lo is None

    def to_dict(self):
        return {"theta1": self.theta1, "theta2": self.theta2, "check": self.check.to_dict(),
                "feasible_q_interval": None if self.interval_empty else [self.feasible_q_lo, self.feasible_q_hi],
                "scan_step": self.scan_step}


def _require_stochastic(model):
    if model.diffusion.deterministic:
        raise ModeError("this operation requires sigma > 0; use the deterministic-mode functions")


def _deterministic_transit(model: GameModel, theta1: float, x_hi: float):
    """Discounted flow F(x) and discount D(x) accrued falling from x to theta1.

    dF/dx = tau'(x) (pi(x) - r F), dD/dx = -r tau'(x) D with tau' = 1/(-mu);
    solved once on [theta1, x_hi] with dense output (firm 2's accounting).
    """
    spec = model.diffusion
    r2 = model.firms[2].discount
    pi2 = model.firms[2].profit

    def rhs(x, y):
        tau_p = 1.0 / (-float(spec.mu(x)))
        return [tau_p * (float(pi2(x)) - r2 * y[0]), -r2 * tau_p * y[1]]

    sol = solve_ivp(rhs, (theta1, x_hi), [0.0, 1.0], method="Radau",
                    rtol=1e-11, atol=1e-13, dense_output=True)
    if not sol.success:
        raise EquilibriumError(f"deterministic transit integration failed: {sol.message}")
    return sol.sol


def _stay_value_ode(model: GameModel, firm: int, theta1: float):
    """Value of never exiting under the rival's indifference hazard, below theta1.

    mu U' = (r + lam) U - pi - lam w, integrated upward from the window edge
    with the frozen-state value as the boundary guess; the hazard construction
    makes U identically the exit payoff, so the residual is a verification.
    """
    spec = model.diffusion
    lo, _ = model.window
    f = model.firms[firm]
    rival = 3 - firm

    def lam(x):
        return max(float(candidate_exit_rate(model, firm, x)), 0.0)

    def rhs(x, y):
        la = lam(x)
        return [((f.discount + la) * y[0] - float(f.profit(x)) - la * float(f.winner(x))) / float(spec.mu(x))]

    la0 = lam(lo)
    u0 = (float(f.profit(lo)) + la0 * float(f.winner(lo))) / (f.discount + la0)
    sol = solve_ivp(rhs, (lo, theta1), [u0], method="Radau", rtol=1e-10, atol=1e-12, dense_output=True)
    if not sol.success:
        raise EquilibriumError(f"deterministic indifference integration failed: {sol.message}")
    return sol.sol


def deterministic_mixed_mpe(model: GameModel, q1: float = None, scan_step: float = 1e-3,
                            grid_n: int = 201) -> DeterministicReport:
    """Verify the atom-plus-hazard candidate profile in the deterministic mode.

    Checks (a) firm 2 prefers waiting through (theta1, theta2] for the atom
    [q1*w(theta1) + (1-q1)*l2 continuation], and (b) both indifference hazards
    hold below theta1.  q1 is an input to verify; the feasible q1 interval is
    scanned on a grid regardless.
    """
    model.require_valid()
    spec = model.diffusion
    if not spec.deterministic:
        raise ModeError("deterministic analysis requires the sigma == 0 mode")
    xs_all = np.linspace(*model.window, 101)
    if np.any(spec.mu(xs_all) >= 0):
        raise ModeError("deterministic mode requires strictly negative drift on the window")

    theta1, theta2 = model.x_c(1), model.x_c(2)
    l2_fn = model.firms[2].exit_payoff
    w2_fn = model.firms[2].winner

    transit = _deterministic_transit(model, theta1, theta2)
    xs = np.linspace(theta1, theta2, grid_n)[1:]  # condition (a) holds trivially at theta1
    F = transit(xs)[0]
    D = transit(xs)[1]
    l2v = np.asarray(l2_fn(xs), dtype=float)
    w_at = float(w2_fn(theta1))
    l2_at = float(l2_fn(theta1))

    def margin_for(q):
        cont = q * w_at + (1.0 - q) * l2_at
        m = F + D * cont - l2v
        j = int(np.argmin(m))
        return float(m[j]), float(xs[j])

    # (b): hazard nonnegativity and the stay-forever indifference identity below theta1
    lo = model.window[0]
    check_lo = max(lo + 0.05 * (theta1 - lo), theta1 - 10.0 * max(1.0, theta2 - theta1))
    xs_b = np.linspace(check_lo, theta1, 101)
    rates_ok = True
    ind_err = 0.0
    for i in (1, 2):
        rate = candidate_exit_rate(model, i, xs_b)
        rates_ok &= bool(np.all(rate >= -1e-12))
        stay = _stay_value_ode(model, i, theta1)
        li = np.asarray(model.firms[i].exit_payoff(xs_b), dtype=float)
        err = np.max(np.abs(stay(xs_b)[0] - li) / np.maximum(1.0, np.abs(li)))
        ind_err = max(ind_err, float(err))

    def build_check(q):
        mm, wx = margin_for(q)
        return DeterministicCheck(
            q1=q, feasible=bool(mm >= -1e-12 and rates_ok and ind_err <= 1e-6),
            min_margin=mm, worst_x=wx, indifference_error=ind_err,
            rates_nonnegative=rates_ok, no_atom=(q == 0.0),
        )

    # scan: the waiting margin is monotone increasing in q1
    qs = np.arange(scan_step, 1.0, scan_step)
    feas = np.array([margin_for(q)[0] >= -1e-12 for q in qs]) if rates_ok and ind_err <= 1e-6 \
        else np.zeros(len(qs), dtype=bool)
    if np.any(feas):
        q_lo = float(qs[int(np.argmax(feas))])
        q_hi = float(qs[len(qs) - 1 - int(np.argmax(feas[::-1]))])
    else:
        q_lo = q_hi = None

    check = build_check(float(q1)) if q1 is not None else build_check(q_lo if q_lo is not None else 0.5)
    return DeterministicReport(theta1=theta1, theta2=theta2, check=check,
                               feasible_q_lo=q_lo, feasible_q_hi=q_hi, scan_step=scan_step)


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumReport:
    thresholds: dict
    kappa: float
    pure_weak: StrategyProfile
    pure_weak_cert: AnalyticCertificate
    pure_strong: StrategyProfile = None
    pure_strong_cert: AnalyticCertificate = None
    pure_strong_reason: str = "absent"
    mixed: MixedEquilibrium = None
    nonexistence: NonExistenceCertificate = None
    x0_note: str = ""
    oracle: dict = field(default_factory=dict)

    def classification(self) -> str:
        return "mixed+pure" if self.mixed is not None else "pure-only"

    def to_dict(self):
        return {
            "thresholds": self.thresholds,
            "kappa": self.kappa if math.isfinite(self.kappa) else "inf",
            "classification": self.classification(),
            "pure_weak": {"profile": self.pure_weak.to_dict(), "certificate": self.pure_weak_cert.to_dict()},
            "pure_strong": None if self.pure_strong is None else
                           {"profile": self.pure_strong.to_dict(),
                            "certificate": self.pure_strong_cert.to_dict(),
                            "reason": self.pure_strong_reason},
            "mixed": None if self.mixed is None else self.mixed.to_dict(),
            "nonexistence": None if self.nonexistence is None else self.nonexistence.to_dict(),
            "x0_note": self.x0_note,
            "oracle": self.oracle,
        }


def analyze(model: GameModel, x0: float = None) -> EquilibriumReport:
    """Assemble the full equilibrium report for a validated sigma > 0 model."""
    model.require_valid()
    _require_stochastic(model)
    sol1 = optimal_threshold(model, 1)
    sol2 = optimal_threshold(model, 2)
    weak_profile, weak_cert = pure_mpe_weak_exits(model)
    kappa = kappa_theta(model)
    strong_profile, strong_cert, reason = pure_mpe_strong_exits(model)
    outcome = mixed_mpe_analysis(model)

    report = EquilibriumReport(
        thresholds={"theta1": sol1.threshold, "theta2": sol2.threshold,
                    "gap": sol2.threshold - sol1.threshold,
                    "break_even1": sol1.break_even, "break_even2": sol2.break_even},
        kappa=kappa,
        pure_weak=weak_profile, pure_weak_cert=weak_cert,
        pure_strong=strong_profile, pure_strong_cert=strong_cert, pure_strong_reason=reason,
    )
    if isinstance(outcome, MixedEquilibrium):
        report.mixed = outcome
    else:
        report.nonexistence = outcome
    if x0 is not None and x0 < min(sol1.threshold, sol2.threshold):
        report.x0_note = ("initial state below both thresholds: pure-profile uniqueness "
                          "is not asserted in this regime, and multi-threshold profiles are not enumerated")
    return report
