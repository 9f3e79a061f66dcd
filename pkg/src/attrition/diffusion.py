"""One-dimensional regular diffusions and their analytic machinery.

A diffusion dX = mu(X) dt + sigma(X) dB on an interval with natural
boundaries is represented together with a finite truncation window on
which all quadrature and ODE work happens.  The module supplies the
scale density S', the speed density m', and the decreasing/increasing
positive solutions (phi, psi) of the discounted equation

    0.5*sigma(x)^2 f'' + mu(x) f' - r f = 0.

Built-in kinds (arithmetic/geometric Brownian motion) use closed forms;
the mean-reverting kind and fully custom coefficients go through a
stabilized numeric path: the Riccati equation for h = f'/f is integrated
in the direction in which the wanted solution dominates, giving phi and
psi in log space across the whole window without overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .chebtools import PiecewiseCheb
from .forms import Form, affine, constant

DEFAULT_TRUNCATION_WEIGHT = 1e-14

KINDS = ("abm", "gbm", "ou", "custom")


class DiffusionError(ValueError):
    """Invalid diffusion description or out-of-domain evaluation."""


class SolverError(RuntimeError):
    """Numeric construction of the fundamental pair failed."""


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients, state interval and numerical truncation window."""

    kind: str
    mu_form: Form
    sigma_form: Form
    state_lo: float = -math.inf
    state_hi: float = math.inf
    trunc_lo: float = math.nan
    trunc_hi: float = math.nan
    deterministic: bool = False

    # -- constructors ------------------------------------------------

    @classmethod
    def abm(cls, mu: float, sigma: float, **kw) -> "DiffusionSpec":
        return cls("abm", constant(mu), constant(sigma), **kw)

    @classmethod
    def gbm(cls, mu: float, sigma: float, **kw) -> "DiffusionSpec":
        kw.setdefault("state_lo", 0.0)
        return cls("gbm", affine(0.0, mu), affine(0.0, sigma), **kw)

    @classmethod
    def ou(cls, rate: float, mean: float, sigma: float, **kw) -> "DiffusionSpec":
        if rate <= 0:
            raise DiffusionError("mean reversion rate must be positive")
        return cls("ou", affine(rate * mean, -rate), constant(sigma), **kw)

    @classmethod
    def custom(cls, mu_form: Form, sigma_form: Form, state_lo=-math.inf, state_hi=math.inf, **kw) -> "DiffusionSpec":
        return cls("custom", mu_form, sigma_form, state_lo=state_lo, state_hi=state_hi, **kw)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DiffusionError(f"unknown diffusion kind {self.kind!r}")
        if not self.state_lo < self.state_hi:
            raise DiffusionError("state interval is empty")
        if self.has_truncation:
            if not (self.state_lo < self.trunc_lo < self.trunc_hi < self.state_hi):
                raise DiffusionError("truncation window must sit strictly inside the state interval")

    # -- coefficients ------------------------------------------------

    def mu(self, x):
        return self.mu_form(x)

    def sigma(self, x):
        x = np.asarray(x, dtype=float)
        if self.deterministic:
            return np.zeros_like(x)
        return self.sigma_form(x)

    def sigma2(self, x):
        s = self.sigma(x)
        return s * s

    @property
    def has_truncation(self) -> bool:
        return math.isfinite(self.trunc_lo) and math.isfinite(self.trunc_hi)

    @property
    def x_ref(self) -> float:
        """Anchor for scale-density and fundamental-solution normalization."""
        self._require_truncation()
        return 0.5 * (self.trunc_lo + self.trunc_hi)

    def _require_truncation(self):
        if not self.has_truncation:
            raise DiffusionError("truncation window not resolved; call with_truncation/resolve_truncation")

    def with_truncation(self, lo: float, hi: float) -> "DiffusionSpec":
        return replace(self, trunc_lo=float(lo), trunc_hi=float(hi))

    def check_sigma_positive(self, n: int = 257):
        """sigma > 0 across the window; the deterministic flag is the only sanctioned sigma=0 mode."""
        if self.deterministic:
            return
        xs = np.linspace(self.trunc_lo, self.trunc_hi, n)
        s = self.sigma(xs)
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            bad = xs[np.argmin(s)]
            raise DiffusionError(f"sigma must be positive on the truncation window (sigma({bad:.6g}) = {np.min(s):.3g})")

    # -- characteristic roots ----------------------------------------

    def local_roots(self, x, r: float):
        """Roots of 0.5*sigma^2 g^2 + mu g - r = 0 at state x: (negative, positive)."""
        mu = np.asarray(self.mu(x), dtype=float)
        s2 = np.asarray(self.sigma2(x), dtype=float)
        disc = np.sqrt(mu * mu + 2.0 * s2 * r)
        return (-mu - disc) / s2, (-mu + disc) / s2

    def constant_roots(self, r: float):
        """Global characteristic exponents for the constant-coefficient kinds."""
        if self.kind == "abm":
            m, s = self.mu_form.coeffs[0], self.sigma_form.coeffs[0]
            disc = math.sqrt(m * m + 2.0 * s * s * r)
            return (-m - disc) / (s * s), (-m + disc) / (s * s)
        if self.kind == "gbm":
            m, s = self.mu_form.coeffs[1], self.sigma_form.coeffs[1]
            # 0.5 s^2 g(g-1) + m g - r = 0
            b = m - 0.5 * s * s
            disc = math.sqrt(b * b + 2.0 * s * s * r)
            return (-b - disc) / (s * s), (-b + disc) / (s * s)
        raise DiffusionError(f"no constant characteristic roots for kind {self.kind!r}")

    def lipschitz_estimate(self, n: int = 513) -> dict:
        """Finite-difference Lipschitz sample of mu and sigma on the window (advisory only)."""
        self._require_truncation()
        xs = np.linspace(self.trunc_lo, self.trunc_hi, n)
        out = {}
        for name, f in (("mu", self.mu), ("sigma", self.sigma)):
            vals = np.asarray(f(xs), dtype=float)
            slopes = np.abs(np.diff(vals) / np.diff(xs))
            out[name] = float(np.max(slopes))
        return out


# ---------------------------------------------------------------------------
# truncation defaults
# ---------------------------------------------------------------------------


def resolve_truncation(spec: DiffusionSpec, r: float, center: float,
                       weight: float = DEFAULT_TRUNCATION_WEIGHT) -> DiffusionSpec:
    """Place the truncation window where discounted reachability from `center` dies.

    The left edge is where E^center[e^{-r tau_x}] = phi(center)/phi(x)
    drops below `weight`, the right edge where psi(center)/psi(x) does;
    beyond those points the neglected tails contribute O(weight) to every
    discounted functional.
    """
    if spec.deterministic:
        raise DiffusionError("deterministic mode has no reachability-based truncation; set the window explicitly")
    if not (spec.state_lo < center < spec.state_hi):
        raise DiffusionError("truncation center must lie inside the state interval")
    target = math.log(1.0 / weight)
    if spec.kind == "abm":
        gm, gp = spec.constant_roots(r)
        lo = center - target / abs(gm)
        hi = center + target / gp
    elif spec.kind == "gbm":
        gm, gp = spec.constant_roots(r)
        lo = center * weight ** (1.0 / abs(gm))
        hi = center * weight ** (-1.0 / gp)
    else:
        lo = _march_edge(spec, r, center, target, direction=-1)
        hi = _march_edge(spec, r, center, target, direction=+1)
    lo = max(lo, np.nextafter(spec.state_lo, spec.state_hi)) if math.isfinite(spec.state_lo) else lo
    hi = min(hi, np.nextafter(spec.state_hi, spec.state_lo)) if math.isfinite(spec.state_hi) else hi
    if spec.kind == "gbm" and lo <= 0:
        lo = center * weight  # defensive; the power rule above keeps lo positive already
    return spec.with_truncation(lo, hi)


def _march_edge(spec, r, center, target, direction):
    """Accumulate the local decay exponent until the reachability weight hits target."""
    x = center
    acc = 0.0
    for _ in range(100_000):
        gm, gp = spec.local_roots(x, r)
        rate = abs(gm) if direction < 0 else gp
        step = min(0.25 / max(rate, 1e-12), abs(center) * 0.05 + 0.25)
        nxt = x + direction * step
        if math.isfinite(spec.state_lo) and nxt <= spec.state_lo:
            nxt = 0.5 * (x + spec.state_lo)
            step = abs(nxt - x)
        if math.isfinite(spec.state_hi) and nxt >= spec.state_hi:
            nxt = 0.5 * (x + spec.state_hi)
            step = abs(nxt - x)
        acc += rate * step
        x = nxt
        if acc >= target:
            return x
    raise SolverError("truncation search did not converge")


# ---------------------------------------------------------------------------
# scale and speed densities
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _log_scale_cheb(spec: DiffusionSpec) -> PiecewiseCheb:
    """Antiderivative of -2 mu / sigma^2 anchored at x_ref, for kinds without closed form."""
    def integrand(x):
        return -2.0 * np.asarray(spec.mu(x)) / np.asarray(spec.sigma2(x))

    f = PiecewiseCheb.from_function(integrand, spec.trunc_lo, spec.trunc_hi, n_panels=96, deg=14)
    return f.antiderivative(anchor=spec.x_ref)


def log_scale_density(spec: DiffusionSpec, x):
    """log S'(x) with S'(x) = exp(-int_{x_ref}^x 2 mu/sigma^2)."""
    spec._require_truncation()
    x = np.asarray(x, dtype=float)
    c = spec.x_ref
    if spec.kind == "abm":
        m, s = spec.mu_form.coeffs[0], spec.sigma_form.coeffs[0]
        return -2.0 * m * (x - c) / (s * s)
    if spec.kind == "gbm":
        m, s = spec.mu_form.coeffs[1], spec.sigma_form.coeffs[1]
        return (-2.0 * m / (s * s)) * np.log(x / c)
    if spec.kind == "ou":
        a, b = spec.mu_form.coeffs  # mu(x) = a + b x, b = -rate
        s = spec.sigma_form.coeffs[0]
        return (-2.0 / (s * s)) * (a * (x - c) + 0.5 * b * (x * x - c * c))
    return _log_scale_cheb(spec)(x)


def scale_density(spec: DiffusionSpec, x):
    """S'(x), the density of the scale function, anchored to 1 at x_ref."""
    _check_window(spec, x)
    if spec.deterministic:
        raise DiffusionError("scale density is undefined in deterministic mode")
    val = np.exp(log_scale_density(spec, x))
    if not np.all(np.isfinite(val)):
        raise DiffusionError("scale density overflowed; evaluate via log_scale_density instead")
    return val


def log_speed_density(spec: DiffusionSpec, x):
    x = np.asarray(x, dtype=float)
    return math.log(2.0) - np.log(spec.sigma2(x)) - log_scale_density(spec, x)


def speed_density(spec: DiffusionSpec, x):
    """m'(x) = 2 / (sigma^2(x) S'(x))."""
    _check_window(spec, x)
    if spec.deterministic:
        raise DiffusionError("speed density is undefined in deterministic mode")
    val = np.exp(log_speed_density(spec, x))
    if not np.all(np.isfinite(val)):
        raise DiffusionError("speed density overflowed; evaluate via log_speed_density instead")
    return val


def _check_window(spec, x):
    spec._require_truncation()
    x = np.asarray(x, dtype=float)
    if np.any(x < spec.trunc_lo - 1e-12) or np.any(x > spec.trunc_hi + 1e-12):
        raise DiffusionError("state outside the truncation window")


# ---------------------------------------------------------------------------
# fundamental solutions
# ---------------------------------------------------------------------------


class FundamentalPair:
    """Decreasing (phi) and increasing (psi) solutions, normalized to 1 at x_ref.

    All evaluations are available in log space; products such as
    phi(x) psi(y) m'(y) should be assembled from the log accessors to
    avoid overflow near the window edges in strongly drifting models.
    """

    def __init__(self, spec: DiffusionSpec, r: float, log_phi, log_psi, dlog_phi, dlog_psi,
                 gamma_minus: float = None, gamma_plus: float = None):
        self.spec = spec
        self.r = float(r)
        self._log_phi = log_phi
        self._log_psi = log_psi
        self._dlog_phi = dlog_phi
        self._dlog_psi = dlog_psi
        self.gamma_minus = gamma_minus
        self.gamma_plus = gamma_plus
        c = spec.x_ref
        self.wronskian_B = float(dlog_psi(c) - dlog_phi(c))  # S'(x_ref) = 1 by anchoring
        if not self.wronskian_B > 0:
            raise SolverError("nonpositive Wronskian; fundamental pair is invalid")

    # log-space accessors -------------------------------------------

    def log_phi(self, x):
        return self._log_phi(np.asarray(x, dtype=float))

    def log_psi(self, x):
        return self._log_psi(np.asarray(x, dtype=float))

    def dlog_phi(self, x):
        return self._dlog_phi(np.asarray(x, dtype=float))

    def dlog_psi(self, x):
        return self._dlog_psi(np.asarray(x, dtype=float))

    # plain accessors ------------------------------------------------

    def phi(self, x):
        return np.exp(self.log_phi(x))

    def psi(self, x):
        return np.exp(self.log_psi(x))

    def phi_prime(self, x):
        return self.dlog_phi(x) * self.phi(x)

    def psi_prime(self, x):
        return self.dlog_psi(x) * self.psi(x)

    def phi_second(self, x):
        """From the defining ODE: f'' = 2 (r f - mu f') / sigma^2."""
        x = np.asarray(x, dtype=float)
        return 2.0 * (self.r * self.phi(x) - self.spec.mu(x) * self.phi_prime(x)) / self.spec.sigma2(x)

    def psi_second(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * (self.r * self.psi(x) - self.spec.mu(x) * self.psi_prime(x)) / self.spec.sigma2(x)

    def wronskian_at(self, x):
        """[psi' phi - psi phi'] / S' -- constant in exact arithmetic."""
        lp, ls = self.log_phi(x), self.log_psi(x)
        return (self.dlog_psi(x) - self.dlog_phi(x)) * np.exp(lp + ls - log_scale_density(self.spec, x))

    def hitting_transform(self, x, level):
        """E^x[e^{-r tau_level}]: phi ratio from above, psi ratio from below."""
        x = np.asarray(x, dtype=float)
        up = np.exp(self.log_phi(x) - self.log_phi(level))
        dn = np.exp(self.log_psi(x) - self.log_psi(level))
        return np.where(x >= level, up, dn)


def fundamental_solutions(spec: DiffusionSpec, r: float) -> FundamentalPair:
    """Build the (phi, psi) pair for discount rate r > 0."""
    if r <= 0:
        raise DiffusionError("discount rate must be positive")
    spec._require_truncation()
    if spec.deterministic:
        raise DiffusionError("fundamental pair requires sigma > 0; deterministic mode is handled separately")
    spec.check_sigma_positive()
    if spec.kind == "abm":
        gm, gp = spec.constant_roots(r)
        c = spec.x_ref
        return FundamentalPair(
            spec, r,
            log_phi=lambda x: gm * (x - c),
            log_psi=lambda x: gp * (x - c),
            dlog_phi=lambda x: np.full_like(np.asarray(x, dtype=float), gm),
            dlog_psi=lambda x: np.full_like(np.asarray(x, dtype=float), gp),
            gamma_minus=gm, gamma_plus=gp,
        )
    if spec.kind == "gbm":
        gm, gp = spec.constant_roots(r)
        c = spec.x_ref
        return FundamentalPair(
            spec, r,
            log_phi=lambda x: gm * np.log(np.asarray(x, dtype=float) / c),
            log_psi=lambda x: gp * np.log(np.asarray(x, dtype=float) / c),
            dlog_phi=lambda x: gm / np.asarray(x, dtype=float),
            dlog_psi=lambda x: gp / np.asarray(x, dtype=float),
            gamma_minus=gm, gamma_plus=gp,
        )
    return _numeric_pair(spec, r)


def _numeric_pair(spec: DiffusionSpec, r: float) -> FundamentalPair:
    """Riccati route: h = f'/f obeys h' = 2(r - mu h)/sigma^2 - h^2.

    Integrating toward increasing x the positive root is attracting, so the
    psi branch is stable left-to-right; the phi branch is stable right-to-
    left.  Seeding with the local characteristic root leaves only a boundary
    layer of contamination that decays at rate gamma_plus - gamma_minus.
    """
    lo, hi = spec.trunc_lo, spec.trunc_hi

    def rhs(x, y):
        h = y[0]
        return [2.0 * (r - spec.mu(x) * h) / spec.sigma2(x) - h * h]

    gm_lo, gp_lo = spec.local_roots(lo, r)
    gm_hi, gp_hi = spec.local_roots(hi, r)

    sol_psi = solve_ivp(rhs, (lo, hi), [float(gp_lo)], method="Radau",
                        rtol=1e-11, atol=1e-13, dense_output=True)
    if not sol_psi.success:
        raise SolverError(f"psi branch integration failed: {sol_psi.message}")
    sol_phi = solve_ivp(rhs, (hi, lo), [float(gm_hi)], method="Radau",
                        rtol=1e-11, atol=1e-13, dense_output=True)
    if not sol_phi.success:
        raise SolverError(f"phi branch integration failed: {sol_phi.message}")

    n_panels = 96
    h_psi = PiecewiseCheb.from_function(lambda xs: sol_psi.sol(xs)[0], lo, hi, n_panels=n_panels, deg=14)
    h_phi = PiecewiseCheb.from_function(lambda xs: sol_phi.sol(xs)[0], lo, hi, n_panels=n_panels, deg=14)
    g_psi = h_psi.antiderivative(anchor=spec.x_ref)
    g_phi = h_phi.antiderivative(anchor=spec.x_ref)

    grid = np.linspace(lo, hi, 801)
    if not (np.all(h_psi(grid) > 0) and np.all(h_phi(grid) < 0)):
        raise SolverError(
            "numeric fundamental pair lost monotonicity "
            f"(min dlog_psi {np.min(h_psi(grid)):.3g}, max dlog_phi {np.max(h_phi(grid)):.3g}); "
            "widen the truncation window or check the coefficients"
        )

    return FundamentalPair(spec, r, log_phi=g_phi, log_psi=g_psi,
                           dlog_phi=h_phi, dlog_psi=h_psi,
                           gamma_minus=float(gm_hi), gamma_plus=float(gp_lo))


def ode_residual(pair: FundamentalPair, x, which: str = "phi"):
    """Relative residual of 0.5 sigma^2 f'' + mu f' - r f, scaled by r|f|."""
    x = np.asarray(x, dtype=float)
    spec = pair.spec
    if which == "phi":
        h, hp = pair._dlog_phi, _dlog_derivative(pair, "phi")
    else:
        h, hp = pair._dlog_psi, _dlog_derivative(pair, "psi")
    hv = h(x)
    res = 0.5 * spec.sigma2(x) * (hp(x) + hv * hv) + spec.mu(x) * hv - pair.r
    return np.abs(res) / pair.r


def _dlog_derivative(pair, which):
    obj = pair._dlog_phi if which == "phi" else pair._dlog_psi
    if isinstance(obj, PiecewiseCheb):
        return obj.derivative()
    if pair.spec.kind == "abm":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if pair.spec.kind == "gbm":
        g = pair.gamma_minus if which == "phi" else pair.gamma_plus
        return lambda x: -g / np.asarray(x, dtype=float) ** 2
    raise SolverError("no derivative accessor for this pair representation")
