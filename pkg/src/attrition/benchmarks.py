"""Canonical benchmark models for verification suites and docs.

Winner payoffs are built by per-kind recipes that satisfy the standing
assumptions by construction (then re-checked by validation): exponential
winner payoffs for arithmetic models, affine ones for the multiplicative
and mean-reverting kinds, with the slope/level solved from the
impatience inequality.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .diffusion import DiffusionSpec, resolve_truncation
from .forms import affine, constant, exponential
from .payoffs import GameModel, validate


def _abm(mu, sigma, r, profit, winner, l1, l2, center):
    spec = resolve_truncation(DiffusionSpec.abm(mu, sigma), r, center=center)
    return GameModel.basic(spec, r, profit, winner, l1, l2)


def _gbm(mu, sigma, r, profit, winner, l1, l2, center):
    spec = resolve_truncation(DiffusionSpec.gbm(mu, sigma), r, center=center)
    return GameModel.basic(spec, r, profit, winner, l1, l2)


def _ou(rate, mean, sigma, r, profit, winner, l1, l2, center):
    spec = resolve_truncation(DiffusionSpec.ou(rate, mean, sigma), r, center=center)
    return GameModel.basic(spec, r, profit, winner, l1, l2)


BENCHMARKS = {
    "abm_base":     lambda: _abm(-0.10, 1.0, 0.20, affine(0, 1), exponential(10, 0.3, 2.0), 1.0, 1.5, 0.25),
    "abm_tight":    lambda: _abm(-0.10, 1.0, 0.20, affine(0, 1), exponential(10, 0.3, 2.0), 1.0, 1.1, 0.22),
    "abm_wide":     lambda: _abm(-0.10, 1.0, 0.20, affine(0, 1), exponential(10, 0.3, 2.0), 0.5, 2.0, 0.25),
    "abm_drift":    lambda: _abm(-0.30, 0.8, 0.25, affine(0.5, 1), exponential(8, 0.5, 2.0), 0.6, 1.0, -0.30),
    "abm_high_vol": lambda: _abm(-0.05, 1.5, 0.15, affine(0, 1), exponential(25, 0.2, 2.0), 0.8, 1.2, 0.15),
    "gbm_base":     lambda: _gbm(0.03, 0.30, 0.15, affine(0, 1), affine(1.0, 17.0), 0.5, 0.8, 1.0),
    "gbm_slow":     lambda: _gbm(-0.02, 0.25, 0.10, affine(0, 1), affine(0.8, 18.0), 0.3, 0.6, 0.5),
    "gbm_rich":     lambda: _gbm(0.02, 0.40, 0.20, affine(-0.5, 1), affine(1.6, 12.0), 1.0, 1.4, 1.0),
    "ou_base":      lambda: _ou(0.5, 1.0, 0.6, 0.20, affine(0, 1), affine(14.0, 2.0), 0.1, 0.3, 0.3),
    "ou_slow":      lambda: _ou(0.3, 0.5, 0.8, 0.15, affine(0, 1), affine(35.0, 3.0), 0.5, 0.9, 0.1),
}


def benchmark(name: str) -> GameModel:
    model = BENCHMARKS[name]()
    validate(model)
    return model


def benchmark_suite() -> dict:
    return {name: benchmark(name) for name in BENCHMARKS}


def homogeneous_benchmark() -> GameModel:
    """Equal outside options with brisk mixing dynamics (short simulated games)."""
    spec = resolve_truncation(DiffusionSpec.abm(-0.25, 1.0), 0.3, center=0.35)
    m = GameModel.basic(spec, 0.3, affine(0, 1), exponential(3.0, 0.8, 2.0), 1.0, 1.0)
    validate(m)
    return m


def sweep_benchmark(l1: float = 1.0, l2: float = 1.0) -> GameModel:
    """Low-volatility model: thresholds hug the break-even states, so every
    positive outside-option gap pushes the larger threshold past the smaller
    firm's break-even state (non-empty negative-rate witness)."""
    spec = resolve_truncation(DiffusionSpec.abm(-0.1, 0.05), 0.2, center=0.2 * max(l1, l2))
    m = GameModel.basic(spec, 0.2, affine(0, 1), exponential(10, 1.0, 3.0), l1, l2)
    validate(m)
    return m


def deterministic_benchmark(l2: float = 0.21) -> GameModel:
    """Slowly declining deterministic market; l2 near 0.21 is feasible for the
    atom profile, l2 near 1.0 makes waiting for the atom unaffordable."""
    spec = dataclasses.replace(DiffusionSpec.abm(-0.005, 0.0), deterministic=True)
    m = GameModel.basic(spec, 0.2, affine(0, 1), constant(15.0), 0.2, l2)
    validate(m)
    return m


# ---------------------------------------------------------------------------
# random model generation
# ---------------------------------------------------------------------------


def random_model(rng: np.random.Generator, kind: str = None, max_tries: int = 40) -> GameModel:
    """Draw a validated model with solvable exit thresholds from the family.

    Draws whose optimal threshold falls below the discounted-reachability
    window (possible under strong mean reversion, where waiting stays
    attractive arbitrarily deep) are redrawn rather than widened.
    """
    from .stopping import ThresholdError, optimal_threshold

    for _ in range(max_tries):
        k = kind or rng.choice(["abm", "gbm", "ou"])
        try:
            model = _draw(rng, k)
        except Exception:
            continue
        rep = validate(model)
        if not rep.ok:
            continue
        try:
            optimal_threshold(model, 1)
            optimal_threshold(model, 2)
        except ThresholdError:
            continue
        return model
    raise RuntimeError(f"could not draw a valid {kind or 'mixed'} model in {max_tries} tries")


def _draw(rng, kind):
    r = float(rng.uniform(0.1, 0.35))
    a = float(rng.uniform(-1.0, 1.0))
    b = float(rng.uniform(0.5, 2.0))
    l1 = float(rng.uniform(-0.5, 1.5))
    l2 = l1 + float(rng.uniform(0.05, 1.0))

    if kind == "abm":
        mu = float(rng.uniform(-0.35, -0.03))
        sigma = float(rng.uniform(0.4, 1.5))
        spec = DiffusionSpec.abm(mu, sigma)
        gm, gp = spec.constant_roots(r)
        eta = float(rng.uniform(0.25, 0.7)) * gp
        q = abs(0.5 * sigma**2 * eta**2 + mu * eta - r)
        w0 = l2 + float(rng.uniform(0.5, 2.0))
        # smallest w1 with the impatience margin positive at the interior minimum
        w1 = 1.0
        for _ in range(60):
            x_star = math.log(max(b / (q * w1 * eta), 1e-12)) / eta
            margin = b / eta - b * x_star - a + r * w0
            if margin > 0.1 * (1 + abs(a)):
                break
            w1 *= 2.0
        winner = exponential(w1, eta, w0)
        center = (r * l1 + r * l2) / (2 * b) - a / b
        spec = resolve_truncation(spec, r, center=center)
        return GameModel.basic(spec, r, affine(a, b), winner, l1, l2)

    if kind == "gbm":
        a = -abs(a) * 0.5                      # keep the break-even states interior to (0, inf)
        l1 = float(rng.uniform(0.1, 1.0))
        l2 = l1 + float(rng.uniform(0.05, 0.8))
        mu = float(rng.uniform(-0.1, r - 0.05))
        sigma = float(rng.uniform(0.2, 0.6))
        w_slope = b / (r - mu) * float(rng.uniform(1.5, 3.0))
        w0 = l2 + float(rng.uniform(0.5, 2.0))
        center = (r * l2 - a) / b
        spec = resolve_truncation(DiffusionSpec.gbm(mu, sigma), r, center=center)
        return GameModel.basic(spec, r, affine(a, b), affine(w0, w_slope), l1, l2)

    if kind == "ou":
        rate = float(rng.uniform(0.2, 0.8))
        mean = float(rng.uniform(-0.5, 1.5))
        sigma = float(rng.uniform(0.3, 1.0))
        w_slope = b / (rate + r) * float(rng.uniform(1.5, 3.0))
        half_width = math.sqrt(2 * math.log(1e14) * sigma**2 / rate) * 1.3 + 2.0
        edge = abs(mean) + half_width
        coef = abs(b - (rate + r) * w_slope)
        w0 = (rate * abs(mean) * w_slope + abs(a) + coef * edge) / r + l2 + 1.0
        center = (r * l2 - a) / b
        spec = resolve_truncation(DiffusionSpec.ou(rate, mean, sigma), r, center=center)
        return GameModel.basic(spec, r, affine(a, b), affine(w0, w_slope), l1, l2)

    raise ValueError(f"unknown kind {kind!r}")
