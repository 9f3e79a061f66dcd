import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from attrition.diffusion import (
    DiffusionError,
    DiffusionSpec,
    fundamental_solutions,
    ode_residual,
    resolve_truncation,
    scale_density,
    speed_density,
)
from attrition.forms import affine, constant


def wiener(r=0.5):
    spec = DiffusionSpec.abm(0.0, 1.0)
    return resolve_truncation(spec, r, center=0.0)


def test_scale_density_wiener_is_one():
    spec = wiener()
    xs = np.linspace(spec.trunc_lo, spec.trunc_hi, 7)
    assert np.allclose(scale_density(spec, xs), 1.0)
    assert np.allclose(speed_density(spec, xs), 2.0)


@pytest.mark.parametrize("m,s", [(-0.1, 1.0), (0.2, 0.7), (-0.35, 1.4)])
def test_scale_density_abm_vs_quadrature(m, s):
    spec = resolve_truncation(DiffusionSpec.abm(m, s), 0.2, center=0.0)
    ref = spec.x_ref
    for x in (ref - 1.3, ref + 0.4, ref + 2.1):
        closed = scale_density(spec, x)
        # independent oracle: direct quadrature of the defining integral
        integral, _ = quad(lambda u: -2 * m / (s * s), ref, x, epsabs=1e-13, epsrel=1e-12)
        assert closed == pytest.approx(math.exp(integral), rel=1e-10)
        assert closed == pytest.approx(math.exp(-2 * m * (x - ref) / (s * s)), rel=1e-12)


def test_scale_density_gbm_power_law():
    spec = resolve_truncation(DiffusionSpec.gbm(0.05, 0.4), 0.2, center=1.0)
    ref = spec.x_ref
    for x in (0.5 * ref, 1.7 * ref):
        integral, _ = quad(lambda u: -2 * 0.05 * u / (0.4 * u) ** 2, ref, x, epsabs=1e-13, epsrel=1e-12)
        assert scale_density(spec, x) == pytest.approx(math.exp(integral), rel=1e-10)
        assert scale_density(spec, x) == pytest.approx((x / ref) ** (-2 * 0.05 / 0.16), rel=1e-12)


def test_speed_density_abm_formula():
    m, s = -0.15, 0.9
    spec = resolve_truncation(DiffusionSpec.abm(m, s), 0.25, center=0.0)
    x = spec.x_ref + 0.8
    expected = (2 / s**2) * math.exp(2 * m * (x - spec.x_ref) / s**2)
    assert speed_density(spec, x) == pytest.approx(expected, rel=1e-12)


@given(x=st.floats(-3, 3), m=st.floats(-0.3, 0.3), s=st.floats(0.3, 1.5))
@settings(max_examples=100, deadline=None)
def test_speed_scale_identity(x, m, s):
    spec = DiffusionSpec.abm(m, s).with_truncation(-5.0, 5.0)
    val = speed_density(spec, x) * s**2 * scale_density(spec, x)
    assert val == pytest.approx(2.0, rel=1e-12)


def test_wiener_fundamental_pair_exponents():
    spec = wiener(r=0.5)
    pair = fundamental_solutions(spec, 0.5)
    assert pair.gamma_minus == pytest.approx(-1.0)
    assert pair.gamma_plus == pytest.approx(1.0)
    x, y = 0.7, -0.4
    assert pair.phi(x) / pair.phi(y) == pytest.approx(math.exp(-(x - y)), rel=1e-12)
    assert pair.psi(x) / pair.psi(y) == pytest.approx(math.exp(x - y), rel=1e-12)


def test_gbm_root_minus_one():
    # with 2m/s^2 = 1 and 2r/s^2 = 1 the exponent equation is g(g-1)+g-1 = 0,
    # so the decreasing solution is the reciprocal
    r = 0.18
    spec = resolve_truncation(DiffusionSpec.gbm(r, math.sqrt(2 * r)), r, center=1.0)
    pair = fundamental_solutions(spec, r)
    assert pair.gamma_minus == pytest.approx(-1.0, rel=1e-12)
    assert pair.gamma_plus == pytest.approx(1.0, rel=1e-12)
    x, y = 0.6, 1.9
    assert pair.phi(x) / pair.phi(y) == pytest.approx(y / x, rel=1e-10)


def test_ode_residuals_random_draws(rng):
    budget = {"abm": 20, "gbm": 20, "ou": 10}
    for kind, n in budget.items():
        for _ in range(n):
            r = float(rng.uniform(0.08, 0.4))
            if kind == "abm":
                spec = DiffusionSpec.abm(float(rng.uniform(-0.3, 0.1)), float(rng.uniform(0.4, 1.4)))
                center = 0.0
            elif kind == "gbm":
                spec = DiffusionSpec.gbm(float(rng.uniform(-0.1, r - 0.03)), float(rng.uniform(0.2, 0.6)))
                center = 1.0
            else:
                spec = DiffusionSpec.ou(float(rng.uniform(0.2, 0.8)), float(rng.uniform(-0.5, 1.0)),
                                        float(rng.uniform(0.3, 1.0)))
                center = 0.2
            spec = resolve_truncation(spec, r, center=center)
            pair = fundamental_solutions(spec, r)
            xs = np.linspace(spec.trunc_lo, spec.trunc_hi, 200)
            assert np.max(ode_residual(pair, xs, "phi")) <= 1e-8
            assert np.max(ode_residual(pair, xs, "psi")) <= 1e-8
            # monotonicity via the finite-difference sign test
            phis, psis = pair.phi(xs), pair.psi(xs)
            assert np.all(np.diff(phis) < 0)
            assert np.all(np.diff(psis) > 0)
            # Wronskian constancy across the grid
            wr = pair.wronskian_at(xs[25:-25])
            assert np.std(wr) / np.mean(wr) <= 1e-6


def test_custom_matches_closed_form_abm():
    ab = resolve_truncation(DiffusionSpec.abm(-0.1, 1.0), 0.2, center=0.25)
    cu = DiffusionSpec.custom(constant(-0.1), constant(1.0)).with_truncation(ab.trunc_lo, ab.trunc_hi)
    pa = fundamental_solutions(ab, 0.2)
    pc = fundamental_solutions(cu, 0.2)
    xs = np.linspace(ab.trunc_lo, ab.trunc_hi, 400)
    assert np.max(np.abs(np.exp(pc.log_phi(xs) - pa.log_phi(xs)) - 1)) <= 1e-6
    assert np.max(np.abs(np.exp(pc.log_psi(xs) - pa.log_psi(xs)) - 1)) <= 1e-6
    assert pc.wronskian_B == pytest.approx(pa.wronskian_B, rel=1e-8)


def test_hitting_transform_direction():
    spec = wiener(0.5)
    pair = fundamental_solutions(spec, 0.5)
    assert pair.hitting_transform(1.0, 0.0) == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert pair.hitting_transform(-1.0, 0.0) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_truncation_window_weight():
    spec = resolve_truncation(DiffusionSpec.abm(-0.1, 1.0), 0.2, center=0.0, weight=1e-10)
    pair = fundamental_solutions(spec, 0.2)
    c = 0.0
    # reachability weight at both edges matches the requested cutoff
    assert pair.hitting_transform(c, spec.trunc_lo) == pytest.approx(1e-10, rel=1e-6)
    assert pair.hitting_transform(c, spec.trunc_hi) == pytest.approx(1e-10, rel=1e-6)


def test_domain_and_mode_errors():
    spec = wiener()
    with pytest.raises(DiffusionError):
        scale_density(spec, spec.trunc_hi + 1.0)
    import dataclasses
    det = dataclasses.replace(DiffusionSpec.abm(-0.1, 0.0), deterministic=True).with_truncation(-1, 1)
    with pytest.raises(DiffusionError):
        fundamental_solutions(det, 0.2)
    with pytest.raises(DiffusionError):
        speed_density(det, 0.0)
    bad = DiffusionSpec.custom(constant(0.0), affine(-1.0, 1.0)).with_truncation(-2.0, 2.0)
    with pytest.raises(DiffusionError):
        fundamental_solutions(bad, 0.2)  # sigma vanishes inside the window


def test_scaling_leaves_normalized_pair_unchanged():
    # the defining equation is homogeneous: scale freedom is fixed by anchoring
    spec = wiener(0.5)
    p1 = fundamental_solutions(spec, 0.5)
    p2 = fundamental_solutions(spec, 0.5)
    xs = np.linspace(spec.trunc_lo, spec.trunc_hi, 50)
    assert np.allclose(p1.phi(xs), p2.phi(xs))
    assert p1.phi(spec.x_ref) == pytest.approx(1.0)
    assert p1.psi(spec.x_ref) == pytest.approx(1.0)
