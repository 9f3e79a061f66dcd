import json

import numpy as np
import pytest

from attrition.diffusion import DiffusionSpec, resolve_truncation
from attrition.forms import affine, constant, exponential, poly
from attrition.payoffs import (
    FirmSpec,
    GameModel,
    ModelError,
    ModelInvalidError,
    break_even_state,
    validate,
)


def _simple_model(profit, winner, l1=1.0, l2=2.0, r=0.2, window=(-0.5, 4.0)):
    spec = DiffusionSpec.abm(-0.1, 1.0).with_truncation(*window)
    return GameModel.basic(spec, r, profit, winner, l1, l2)


def test_validate_all_pass_example():
    # linear flow profit with the delayed-perpetuity winner payoff on a modest window
    m = _simple_model(affine(0, 1), affine(5.0, 5.0))  # w(x) = x/r + 5 at r = 0.2
    rep = validate(m)
    assert rep.ok
    assert rep.break_even[1] == pytest.approx(0.2, abs=1e-12)
    assert rep.break_even[2] == pytest.approx(0.4, abs=1e-12)


def test_validate_decreasing_profit_fails():
    m = _simple_model(affine(0, -1.0), affine(5.0, 5.0), window=(-3.0, -0.1))
    rep = validate(m)
    assert not rep.ok
    assert rep.check("profit_increasing").status == "fail"


def test_validate_winner_at_exit_floor_fails():
    m = _simple_model(affine(0, 1), constant(2.0))  # w == l2 everywhere
    rep = validate(m)
    assert rep.check("winner_exceeds_exit").status == "fail"
    with pytest.raises(ModelInvalidError):
        m.require_valid()


def test_validate_winner_impatience_direction():
    # flow above the winner perpetuity at every sampled state violates impatience
    m = _simple_model(affine(10.0, 1.0), constant(3.0), l1=0.5, l2=1.0, window=(-2.0, 2.0))
    rep = validate(m)
    assert rep.check("winner_impatience").status == "fail"


def test_break_even_examples():
    m = _simple_model(affine(0, 1), affine(5.0, 5.0))
    assert break_even_state(m, 1) == pytest.approx(0.2, abs=1e-12)

    spec = DiffusionSpec.abm(-0.1, 1.0).with_truncation(-3.0, 3.0)
    m_exp = GameModel.basic(spec, 1.0, exponential(1.0, 1.0, 0.0), affine(40.0, 5.0), 1.0, 1.0)
    assert break_even_state(m_exp, 1) == pytest.approx(0.0, abs=1e-11)

    m_cube = GameModel.basic(spec, 0.5, poly(0, 0, 0, 1), affine(40.0, 5.0), 2.0, 2.0)
    assert break_even_state(m_cube, 1) == pytest.approx(1.0, abs=1e-11)


def test_break_even_requires_sign_change():
    m = _simple_model(affine(0, 1), affine(5.0, 5.0), l1=100.0, l2=101.0)
    with pytest.raises(ModelError):
        break_even_state(m, 1)


def test_break_even_monotone_in_exit_payoff(rng):
    spec = resolve_truncation(DiffusionSpec.abm(-0.1, 1.0), 0.2, center=0.3)
    for _ in range(50):
        a = float(rng.uniform(-1, 1))
        b = float(rng.uniform(0.5, 2))
        l = float(rng.uniform(-0.5, 1.5))
        gap = float(rng.uniform(0.05, 1.0))
        m = GameModel.basic(spec, 0.2, affine(a, b), exponential(20, 0.3, l + gap + 1), l, l + gap)
        assert break_even_state(m, 1) < break_even_state(m, 2)


def test_validation_deterministic_reports():
    m = _simple_model(affine(0, 1), affine(5.0, 5.0))
    r1 = json.dumps(validate(m, grid_size=250).to_dict(), sort_keys=True)
    r2 = json.dumps(validate(m, grid_size=250).to_dict(), sort_keys=True)
    assert r1 == r2


def test_validate_rejects_small_grid():
    m = _simple_model(affine(0, 1), affine(5.0, 5.0))
    with pytest.raises(ModelError):
        validate(m, grid_size=50)


def test_heterogeneous_condition_checks():
    spec = resolve_truncation(DiffusionSpec.abm(-0.1, 1.0), 0.2, center=0.3)
    f1 = FirmSpec(0.2, affine(0, 1), exponential(10, 0.3, 2.0), constant(1.0))
    f2 = FirmSpec(0.25, affine(0.1, 1.1), exponential(11, 0.3, 2.2), affine(1.2, 0.05))
    m = GameModel.heterogeneous(spec, f1, f2)
    rep = validate(m)
    assert rep.ok
    names = {c.name for c in rep.checks}
    assert "flow_transform_increasing_firm2" in names
    assert "exit_payoff_smooth_firm2" in names
    # transformed flow for the state-dependent exit payoff: pi + mu l' - r l
    x = 1.0
    expected = (0.1 + 1.1 * x) + (-0.1) * 0.05 - 0.25 * (1.2 + 0.05 * x)
    assert m.h(2, x) == pytest.approx(expected, rel=1e-12)


def test_unordered_exit_payoffs_rejected():
    spec = DiffusionSpec.abm(-0.1, 1.0).with_truncation(-1, 1)
    with pytest.raises(ModelError):
        GameModel.basic(spec, 0.2, affine(0, 1), affine(5, 5), 2.0, 1.0)


def test_lipschitz_check_warns_for_custom():
    from attrition.forms import Form
    spec = DiffusionSpec.custom(Form("poly", (0.0, -0.2)), constant(1.0)).with_truncation(-4, 4)
    m = GameModel.basic(spec, 0.2, affine(0, 1), affine(30.0, 5.0), 0.2, 0.4)
    rep = validate(m)
    assert rep.check("coefficients_lipschitz").status == "warn"
    assert rep.ok  # warn never rejects
