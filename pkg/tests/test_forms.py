import numpy as np
import pytest

from attrition.forms import Form, FormError, affine, constant, exponential, poly, power


def test_evaluation():
    x = np.array([-1.0, 0.5, 2.0])
    assert np.allclose(affine(1.0, 2.0)(x), 1 + 2 * x)
    assert np.allclose(exponential(3.0, -0.5, 1.0)(x), 3 * np.exp(-0.5 * x) + 1)
    assert np.allclose(poly(1, 0, 2)(x), 1 + 2 * x * x)
    assert constant(4.2)(0.3) == 4.2
    xp = np.array([0.5, 2.0])
    assert np.allclose(power(2.0, 1.5, -1.0)(xp), 2 * xp**1.5 - 1)


@pytest.mark.parametrize("form", [
    affine(1.0, 2.0),
    exponential(3.0, -0.5, 1.0),
    poly(1.0, -0.3, 2.0, 0.4),
    power(2.0, 2.5, 0.1),
])
def test_derivatives_match_finite_differences(form):
    xs = np.array([0.4, 0.9, 1.7])
    h = 1e-6
    fd1 = (form(xs + h) - form(xs - h)) / (2 * h)
    fd2 = (form(xs + h) - 2 * form(xs) + form(xs - h)) / (h * h)
    assert np.allclose(form.deriv(xs, 1), fd1, rtol=1e-7, atol=1e-6)
    assert np.allclose(form.deriv(xs, 2), fd2, rtol=1e-3, atol=1e-3)


def test_constant_detection():
    assert constant(2.0).is_constant
    assert Form("poly", (3.0,)).is_constant
    assert not affine(0.0, 1.0).is_constant
    assert constant(2.0).constant_value() == 2.0
    with pytest.raises(FormError):
        affine(0, 1).constant_value()


def test_from_dict_round_trip():
    f = Form.from_dict({"family": "exp", "a": 2.0, "b": 0.3, "c": 1.0})
    assert f == exponential(2.0, 0.3, 1.0)
    assert Form.from_dict(f.to_dict()) == f
    assert Form.from_dict(3.5) == constant(3.5)
    assert Form.from_dict({"family": "poly", "coeffs": [1, 2]})(2.0) == 5.0


def test_from_dict_errors():
    with pytest.raises(FormError):
        Form.from_dict({"family": "nope", "a": 1})
    with pytest.raises(FormError):
        Form.from_dict({"family": "affine", "b": 1.0})  # missing required leading coefficient
    with pytest.raises(FormError):
        Form("exp", (1.0, float("nan"), 0.0))
