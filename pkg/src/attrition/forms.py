"""Named parametric functional forms with exact derivatives.

Model primitives (drift, volatility, flow profit, winner payoff, exit
payoff) are declared as members of small named families so that model
documents stay purely numeric -- no runtime code evaluation -- and so
that second derivatives are exact wherever the analytics need them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("const", "affine", "power", "exp", "poly")


class FormError(ValueError):
    """Malformed functional-form description."""


@dataclass(frozen=True)
class Form:
    """One member of a named functional family.

    family/coeffs pairs:
        const:  (c,)                f(x) = c
        affine: (a, b)              f(x) = a + b*x
        power:  (a, p, c)           f(x) = a*x**p + c       (x > 0 unless p is a whole number)
        exp:    (a, b, c)           f(x) = a*exp(b*x) + c
        poly:   (c0, c1, ..., cn)   f(x) = sum ck*x**k
    """

    family: str
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FormError(f"unknown form family {self.family!r}")
        n = {"const": 1, "affine": 2, "power": 3, "exp": 3}.get(self.family)
        if n is not None and len(self.coeffs) != n:
            raise FormError(f"{self.family} form needs {n} coefficients, got {len(self.coeffs)}")
        if self.family == "poly" and len(self.coeffs) == 0:
            raise FormError("poly form needs at least one coefficient")
        if not all(np.isfinite(self.coeffs)):
            raise FormError(f"non-finite coefficient in {self.family} form")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self.coeffs
        if self.family == "const":
            return np.broadcast_to(np.float64(c[0]), x.shape)[()] if x.shape else np.float64(c[0])
        if self.family == "affine":
            return c[0] + c[1] * x
        if self.family == "power":
            return c[0] * x ** c[1] + c[2]
        if self.family == "exp":
            return c[0] * np.exp(c[1] * x) + c[2]
        return np.polynomial.polynomial.polyval(x, np.asarray(c))

    def deriv(self, x, order: int = 1):
        """Exact derivative of the given order (order in {1, 2})."""
        if order not in (1, 2):
            raise FormError("only first and second derivatives are supported")
        x = np.asarray(x, dtype=float)
        c = self.coeffs
        if self.family == "const":
            return np.zeros_like(x)
        if self.family == "affine":
            return np.full_like(x, c[1]) if order == 1 else np.zeros_like(x)
        if self.family == "power":
            a, p, _ = c
            if order == 1:
                return a * p * x ** (p - 1)
            return a * p * (p - 1) * x ** (p - 2)
        if self.family == "exp":
            a, b, _ = c
            return a * b**order * np.exp(b * x)
        series = np.asarray(c)
        for _ in range(order):
            series = np.polynomial.polynomial.polyder(series)
        return np.polynomial.polynomial.polyval(x, series) if series.size else np.zeros_like(x)

    @property
    def is_constant(self) -> bool:
        if self.family == "const":
            return True
        if self.family == "poly":
            return len(self.coeffs) == 1
        return False

    def constant_value(self) -> float:
        if not self.is_constant:
            raise FormError(f"{self.family} form is not constant")
        return float(self.coeffs[0])

    def to_dict(self) -> dict:
        return {"family": self.family, "coeffs": list(self.coeffs)}

    @classmethod
    def from_dict(cls, doc) -> "Form":
        if isinstance(doc, (int, float)):
            return cls("const", (float(doc),))
        if not isinstance(doc, dict) or "family" not in doc:
            raise FormError(f"expected a form description, got {doc!r}")
        fam = doc["family"]
        if fam == "poly":
            coeffs = tuple(float(v) for v in doc.get("coeffs", ()))
            return cls("poly", coeffs)
        names = {"const": ("c",), "affine": ("a", "b"), "power": ("a", "p", "c"), "exp": ("a", "b", "c")}
        if fam not in names:
            raise FormError(f"unknown form family {fam!r}")
        if "coeffs" in doc:
            return cls(fam, tuple(float(v) for v in doc["coeffs"]))
        missing = [k for k in names[fam] if k not in doc]
        # trailing offsets default to zero so {"family": "exp", "a": 1, "b": 0.3} reads naturally
        coeffs = tuple(float(doc.get(k, 0.0)) for k in names[fam])
        if names[fam][0] in missing or (fam == "power" and "p" in missing):
            raise FormError(f"{fam} form is missing required key(s) {missing}")
        return cls(fam, coeffs)


def constant(c: float) -> Form:
    return Form("const", (float(c),))


def affine(a: float, b: float) -> Form:
    return Form("affine", (float(a), float(b)))


def power(a: float, p: float, c: float = 0.0) -> Form:
    return Form("power", (float(a), float(p), float(c)))


def exponential(a: float, b: float, c: float = 0.0) -> Form:
    return Form("exp", (float(a), float(b), float(c)))


def poly(*coeffs: float) -> Form:
    return Form("poly", tuple(float(v) for v in coeffs))
