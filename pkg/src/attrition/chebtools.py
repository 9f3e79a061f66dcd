"""Piecewise Chebyshev representation of smooth functions on an interval.

Used to store the log-derivatives of numerically computed fundamental
solutions: panels of modest-degree Chebyshev series give near machine
accuracy for analytic functions, exact term-wise differentiation and
integration, and fast evaluation inside quadrature loops.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C


class PiecewiseCheb:
    def __init__(self, breaks: np.ndarray, coeffs: list[np.ndarray]):
        self.breaks = np.asarray(breaks, dtype=float)
        self.coeffs = [np.asarray(c, dtype=float) for c in coeffs]
        if len(self.coeffs) != len(self.breaks) - 1:
            raise ValueError("panel count does not match break count")

    @classmethod
    def from_function(cls, f, lo: float, hi: float, n_panels: int = 64, deg: int = 14) -> "PiecewiseCheb":
        """Interpolate a vectorized callable at Chebyshev points per panel.

        The callable is evaluated once on all panels' nodes; dense ODE
        solution objects are expensive per call but cheap per point.
        """
        breaks = np.linspace(lo, hi, n_panels + 1)
        k = np.arange(deg + 1)
        nodes = np.cos(np.pi * (2 * k + 1) / (2 * (deg + 1)))   # first-kind points on [-1, 1]
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        halves = 0.5 * (breaks[1:] - breaks[:-1])
        xs_all = (mids[:, None] + halves[:, None] * nodes[None, :]).ravel()
        ys_all = np.asarray(f(xs_all), dtype=float).reshape(n_panels, deg + 1)
        T = np.polynomial.chebyshev.chebvander(nodes, deg)
        coeffs = list(np.linalg.solve(T, ys_all.T).T)
        return cls(breaks, coeffs)

    def _locate(self, x):
        idx = np.searchsorted(self.breaks, x, side="right") - 1
        return np.clip(idx, 0, len(self.coeffs) - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        idx = self._locate(xv)
        out = np.empty_like(xv)
        for panel in np.unique(idx):
            m = idx == panel
            a, b = self.breaks[panel], self.breaks[panel + 1]
            u = (2.0 * xv[m] - (a + b)) / (b - a)
            out[m] = C.chebval(u, self.coeffs[panel])
        return out[0] if scalar else out

    def derivative(self) -> "PiecewiseCheb":
        dcoeffs = []
        for panel, c in enumerate(self.coeffs):
            a, b = self.breaks[panel], self.breaks[panel + 1]
            dcoeffs.append(C.chebder(c) * (2.0 / (b - a)))
        return PiecewiseCheb(self.breaks, dcoeffs)

    def antiderivative(self, anchor: float = None) -> "PiecewiseCheb":
        """Panel-wise exact antiderivative, continuous across breaks.

        Anchored to zero at `anchor` (default: left endpoint).
        """
        icoeffs = []
        running = 0.0
        for panel, c in enumerate(self.coeffs):
            a, b = self.breaks[panel], self.breaks[panel + 1]
            ic = C.chebint(c) * (0.5 * (b - a))
            left_val = C.chebval(-1.0, ic)
            ic = ic.copy()
            ic[0] += running - left_val
            icoeffs.append(ic)
            running = C.chebval(1.0, ic)
        out = PiecewiseCheb(self.breaks, icoeffs)
        if anchor is not None:
            shift = out(anchor)
            for ic in out.coeffs:
                ic[0] -= shift
        return out
