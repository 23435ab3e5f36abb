"""Piecewise Hermite interpolation on stored nodal derivatives.

Cubic pieces use values and first derivatives; when second derivatives are
supplied the pieces are quintic.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError


class HermiteTable:
    """Piecewise Hermite interpolant through ``(x_k, y_k, dy_k[, ddy_k])``.

    ``y``, ``dy`` (and ``ddy``) have shape ``(N, ...)``; queries return arrays
    with the trailing shape.  Without ``ddy`` the pieces are C1 cubics, with it
    C2 quintics.  Out-of-range queries raise :class:`DomainError` (no
    extrapolation).
    """

    def __init__(self, x, y, dy, ddy=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dy = np.asarray(dy, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("need at least two nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("nodes must be strictly ascending")
        if y.shape[0] != x.size or dy.shape != y.shape:
            raise ValueError(f"shape mismatch: x {x.shape}, y {y.shape}, dy {dy.shape}")
        self.x = x
        self.y = y
        self.dy = dy
        self._tail = y.shape[1:]
        self._yf = y.reshape(x.size, -1)
        self._dyf = dy.reshape(x.size, -1)
        self.ddy = None
        self._ddyf = None
        if ddy is not None:
            ddy = np.asarray(ddy, dtype=float)
            if ddy.shape != y.shape:
                raise ValueError(f"shape mismatch: y {y.shape}, ddy {ddy.shape}")
            self.ddy = ddy
            self._ddyf = ddy.reshape(x.size, -1)

        self._coef = self._coefficients()

    @property
    def quintic(self):
        return self._ddyf is not None

    @property
    def domain(self):
        return float(self.x[0]), float(self.x[-1])

    def contains(self, xq):
        return self.x[0] <= xq <= self.x[-1]

    def _locate(self, xq):
        if not (self.x[0] <= xq <= self.x[-1]):
            raise DomainError(float(xq), self.domain)
        k = int(np.searchsorted(self.x, xq, side="right")) - 1
        return min(k, self.x.size - 2)

    def _coefficients(self):
        """Per-interval monomial coefficients in the local variable ``t``."""
        h = np.diff(self.x)[:, None]
        y0, y1 = self._yf[:-1], self._yf[1:]
        d0, d1 = h * self._dyf[:-1], h * self._dyf[1:]
        if self._ddyf is None:
            # rows: 1, t, t^2, t^3
            B = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [-3, -2, 3, -1], [2, 1, -2, 1]], dtype=float)
            basis = np.stack([y0, d0, y1, d1], axis=1)
        else:
            a0, a1 = h * h * self._ddyf[:-1], h * h * self._ddyf[1:]
            # rows: 1, t, ..., t^5 ; columns: y0, h d0, h^2 a0, y1, h d1, h^2 a1
            B = np.array([
                [1, 0, 0, 0, 0, 0],
                [0, 1, 0, 0, 0, 0],
                [0, 0, 0.5, 0, 0, 0],
                [-10, -6, -1.5, 10, -4, 0.5],
                [15, 8, 1.5, -15, 7, -1],
                [-6, -3, -0.5, 6, -3, 0.5],
            ])
            basis = np.stack([y0, d0, a0, y1, d1, a1], axis=1)
        return np.einsum("rc,kcj->krj", B, basis)

    def __call__(self, xq):
        """Value and derivative at scalar ``xq``."""
        k = self._locate(xq)
        x0 = self.x[k]
        h = self.x[k + 1] - x0
        t = (xq - x0) / h
        C = self._coef[k]
        deg = C.shape[0]
        tp = t ** np.arange(deg)
        val = tp @ C
        der = (np.arange(1, deg) * tp[:-1]) @ C[1:] / h
        return val.reshape(self._tail), der.reshape(self._tail)

    def value(self, xq):
        return self(xq)[0]
