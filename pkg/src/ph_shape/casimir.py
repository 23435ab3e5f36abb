"""Casimir reduction of input-state-output port-Hamiltonian systems.

A blocked system with state ``(x1, x2)``, port ``u`` and a Casimir
``x2 = f_c(x1)`` is rewritten in the coordinates ``(x1, w = x2 - f_c(x1))``.
Rows of the constraint ``wdot = 0`` that carry information are eliminated
through a Schur complement, leaving a port-Hamiltonian system in ``x1`` alone.
All matrices are evaluated pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import SingularMatrixError

ZERO_COLUMN_TOL = 1e-12
MAX_CONDITION = 1e12


def schur_complement(A, split):
    """Return ``A11 - A12 A22^{-1} A21`` for the partition at index ``split``.

    Raises
    ------
    SingularMatrixError
        If ``A22`` has condition number above ``1e12``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"square matrix required, got shape {A.shape}")
    if not 0 < split <= A.shape[0]:
        raise ValueError(f"split {split} out of range for size {A.shape[0]}")
    A11, A12 = A[:split, :split], A[:split, split:]
    A21, A22 = A[split:, :split], A[split:, split:]
    if A22.size == 0:
        return A11.copy()
    cond = np.linalg.cond(A22)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(f"trailing block singular (cond={cond:.3g})", cond)
    return A11 - A12 @ np.linalg.solve(A22, A21)


def max_sym_eig(A):
    """Largest eigenvalue of the symmetric part ``(A + A^T)/2``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])


@dataclass(frozen=True)
class BlockedPHS:
    """``[x1dot; x2dot; -y] = F(x) [dH/dx1; dH/dx2; u]`` with Casimir ``x2 = f_c(x1)``.

    ``F`` is returned as a single ``(p+c+m)`` square matrix; blocks are sliced
    by ``dims = (p, c, m)``.
    """

    dims: tuple
    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hamiltonian: Callable[[np.ndarray, np.ndarray], float]
    grad_hamiltonian: Callable[[np.ndarray, np.ndarray], tuple]
    casimir_map: Callable[[np.ndarray], np.ndarray]
    casimir_jacobian: Callable[[np.ndarray], np.ndarray]

    def blocks(self, x1, x2):
        p, c, m = self.dims
        F = self.F(x1, x2)
        idx = np.cumsum([0, p, c, m])
        return [[F[idx[i]:idx[i + 1], idx[j]:idx[j + 1]] for j in range(3)] for i in range(3)]

    def vector_field(self, x1, x2, u):
        """Return ``(x1dot, x2dot, y)``."""
        p, c, m = self.dims
        g1, g2 = self.grad_hamiltonian(x1, x2)
        out = self.F(x1, x2) @ np.concatenate([g1, g2, np.atleast_1d(u)])
        return out[:p], out[p:p + c], -out[p + c:]


@dataclass(frozen=True)
class ReducedPHS:
    """``[x1dot; -y] = F_r(x1) [dH_r/dx1; u]``."""

    dims: tuple
    F_r: Callable[[np.ndarray], np.ndarray]
    H_r: Callable[[np.ndarray], float]
    grad_H_r: Callable[[np.ndarray], np.ndarray]

    def vector_field(self, x1, u):
        p, m = self.dims
        out = self.F_r(x1) @ np.concatenate([self.grad_H_r(x1), np.atleast_1d(u)])
        return out[:p], -out[p:]


def transform_matrices(sys, x1):
    """Left/right congruence factors mapping ``F`` to ``Fbar`` (``R = L^T``)."""
    p, c, m = sys.dims
    Jf = np.asarray(sys.casimir_jacobian(x1), dtype=float).reshape(c, p)
    L = np.zeros((p + m + c, p + c + m))
    L[:p, :p] = np.eye(p)
    L[p:p + m, p + c:] = np.eye(m)
    L[p + m:, :p] = -Jf
    L[p + m:, p:p + c] = np.eye(c)
    return L


def transform_casimir(sys, x1):
    """Structure matrix in coordinates ``(x1, w)`` on the Casimir manifold.

    Returns the full ``Fbar`` with row order ``(x1dot, -y, wdot)`` and column
    order ``(dH_r/dx1, u, dH_r/dw)``.  Use :func:`fbar_blocks` to slice it.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(sys.casimir_map(x1), dtype=float)
    L = transform_matrices(sys, x1)
    return L @ sys.F(x1, x2) @ L.T


def fbar_blocks(sys, Fbar):
    p, c, m = sys.dims
    idx = np.cumsum([0, p, m, c])
    return [[Fbar[idx[i]:idx[i + 1], idx[j]:idx[j + 1]] for j in range(3)] for i in range(3)]


def select_B(Fbar_col3, tol=ZERO_COLUMN_TOL):
    """Selector whose columns pick the non-zero columns of ``Fbar_{*3}``.

    Returns a ``c x k`` matrix (``k`` may be zero).
    """
    Fbar_col3 = np.asarray(Fbar_col3, dtype=float)
    c = Fbar_col3.shape[1]
    keep = np.flatnonzero(np.max(np.abs(Fbar_col3), axis=0, initial=0.0) > tol)
    B = np.zeros((c, keep.size))
    B[keep, np.arange(keep.size)] = 1.0
    return B


def reduced_structure(sys, x1):
    """``F_r(x1)``: Schur complement of the column-selected transformed matrix."""
    p, c, m = sys.dims
    Fbar = transform_casimir(sys, x1)
    B = select_B(Fbar[:, p + m:])
    T = np.zeros((p + m + c, p + m + B.shape[1]))
    T[:p + m, :p + m] = np.eye(p + m)
    T[p + m:, p + m:] = B
    FB = T.T @ Fbar @ T
    if B.shape[1] == 0:
        return FB
    try:
        return schur_complement(FB, p + m)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"B^T Fbar33 B singular at x1={np.ravel(x1).tolist()} (cond={exc.condition:.3g})",
            exc.condition,
        ) from None


def reduce(sys):
    """Reduced-order model on the Casimir manifold (evaluated lazily per ``x1``)."""
    p, c, m = sys.dims

    def F_r(x1):
        return reduced_structure(sys, x1)

    def H_r(x1):
        return sys.hamiltonian(x1, sys.casimir_map(x1))

    def grad_H_r(x1):
        g1, g2 = sys.grad_hamiltonian(x1, sys.casimir_map(x1))
        Jf = np.asarray(sys.casimir_jacobian(x1), dtype=float).reshape(c, p)
        return g1 + Jf.T @ g2

    return ReducedPHS(dims=(p, m), F_r=F_r, H_r=H_r, grad_H_r=grad_H_r)
