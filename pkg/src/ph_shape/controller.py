"""Runtime total-energy-shaping control law and its dynamic CbI realization.

The synthesized added inverse mass ``Ma`` and shaped potential ``V_d`` define
the closed-loop inverse mass ``M_d^{-1} = M^{-1} + Ma`` and energy
``H_d = 1/2 p^T M_d^{-1} p + V_d``.  This module evaluates:

* the static state feedback ``u(q, p, v)`` and its damping input ``v``;
* the reduced closed-loop vector field in ``(q, p)``;
* the dynamic controller with states ``(q_a1, q_a2, p_a)`` that realizes the
  same feedback through a power-preserving interconnection with the plant.

Everything is evaluated pointwise from the immutable tables, so a
:class:`ShapedController` can be shared between simulation workers.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .casimir import BlockedPHS
from .exceptions import DomainError, PhShapeError, SingularMatrixError
from .matching import AddedMassTable, ShapedPotential, compute_D, compute_Y, eval_Vd, small_cond
from .mechanics import MechanicalSystem, inv_mass_p_jacobian

log = logging.getLogger(__name__)

SKEW_TOL = 1e-10
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class CbIControllerState:
    """Dynamic controller state ``(q_a1, q_a2, p_a)``."""

    q_a1: np.ndarray
    q_a2: np.ndarray
    p_a: np.ndarray

    def __post_init__(self):
        for name in ("q_a1", "q_a2", "p_a"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not (self.q_a1.size == self.q_a2.size == self.p_a.size):
            raise ValueError("controller state blocks must share dimension n")

    @classmethod
    def on_manifold(cls, q, p, offset=None):
        """State ``(q, q, p)`` plus an optional offset ``(dq_a1, dq_a2, dp_a)``."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if offset is None:
            return cls(q, q, p)
        if isinstance(offset, CbIControllerState):
            offset = (offset.q_a1, offset.q_a2, offset.p_a)
        d1, d2, d3 = (np.asarray(o, dtype=float) for o in offset)
        return cls(q + d1, q + d2, p + d3)

    def as_vector(self):
        return np.concatenate([self.q_a1, self.q_a2, self.p_a])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 3
        return cls(x[:n], x[n:2 * n], x[2 * n:])


@dataclass(frozen=True)
class ShapedController:
    """Everything needed to evaluate ``u(q, p)``.

    Parameters
    ----------
    sys : MechanicalSystem
    mass_table : AddedMassTable
        Synthesized ``Ma`` with its derivative channel.
    potential : ShapedPotential
        ``V_d = V_m + kappa/2 Gamma^2`` on the same grid.
    kd : array_like
        Symmetric positive semidefinite ``m x m`` damping gain (a scalar is
        accepted for ``m = 1``).
    """

    sys: MechanicalSystem
    mass_table: AddedMassTable
    potential: ShapedPotential
    kd: np.ndarray

    def __post_init__(self):
        m = self.sys.m
        kd = np.atleast_2d(np.asarray(self.kd, dtype=float))
        if kd.shape == (1, 1) and m > 1:
            kd = kd[0, 0] * np.eye(m)
        if kd.shape != (m, m):
            raise ValueError(f"kd must be {m}x{m}, got {kd.shape}")
        if np.max(np.abs(kd - kd.T)) > 1e-12 * max(1.0, np.max(np.abs(kd))):
            raise ValueError("kd must be symmetric")
        if np.linalg.eigvalsh(kd)[0] < -1e-12:
            raise ValueError("kd must be positive semidefinite")
        object.__setattr__(self, "kd", kd)
        if self.mass_table.mass_coord != self.sys.mass_coord:
            raise PhShapeError("mass table was synthesized for a different mass coordinate")
        lo, hi = self.mass_table.table_range
        plo, phi = self.potential.table.domain
        if abs(lo - plo) > 1e-12 or abs(hi - phi) > 1e-12:
            raise PhShapeError(f"potential grid [{plo}, {phi}] does not match mass table [{lo}, {hi}]")

    @property
    def domain(self):
        """Interval of the mass coordinate on which the controller is defined."""
        return self.mass_table.table_range

    def contains(self, q):
        return self.mass_table.contains(float(np.asarray(q)[self.sys.mass_coord]))

    def with_kd(self, kd):
        return ShapedController(self.sys, self.mass_table, self.potential, kd)


@dataclass(frozen=True)
class _Terms:
    """Pointwise quantities shared by the controller formulas."""

    M: np.ndarray
    Minv: np.ndarray
    Ma: np.ndarray
    dMa: np.ndarray          # n x n x n, dMa[:, :, k] = dMa/dq_k
    Md: np.ndarray
    E: np.ndarray
    Y: np.ndarray
    grad_Ta: np.ndarray
    Vd: float
    grad_Vd: np.ndarray


def _terms(ctrl, q, p):
    sys = ctrl.sys
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    k = sys.mass_coord
    q_i = float(q[k])
    if not ctrl.contains(q):
        raise DomainError(q_i, ctrl.domain)
    Ma, dma = ctrl.mass_table.evaluate(q_i)
    dMa = np.zeros((sys.n, sys.n, sys.n))
    dMa[:, :, k] = dma
    M = sys.mass(q)
    Minv = sys.inv_mass(q)
    Md_inv = Minv + Ma
    cond = small_cond(Md_inv)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(f"M^-1 + Ma singular at q={q.tolist()} (cond={cond:.3g})", cond)
    Md = np.linalg.inv(Md_inv)
    dMinv = sys.inv_mass_jacobian(q)
    E = 0.5 * inv_mass_p_jacobian(dMinv, p).T @ M
    Y, _ = compute_Y(sys, Ma, dMa, q, p)
    grad_Ta = 0.5 * np.einsum("a,abk,b->k", p, dMa, p)
    Vd, grad_Vd = eval_Vd(ctrl.potential, q)
    return _Terms(M, Minv, Ma, dMa, Md, E, Y, grad_Ta, float(Vd), grad_Vd)


def _J_from(sys, Ma, Y, q):
    m = sys.m
    D = compute_D(sys, Ma, q)
    delta = D[:, :m]
    Y11, Y12 = Y[:m, :m], Y[:m, m:]
    Y21, Y22 = Y[m:, :m], Y[m:, m:]
    n = Y.shape[0]
    # the free block J11 is zero
    J21 = -delta @ Y11 + Y21
    inner = np.empty((n, n))
    inner[:m, :m] = Y11.T - Y11
    inner[:m, m:] = -Y12 - Y21.T
    inner[m:, :m] = Y12.T + Y21
    inner[m:, m:] = Y22.T - Y22
    J22 = -0.5 * D @ inner @ D.T
    J = np.zeros((n, n))
    J[:m, m:] = -J21.T
    J[m:, :m] = J21
    J[m:, m:] = 0.5 * (J22 - J22.T)  # exact skew part; the symmetric part is rounding only
    return J


def _J2_from(t, J):
    Md, Minv, E = t.Md, t.Minv, t.E
    J2 = Md @ (J + Minv @ (E - E.T) @ Minv) @ Md + Md @ Minv @ E.T - E @ Minv @ Md
    return J2


def assemble_J(ctrl, q, p):
    """Skew matrix ``J(q, p)`` solving the kinetic-energy part of matching.

    The free ``m x m`` block is set to zero.
    """
    t = _terms(ctrl, q, p)
    return _J_from(ctrl.sys, t.Ma, t.Y, np.asarray(q, dtype=float))


def assemble_J2(ctrl, q, p):
    """Closed-loop gyroscopic matrix ``J2(q, p)``."""
    t = _terms(ctrl, q, p)
    J = _J_from(ctrl.sys, t.Ma, t.Y, np.asarray(q, dtype=float))
    return _J2_from(t, J)


def closed_loop_energy(ctrl, q, p):
    """``H_d(q, p) = 1/2 p^T (M^{-1} + Ma) p + V_d(q)``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    k = ctrl.sys.mass_coord
    if not ctrl.contains(q):
        raise DomainError(float(q[k]), ctrl.domain)
    Ma, _ = ctrl.mass_table.evaluate(float(q[k]))
    Vd, _ = eval_Vd(ctrl.potential, q)
    return float(0.5 * p @ (ctrl.sys.inv_mass(q) + Ma) @ p + Vd)


def passive_output(ctrl, q, p):
    """``y = G^T grad_p H_d = G^T (M^{-1} + Ma) p``."""
    q = np.asarray(q, dtype=float)
    k = ctrl.sys.mass_coord
    if not ctrl.contains(q):
        raise DomainError(float(q[k]), ctrl.domain)
    Ma, _ = ctrl.mass_table.evaluate(float(q[k]))
    return ctrl.sys.G.T @ (ctrl.sys.inv_mass(q) + Ma) @ np.asarray(p, dtype=float)


def damping(ctrl, q, p):
    """Damping injection ``v = -K_d G^T (M^{-1} + Ma) p``."""
    return -ctrl.kd @ passive_output(ctrl, q, p)


def control_law(ctrl, q, p, v=None):
    """Static feedback ``u(q, p, v)`` that shapes the total energy.

    ``u = v - G^T {M_d M^{-1} [-E^T Ma p + grad T_a + grad V_d] - M_d J p - grad V}``.
    ``v`` defaults to zero.
    """
    sys = ctrl.sys
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.zeros(sys.m) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    t = _terms(ctrl, q, p)
    J = _J_from(sys, t.Ma, t.Y, q)
    inner = t.Md @ t.Minv @ (-t.E.T @ t.Ma @ p + t.grad_Ta + t.grad_Vd) - t.Md @ J @ p
    return v - sys.G.T @ (inner - np.asarray(sys.potential_grad(q), dtype=float))


def control_law_split(ctrl, q, p, v=None):
    """Same feedback through the kinetic/potential split of the coupling force.

    ``C_KE = M_d (Y - J) p``, ``C_PE = M_d M^{-1} grad V_d`` and
    ``u = v - G^T (C_KE + C_PE - grad V)``.  Used as an independent check of
    :func:`control_law`.
    """
    sys = ctrl.sys
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.zeros(sys.m) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    t = _terms(ctrl, q, p)
    J = _J_from(sys, t.Ma, t.Y, q)
    C_ke = t.Md @ (t.Y - J) @ p
    C_pe = t.Md @ t.Minv @ t.grad_Vd
    return v - sys.G.T @ (C_ke + C_pe - np.asarray(sys.potential_grad(q), dtype=float))


def _warn_not_pd(Md, q):
    if np.linalg.eigvalsh(0.5 * (Md + Md.T))[0] <= 0:
        warnings.warn(f"M_d not positive definite at q={np.asarray(q).tolist()}", RuntimeWarning, stacklevel=3)


def reduced_dynamics(ctrl, q, p, v=None):
    """Shaped closed-loop vector field ``(qdot, pdot)``.

    ``qdot = M^{-1} M_d grad_p H_d`` and
    ``pdot = -M_d M^{-1} grad_q H_d + J2 grad_p H_d + G v``.
    """
    sys = ctrl.sys
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.zeros(sys.m) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    t = _terms(ctrl, q, p)
    _warn_not_pd(t.Md, q)
    J = _J_from(sys, t.Ma, t.Y, q)
    J2 = _J2_from(t, J)
    grad_p = (t.Minv + t.Ma) @ p
    grad_q = sys.kinetic_energy_grad(q, p) + t.grad_Ta + t.grad_Vd
    qdot = t.Minv @ t.Md @ grad_p
    pdot = -t.Md @ t.Minv @ grad_q + J2 @ grad_p + sys.G @ v
    return qdot, pdot


# --- dynamic controller ------------------------------------------------------

def controller_hamiltonian(ctrl, cs):
    """``H_a = 1/2 p_a^T Ma(q_a2) p_a + V_d(q_a2) - V(q_a1)``."""
    sys = ctrl.sys
    k = sys.mass_coord
    if not ctrl.contains(cs.q_a2):
        raise DomainError(float(cs.q_a2[k]), ctrl.domain)
    Ma, _ = ctrl.mass_table.evaluate(float(cs.q_a2[k]))
    Vd, _ = eval_Vd(ctrl.potential, cs.q_a2)
    return float(0.5 * cs.p_a @ Ma @ cs.p_a + Vd - sys.potential(cs.q_a1))


def controller_gradient(ctrl, cs):
    """``(grad_{q_a1} H_a, grad_{q_a2} H_a, grad_{p_a} H_a)``."""
    sys = ctrl.sys
    k = sys.mass_coord
    if not ctrl.contains(cs.q_a2):
        raise DomainError(float(cs.q_a2[k]), ctrl.domain)
    Ma, dma = ctrl.mass_table.evaluate(float(cs.q_a2[k]))
    _, gVd = eval_Vd(ctrl.potential, cs.q_a2)
    gTa = np.zeros(sys.n)
    gTa[k] = 0.5 * cs.p_a @ dma @ cs.p_a
    return -np.asarray(sys.potential_grad(cs.q_a1), dtype=float), gTa + gVd, Ma @ cs.p_a


def controller_matrix(ctrl, cs):
    """Full controller structure matrix ``K`` of size ``4n + m``.

    Column order is ``(grad_{x_c} H_a, u_c1, u_c2)`` and row order
    ``(xdot_c, -y_c1, -y_c2)``; all blocks are evaluated at ``(q_a2, p_a)``.
    """
    sys = ctrl.sys
    n, m = sys.n, sys.m
    t = _terms(ctrl, cs.q_a2, cs.p_a)
    J = _J_from(sys, t.Ma, t.Y, cs.q_a2)
    MdJMd = t.Md @ J @ t.Md
    Dk = t.Md @ t.Minv @ t.E.T
    G = sys.G
    MinvMd = t.Minv @ t.Md
    I = np.eye(n)
    a, b, c, d = 0, n, 2 * n, 3 * n
    K = np.zeros((4 * n + m, 4 * n + m))
    # controller rows
    K[b:c, c:d] = MinvMd
    K[c:d, b:c] = -MinvMd.T
    K[c:d, c:d] = Dk - Dk.T + MdJMd
    K[a:b, d:4 * n] = I
    K[b:c, d:4 * n] = MinvMd
    K[c:d, d:4 * n] = MdJMd - Dk.T
    K[c:d, 4 * n:] = G
    # rows giving -y_c1
    K[d:4 * n, a:b] = -I
    K[d:4 * n, b:c] = -MinvMd.T
    K[d:4 * n, c:d] = Dk + MdJMd
    K[d:4 * n, d:4 * n] = MdJMd
    K[d:4 * n, 4 * n:] = G
    # rows giving -y_c2; the u_c2 block is zero
    K[4 * n:, c:d] = -G.T
    K[4 * n:, d:4 * n] = -G.T
    return K


def cbi_controller_dynamics(ctrl, cs, u_c1, u_c2):
    """Controller state derivative and outputs for inputs ``(u_c1, u_c2)``.

    Returns ``(cs_dot, y_c1, y_c2)`` with ``cs_dot`` a
    :class:`CbIControllerState` holding the time derivatives.
    """
    sys = ctrl.sys
    n = sys.n
    u_c1 = np.asarray(u_c1, dtype=float).reshape(n)
    u_c2 = np.atleast_1d(np.asarray(u_c2, dtype=float)).reshape(sys.m)
    K = controller_matrix(ctrl, cs)
    grad = np.concatenate(controller_gradient(ctrl, cs))
    out = K @ np.concatenate([grad, u_c1, u_c2])
    xdot = out[:3 * n]
    y_c1 = -out[3 * n:4 * n]
    y_c2 = -out[4 * n:]
    return CbIControllerState.from_vector(xdot), y_c1, y_c2


def interconnected_rhs(ctrl, q, p, cs, v_fn=None):
    """Plant and controller coupled through ``u_v = -y_c1``, ``u_c1 = M^{-1} p``.

    The plant only accepts ``u = G^T u_v``.  ``v_fn(y_c2)`` returns ``u_c2``;
    the default injects damping ``-K_d y_c2``.  Returns
    ``(qdot, pdot, cs_dot, u, y_c2)``.
    """
    sys = ctrl.sys
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    n = sys.n
    u_c1 = sys.inv_mass(q) @ p
    K = controller_matrix(ctrl, cs)
    grad = np.concatenate(controller_gradient(ctrl, cs))
    out = K[:, :4 * n] @ np.concatenate([grad, u_c1])
    # y_c2 does not depend on u_c2 (K33 = 0), so read it off first
    y_c2 = -out[4 * n:]
    u_c2 = -ctrl.kd @ y_c2 if v_fn is None else np.atleast_1d(v_fn(y_c2))
    out = out + K[:, 4 * n:] @ u_c2
    cs_dot = CbIControllerState.from_vector(out[:3 * n])
    y_c1 = -out[3 * n:4 * n]
    u = sys.G.T @ (-y_c1)
    qdot = u_c1
    pdot = -sys.kinetic_energy_grad(q, p) - np.asarray(sys.potential_grad(q), dtype=float) + sys.G @ u
    return qdot, pdot, cs_dot, u, y_c2


def closed_loop_phs(ctrl):
    """Plant-controller interconnection as a blocked system for Casimir reduction.

    State ``x1 = (q, p)``, ``x2 = (q_a1, q_a2, p_a)``, port ``u_c2``; the
    Casimir is ``x2 = (q, q, p)``.
    """
    sys = ctrl.sys
    n, m = sys.n, sys.m
    Fp = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    Gp = np.vstack([np.zeros((n, n)), np.eye(n)])

    def split(x2):
        return CbIControllerState(x2[:n], x2[n:2 * n], x2[2 * n:])

    def F(x1, x2):
        K = controller_matrix(ctrl, split(x2))
        c = 3 * n
        K11, K12, K13 = K[:c, :c], K[:c, c:c + n], K[:c, c + n:]
        K21, K22, K23 = K[c:c + n, :c], K[c:c + n, c:c + n], K[c:c + n, c + n:]
        K31, K32, K33 = K[c + n:, :c], K[c + n:, c:c + n], K[c + n:, c + n:]
        return np.block([
            [Fp + Gp @ K22 @ Gp.T, Gp @ K21, Gp @ K23],
            [K12 @ Gp.T, K11, K13],
            [K32 @ Gp.T, K31, K33],
        ])

    def hamiltonian(x1, x2):
        return sys.hamiltonian(x1[:n], x1[n:]) + controller_hamiltonian(ctrl, split(x2))

    def grad_hamiltonian(x1, x2):
        q, p = x1[:n], x1[n:]
        g1 = np.concatenate([
            sys.kinetic_energy_grad(q, p) + np.asarray(sys.potential_grad(q), dtype=float),
            sys.inv_mass(q) @ p,
        ])
        return g1, np.concatenate(controller_gradient(ctrl, split(x2)))

    def casimir_map(x1):
        return np.concatenate([x1[:n], x1[:n], x1[n:]])

    def casimir_jacobian(x1):
        I, Z = np.eye(n), np.zeros((n, n))
        return np.block([[I, Z], [I, Z], [Z, I]])

    return BlockedPHS(dims=(2 * n, 3 * n, m), F=F, hamiltonian=hamiltonian,
                      grad_hamiltonian=grad_hamiltonian, casimir_map=casimir_map,
                      casimir_jacobian=casimir_jacobian)


def reduced_structure_expected(ctrl, q, p):
    """``[[0, M^{-1} M_d, 0], [-M_d M^{-1}, J2, G], [0, -G^T, 0]]`` at ``(q, p)``."""
    sys = ctrl.sys
    n, m = sys.n, sys.m
    t = _terms(ctrl, q, p)
    J2 = _J2_from(t, _J_from(sys, t.Ma, t.Y, np.asarray(q, dtype=float)))
    Z = np.zeros((n, n))
    return np.block([
        [Z, t.Minv @ t.Md, np.zeros((n, m))],
        [-t.Md @ t.Minv, J2, sys.G],
        [np.zeros((m, n)), -sys.G.T, np.zeros((m, m))],
    ])
