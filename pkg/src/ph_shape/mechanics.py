"""Underactuated mechanical systems in port-Hamiltonian form.

A system is described by its mass matrix ``M(q)``, potential ``V(q)`` and the
convention that the first ``m`` coordinates are actuated, i.e. the input map is
``G = [I_m; 0]``.  Everything downstream (matching, control, simulation)
consumes the evaluators defined here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .exceptions import PhShapeError, SingularMassError

MAX_CONDITION = 1e12


def _fd_step(x):
    return 1e-6 * (1.0 + abs(x))


@dataclass(frozen=True)
class PhaseState:
    """Configuration ``q`` and momentum ``p`` of a mechanical system."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if q.shape != p.shape:
            raise ValueError(f"q and p must have equal length, got {q.size} and {p.size}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def as_vector(self):
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])


@dataclass(frozen=True)
class BlockPartition:
    """Blocks of an ``n x n`` matrix split along the actuated/unactuated directions.

    ``b11 = G^T A G``, ``b21 = G_perp A G``, ``b22 = G_perp A G_perp^T`` and
    ``b12 = G^T A G_perp^T``.
    """

    b11: np.ndarray
    b21: np.ndarray
    b22: np.ndarray
    b12: Optional[np.ndarray] = None

    def assemble(self):
        b12 = self.b21.T if self.b12 is None else self.b12
        return np.block([[self.b11, b12], [self.b21, self.b22]])


@dataclass(frozen=True)
class MechanicalSystem:
    """An ``n``-DOF mechanical system with ``m`` actuated coordinates.

    Parameters
    ----------
    n, m : int
        Configuration and input dimensions, ``0 < m < n``.
    mass : callable
        ``q -> M(q)``, symmetric positive definite.
    potential, potential_grad : callable
        ``q -> V(q)`` and ``q -> dV/dq``.
    inv_mass : callable, optional
        Closed-form ``M^{-1}(q)``; falls back to a checked numerical inverse.
    inv_mass_jacobian : callable, optional
        ``q -> dMinv`` with ``dMinv[i, j, k] = d(M^{-1})_{ij} / dq_k``.  When
        absent, central differences with step ``1e-6 (1 + |q_k|)`` are used.
    mass_coord : int, optional
        Index of the single coordinate the mass matrix depends on.  Required
        for the ODE synthesis path.
    """

    n: int
    m: int
    mass: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], float]
    potential_grad: Callable[[np.ndarray], np.ndarray]
    inv_mass_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inv_mass_jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    mass_coord: Optional[int] = None
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.m < self.n):
            raise ValueError(f"need 0 < m < n, got n={self.n}, m={self.m}")
        if self.mass_coord is not None and not (0 <= self.mass_coord < self.n):
            raise ValueError(f"mass_coord {self.mass_coord} out of range for n={self.n}")

    @property
    def r(self):
        """Degree of underactuation ``n - m``."""
        return self.n - self.m

    @property
    def G(self):
        return np.vstack([np.eye(self.m), np.zeros((self.r, self.m))])

    @property
    def G_perp(self):
        return np.hstack([np.zeros((self.r, self.m)), np.eye(self.r)])

    def inv_mass(self, q):
        q = np.asarray(q, dtype=float)
        if self.inv_mass_fn is not None:
            return self.inv_mass_fn(q)
        M = self.mass(q)
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise SingularMassError(q, cond)
        return np.linalg.inv(M)

    def inv_mass_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        if self.inv_mass_jacobian_fn is not None:
            return self.inv_mass_jacobian_fn(q)
        return fd_inv_mass_jacobian(self, q)

    def kinetic_energy(self, q, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * p @ self.inv_mass(q) @ p

    def hamiltonian(self, q, p):
        return self.kinetic_energy(q, p) + float(self.potential(q))

    def kinetic_energy_grad(self, q, p):
        """``dT/dq`` computed directly from the inverse-mass Jacobian."""
        p = np.asarray(p, dtype=float)
        dMinv = self.inv_mass_jacobian(q)
        return 0.5 * np.einsum("i,ijk,j->k", p, dMinv, p)

    def check_mass(self, q, sym_tol=1e-12):
        """Raise if ``M(q)`` is not symmetric positive definite."""
        M = self.mass(q)
        if np.max(np.abs(M - M.T)) > sym_tol * max(1.0, np.max(np.abs(M))):
            raise PhShapeError(f"mass matrix not symmetric at q={np.ravel(q).tolist()}")
        lam = np.linalg.eigvalsh(0.5 * (M + M.T))
        if lam[0] <= 0:
            raise PhShapeError(f"mass matrix not positive definite at q={np.ravel(q).tolist()}")
        return lam[0]

    def config_vector(self, q_i):
        """Configuration with ``q_i`` at ``mass_coord`` and zeros elsewhere."""
        if self.mass_coord is None:
            raise PhShapeError(f"system {self.name!r} has no single mass coordinate")
        q = np.zeros(self.n)
        q[self.mass_coord] = q_i
        return q


def fd_inv_mass_jacobian(sys, q):
    """Central-difference Jacobian of ``M^{-1}`` (slow path for user systems)."""
    q = np.asarray(q, dtype=float)
    n = sys.n
    out = np.empty((n, n, n))
    for k in range(n):
        h = _fd_step(q[k])
        qp = q.copy()
        qm = q.copy()
        qp[k] += h
        qm[k] -= h
        out[:, :, k] = (sys.inv_mass(qp) - sys.inv_mass(qm)) / (2 * h)
    return out


def open_loop_rhs(sys, s, u):
    """Plant vector field ``qdot = M^{-1} p``, ``pdot = -dT/dq - dV/dq + G u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (sys.m,):
        raise ValueError(f"u must have length {sys.m}, got shape {u.shape}")
    q, p = s.q, s.p
    Minv = sys.inv_mass(q)
    qdot = Minv @ p
    pdot = -sys.kinetic_energy_grad(q, p) - np.asarray(sys.potential_grad(q), dtype=float)
    pdot[: sys.m] += u
    return qdot, pdot


def inv_mass_p_jacobian(dMinv, p):
    """``d(M^{-1} p)/dq`` from the inverse-mass Jacobian tensor."""
    return np.einsum("ijk,j->ik", dMinv, p)


def compute_E(sys, s):
    """Kinetic-energy factor ``E = 1/2 [d(M^{-1}p)/dq]^T M`` so that ``dT/dq = E M^{-1} p``."""
    Jm = inv_mass_p_jacobian(sys.inv_mass_jacobian(s.q), s.p)
    return 0.5 * Jm.T @ sys.mass(s.q)


def partition_matrix(sys, A, with_b12=False):
    A = np.asarray(A, dtype=float)
    if A.shape != (sys.n, sys.n):
        raise ValueError(f"expected {sys.n}x{sys.n} matrix, got {A.shape}")
    m = sys.m
    return BlockPartition(
        b11=A[:m, :m].copy(),
        b21=A[m:, :m].copy(),
        b22=A[m:, m:].copy(),
        b12=A[:m, m:].copy() if with_b12 else None,
    )


# --- built-in systems -------------------------------------------------------

CART_POLE_DEFAULTS = {"m_c": 1.0, "m_p": 1.0, "l": 1.0, "g": 9.8}
ACROBOT_DEFAULTS = {"c1": 2.3333, "c2": 5.3333, "c3": 2.0, "c4": 3.0, "c5": 2.0, "g": 9.8}


def _inv2(a, b, d, q, scale):
    """Inverse of ``[[a, b], [b, d]]``; ``scale`` sets the singularity threshold."""
    det = a * d - b * b
    if abs(det) < 1e-12 * scale:
        raise SingularMassError(q, np.inf)
    return np.array([[d, -b], [-b, a]]) / det


def cart_pole(m_c=1.0, m_p=1.0, l=1.0, g=9.8):
    """Cart-pole: ``q1`` cart position (actuated), ``q2`` pole angle from upright."""
    a = m_c + m_p
    d = m_p * l * l

    def mass(q):
        b = m_p * l * np.cos(q[1])
        return np.array([[a, b], [b, d]])

    def inv_mass(q):
        b = m_p * l * np.cos(q[1])
        return _inv2(a, b, d, q, a * d)

    def inv_mass_jacobian(q):
        Minv = inv_mass(q)
        dM = np.zeros((2, 2))
        dM[0, 1] = dM[1, 0] = -m_p * l * np.sin(q[1])
        out = np.zeros((2, 2, 2))
        out[:, :, 1] = -Minv @ dM @ Minv
        return out

    def potential(q):
        return m_p * g * l * np.cos(q[1])

    def potential_grad(q):
        return np.array([0.0, -m_p * g * l * np.sin(q[1])])

    return MechanicalSystem(
        n=2, m=1, mass=mass, potential=potential, potential_grad=potential_grad,
        inv_mass_fn=inv_mass, inv_mass_jacobian_fn=inv_mass_jacobian, mass_coord=1,
        name="cart-pole", params={"m_c": m_c, "m_p": m_p, "l": l, "g": g},
    )


def acrobot(c1=2.3333, c2=5.3333, c3=2.0, c4=3.0, c5=2.0, g=9.8):
    """Acrobot: ``q1`` actuated relative joint angle, ``q2`` base link angle."""

    def mass(q):
        c = np.cos(q[0])
        return np.array([[c2, c2 + c3 * c], [c2 + c3 * c, c1 + c2 + 2 * c3 * c]])

    def inv_mass(q):
        c = np.cos(q[0])
        return _inv2(c2, c2 + c3 * c, c1 + c2 + 2 * c3 * c, q, c1 * c2)

    def inv_mass_jacobian(q):
        Minv = inv_mass(q)
        s = np.sin(q[0])
        dM = np.array([[0.0, -c3 * s], [-c3 * s, -2 * c3 * s]])
        out = np.zeros((2, 2, 2))
        out[:, :, 0] = -Minv @ dM @ Minv
        return out

    def potential(q):
        return c4 * g * np.cos(q[1]) + c5 * g * np.cos(q[0] + q[1])

    def potential_grad(q):
        s12 = np.sin(q[0] + q[1])
        return np.array([-c5 * g * s12, -c4 * g * np.sin(q[1]) - c5 * g * s12])

    return MechanicalSystem(
        n=2, m=1, mass=mass, potential=potential, potential_grad=potential_grad,
        inv_mass_fn=inv_mass, inv_mass_jacobian_fn=inv_mass_jacobian, mass_coord=0,
        name="acrobot", params={"c1": c1, "c2": c2, "c3": c3, "c4": c4, "c5": c5, "g": g},
    )


_REGISTRY = {
    "cart-pole": (cart_pole, CART_POLE_DEFAULTS),
    "acrobot": (acrobot, ACROBOT_DEFAULTS),
}


def register_system(name, factory, defaults=None):
    """Make ``factory(**params) -> MechanicalSystem`` available by name."""
    _REGISTRY[name] = (factory, dict(defaults or {}))


def available_systems():
    return sorted(_REGISTRY)


def make_system(name, params=None):
    try:
        factory, defaults = _REGISTRY[name]
    except KeyError:
        raise PhShapeError(f"unknown system {name!r}; available: {available_systems()}") from None
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if defaults and unknown:
        raise PhShapeError(f"unknown parameters for {name!r}: {sorted(unknown)}")
    merged = {**defaults, **params}
    return factory(**merged)


def system_from_dict(d):
    """Build a system from ``{"system": name, "params": {...}}``."""
    if "system" not in d:
        raise PhShapeError("system definition needs a 'system' key")
    return make_system(d["system"], d.get("params"))
