"""Numerical solution of the kinetic- and potential-energy matching conditions.

The unknown is the added inverse mass ``Ma = M_a^{-1}`` (closed-loop inverse
mass ``M^{-1} + Ma``).  For underactuation degree one and a mass matrix that
depends on a single coordinate ``q_i``, the kinetic-energy conditions are
affine in ``d(m_a21)/dq_i`` and ``d(m_a22)/dq_i``; solving that linear system
pointwise turns synthesis into an ODE in ``q_i`` with ``m_a11`` free.

Conventions: ``r = n - m``; blocks of an ``n x n`` matrix are
``[[x11, x21^T], [x21, x22]]`` with ``x11`` of size ``m x m``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import DomainBoundaryError, PhShapeError, SingularMatrixError
from .hermite import HermiteTable
from .ode import integrate_ivp

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
SINGULAR_TOL = 1e-12
DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_DQ = 1e-3
# interpolated KE residual above which table end intervals count as unresolved
INTERP_TOL = 1e-9


# --- data types --------------------------------------------------------------

@dataclass(frozen=True)
class AddedMassState:
    """Blocks of ``M_a^{-1}`` at ``q_i``.  Diagonal blocks are kept symmetric."""

    q_i: float
    m_a11: np.ndarray
    m_a21: np.ndarray
    m_a22: np.ndarray

    def __post_init__(self):
        a11 = np.atleast_2d(np.asarray(self.m_a11, dtype=float))
        a22 = np.atleast_2d(np.asarray(self.m_a22, dtype=float))
        a21 = np.asarray(self.m_a21, dtype=float).reshape(a22.shape[0], a11.shape[0])
        object.__setattr__(self, "q_i", float(self.q_i))
        object.__setattr__(self, "m_a11", 0.5 * (a11 + a11.T))
        object.__setattr__(self, "m_a21", a21)
        object.__setattr__(self, "m_a22", 0.5 * (a22 + a22.T))

    @property
    def m(self):
        return self.m_a11.shape[0]

    @property
    def r(self):
        return self.m_a22.shape[0]

    def matrix(self):
        return np.block([[self.m_a11, self.m_a21.T], [self.m_a21, self.m_a22]])

    @classmethod
    def from_matrix(cls, q_i, Ma, m):
        Ma = np.asarray(Ma, dtype=float)
        return cls(q_i, Ma[:m, :m], Ma[m:, :m], Ma[m:, m:])


@dataclass(frozen=True)
class FreeMassFunction:
    """User choice of ``m_a11(q_i)`` with its derivative."""

    eval: Callable[[float], np.ndarray]
    deriv: Callable[[float], np.ndarray]
    descriptor: dict = field(default_factory=dict)
    deriv2: Callable[[float], np.ndarray] | None = None

    def second(self, q_i):
        """Second derivative, by central differences of ``deriv`` if not supplied."""
        if self.deriv2 is not None:
            return self.deriv2(q_i)
        h = 1e-5 * (1.0 + abs(q_i))
        return (np.asarray(self.deriv(q_i + h)) - np.asarray(self.deriv(q_i - h))) / (2 * h)


def constant(c, m=1):
    """``m_a11 = c`` everywhere."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape == (1, 1) and m > 1:
        c = c[0, 0] * np.eye(m)
    zero = np.zeros_like(c)
    return FreeMassFunction(
        eval=lambda q_i: c,
        deriv=lambda q_i: zero,
        descriptor={"kind": "constant", "value": c.tolist()},
        deriv2=lambda q_i: zero,
    )


def target_Md(sys, Md_inv):
    """``m_a11 = G^T (Md_inv - M^{-1}(q_i)) G`` for a constant target ``Md_inv``."""
    Md_inv = np.asarray(Md_inv, dtype=float)
    m = sys.m

    def ev(q_i):
        return Md_inv[:m, :m] - sys.inv_mass(sys.config_vector(q_i))[:m, :m]

    def der(q_i):
        k = sys.mass_coord
        return -sys.inv_mass_jacobian(sys.config_vector(q_i))[:m, :m, k]

    return FreeMassFunction(eval=ev, deriv=der, descriptor={"kind": "target_Md", "md_inv": Md_inv.tolist()})


def free_function_from_descriptor(sys, descriptor):
    kind = descriptor.get("kind")
    if kind == "constant":
        return constant(descriptor.get("value", 0.0), sys.m)
    if kind == "target_Md":
        return target_Md(sys, descriptor["md_inv"])
    raise PhShapeError(f"unknown free-function kind {kind!r}")


# --- pointwise algebra ---------------------------------------------------------

def small_cond(A):
    """2-norm condition number, in closed form for 1x1 and 2x2 matrices."""
    if A.shape == (1, 1):
        return 1.0 if A[0, 0] != 0 else np.inf
    if A.shape == (2, 2):
        det = abs(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
        if det == 0:
            return np.inf
        fro2 = float(np.sum(A * A))
        # sigma_max^2 + sigma_min^2 = fro2, sigma_max * sigma_min = det
        disc = np.sqrt(max(fro2 * fro2 - 4 * det * det, 0.0))
        return float(np.sqrt((fro2 + disc) / (fro2 - disc))) if fro2 > disc else np.inf
    return float(np.linalg.cond(A))


def _q_label(sys, q):
    k = sys.mass_coord if sys.mass_coord is not None else 0
    return float(np.asarray(q)[k])


def _added_mass_tensor(sys, dma):
    """Expand ``dMa/dq_i`` (n x n) to the full ``(n, n, n)`` Jacobian tensor."""
    dma = np.asarray(dma, dtype=float)
    if dma.ndim == 3:
        return dma
    if sys.mass_coord is None:
        raise PhShapeError("a single-coordinate derivative needs sys.mass_coord")
    out = np.zeros((sys.n, sys.n, sys.n))
    out[:, :, sys.mass_coord] = dma
    return out


def compute_Y(sys, ma, dma, q, p):
    """``Y(q, p)`` and its per-momentum slices ``Y^i`` (so ``Y = sum_i p_i Y^i``).

    ``dma`` is either ``dMa/dq_i`` for ``i = sys.mass_coord`` or a full
    ``(n, n, n)`` tensor with ``dma[a, b, k] = dMa_ab/dq_k``.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    Minv = sys.inv_mass(q)
    dMinv = sys.inv_mass_jacobian(q)
    dMa = _added_mass_tensor(sys, dma)
    Yi = 0.5 * (np.einsum("xk,aik->ixa", Minv, dMa) - np.einsum("xik,ka->ixa", dMinv, ma))
    return np.einsum("i,ixa->xa", p, Yi), Yi


def _delta(sys, S, q):
    """``(s21)(s11)^{-1}`` for ``S = M^{-1} + Ma``."""
    m = sys.m
    S11 = S[:m, :m]
    cond = small_cond(S11)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DomainBoundaryError(_q_label(sys, q), f"m11 + m_a11 singular (cond={cond:.3g})")
    if m == 1:
        return S[m:, :1] / S11[0, 0]
    return np.linalg.solve(S11.T, S[m:, :m].T).T


def compute_D(sys, ma, q):
    """Left annihilator ``D = [(m21+m_a21)(m11+m_a11)^{-1}, -I]`` of ``(M^{-1}+Ma) G``."""
    S = sys.inv_mass(q) + ma
    return np.hstack([_delta(sys, S, q), -np.eye(sys.r)])


def ke_residual(sys, ma, dma, q):
    """``D (Y^i + Y^i^T) D^T`` for ``i = 1..n``; shape ``(n, r, r)``."""
    D = compute_D(sys, ma, q)
    _, Yi = compute_Y(sys, ma, dma, q, np.zeros(sys.n))
    sym = Yi + np.transpose(Yi, (0, 2, 1))
    return np.einsum("ax,ixy,by->iab", D, sym, D)


def _require_degree_one(sys):
    if sys.r != 1:
        raise PhShapeError(f"ODE synthesis requires underactuation degree one (n - m = {sys.r})")
    if sys.mass_coord is None:
        raise PhShapeError(f"ODE synthesis requires a single mass coordinate on {sys.name!r}")


def _unpack(sys, q_i, z, free):
    m = sys.m
    Ma = np.empty((sys.n, sys.n))
    Ma[:m, :m] = free.eval(q_i)
    Ma[m:, :m] = z[:m]
    Ma[:m, m:] = Ma[m:, :m].T
    Ma[m:, m:] = z[m]
    return Ma


def _dma_from(sys, dma11, dz):
    m = sys.m
    d = np.empty((sys.n, sys.n))
    d[:m, :m] = dma11
    d[m:, :m] = dz[:m]
    d[:m, m:] = d[m:, :m].T
    d[m:, m:] = dz[m]
    return d


def ke_linear_system(sys, free, q_i, z):
    """Affine form ``residual(dz) = A dz - b`` of the kinetic-energy conditions.

    ``z = [m_a21 (m entries), m_a22]``; returns ``(A, b, Ma)``.
    """
    q = sys.config_vector(q_i)
    n, m = sys.n, sys.m
    Ma = _unpack(sys, q_i, z, free)
    dma11 = free.deriv(q_i)
    Minv = sys.inv_mass(q)
    dMinv = sys.inv_mass_jacobian(q)
    delta = _delta(sys, Minv + Ma, q)[0]
    d0 = np.append(delta, -1.0)
    # Y^i = 1/2 Minv[:, k] dMa[i, :] - 1/2 dMinv[:, i, :] Ma and residual_i = 2 D Y^i D^T,
    # so residual_i = a dMa[i, :] D^T - D dMinv[:, i, :] Ma D^T with a = D Minv[:, k]
    a = d0 @ Minv[:, sys.mass_coord]
    const = -((d0 @ dMinv.reshape(n, n * n)).reshape(n, n) @ (Ma @ d0))
    # unknowns enter through row i < m as d(m_a21)_i and through the whole last row
    A = np.zeros((n, n))
    A[:m, :m] = -a * np.eye(m)
    A[m, :m] = a * delta
    A[m, m] = -a
    r0 = const
    r0[:m] += a * (dma11 @ delta)
    return A, -r0, Ma


def _ke_rhs_vector(sys, free, q_i, z):
    A, b, _ = ke_linear_system(sys, free, q_i, z)
    cond = small_cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DomainBoundaryError(q_i, f"linear system cond={cond:.3g}")
    # A = a [[-I, 0], [delta, -1]] with a = A[m, m] * -1
    m = sys.m
    a = -A[m, m]
    dz = np.empty(sys.n)
    dz[:m] = -b[:m] / a
    dz[m] = A[m, :m] @ dz[:m] / a - b[m] / a
    if not np.all(np.isfinite(dz)):
        raise DomainBoundaryError(q_i, "non-finite derivative")
    return dz


def ke_ode_rhs(sys, free, q_i, state):
    """Derivatives ``(d m_a21/dq_i, d m_a22/dq_i)`` enforcing kinetic-energy matching."""
    _require_degree_one(sys)
    z = np.concatenate([state.m_a21.ravel(), state.m_a22.ravel()])
    dz = _ke_rhs_vector(sys, free, q_i, z)
    return dz[:sys.m].reshape(1, sys.m), dz[sys.m:].reshape(1, 1)


def schur_terms(sys, ma, q):
    """``(s1, s2, s3)`` of the potential-energy condition.

    ``s1`` is the Schur complement of ``M^{-1} + Ma`` (``r x r``),
    ``s2 = delta m11 - m21`` (``r x m``), ``s3 = delta m21^T - m22`` (``r x r``).
    """
    Minv = sys.inv_mass(q)
    S = Minv + ma
    m = sys.m
    delta = _delta(sys, S, q)
    s1 = S[m:, m:] - delta @ S[m:, :m].T
    s2 = delta @ Minv[:m, :m] - Minv[m:, :m]
    s3 = delta @ Minv[m:, :m].T - Minv[m:, m:]
    return s1, s2, s3


def pe_residual(sys, ma, grad_Vm, q):
    """``s1 G_perp dV + s2 G^T dV_m + s3 G_perp dV_m``; shape ``(r,)``."""
    m = sys.m
    gV = np.asarray(sys.potential_grad(q), dtype=float)
    grad_Vm = np.asarray(grad_Vm, dtype=float)
    s1, s2, s3 = schur_terms(sys, ma, q)
    return s1 @ gV[m:] + s2 @ grad_Vm[:m] + s3 @ grad_Vm[m:]


def pe_residual_annihilator(sys, ma, grad_Vm, q):
    """Same residual written as ``s1 G_perp dV + D M^{-1} dV_m``."""
    gV = np.asarray(sys.potential_grad(q), dtype=float)
    s1, _, _ = schur_terms(sys, ma, q)
    D = compute_D(sys, ma, q)
    return s1 @ gV[sys.m:] + D @ sys.inv_mass(q) @ np.asarray(grad_Vm, dtype=float)


def lambda_min(sys, ma, q):
    S = sys.inv_mass(q) + ma
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])


# --- added-mass table --------------------------------------------------------

@dataclass
class AddedMassTable:
    """Synthesized ``M_a^{-1}`` on an ascending grid of the mass coordinate.

    ``ma[k]``/``dma[k]`` are the full ``n x n`` matrix and its ``q_i``
    derivative at ``grid[k]``; with ``ddma`` (second derivatives) the
    interpolant is quintic, otherwise cubic.  ``domain`` is the interval actually reached by
    the integrator (it can extend slightly past the outermost grid nodes).
    """

    grid: np.ndarray
    ma: np.ndarray
    dma: np.ndarray
    domain: tuple
    lambda_min: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    m: int
    mass_coord: int
    meta: dict = field(default_factory=dict)
    ddma: np.ndarray | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self._interp = HermiteTable(self.grid, self.ma, self.dma, self.ddma)
        self._last = None

    @property
    def n(self):
        return self.ma.shape[1]

    @property
    def table_range(self):
        return self._interp.domain

    def contains(self, q_i):
        return self._interp.contains(q_i)

    def evaluate(self, q_i):
        """``(Ma, dMa/dq_i)`` from the Hermite interpolant."""
        q_i = float(q_i)
        last = self._last
        if last is not None and last[0] == q_i:
            return last[1], last[2]
        Ma, dMa = self._interp(q_i)
        Ma, dMa = 0.5 * (Ma + Ma.T), 0.5 * (dMa + dMa.T)
        Ma.setflags(write=False)
        dMa.setflags(write=False)
        # one-entry memo: a controller evaluation queries the same point several
        # times; the tuple is replaced atomically so concurrent readers stay safe
        self._last = (q_i, Ma, dMa)
        return Ma, dMa

    def state(self, k):
        return AddedMassState.from_matrix(self.grid[k], self.ma[k], self.m)


def _grid_side(q0, bound, dq):
    """Uniform nodes ``q0 + k dq`` strictly past ``q0`` and within ``bound``."""
    direction = 1.0 if bound > q0 else -1.0
    count = int(np.floor(abs(bound - q0) / dq + 1e-9))
    nodes = q0 + direction * dq * np.arange(1, count + 1)
    return nodes


def integrate_on_grid(rhs, q0, y0, q_range, dq, rtol, atol, stop_on=()):
    """Bidirectional integration from ``q0`` with output on the ``q0 + k dq`` lattice.

    Steps are shortened to land on every node, so node values carry the full
    order of the method.  Range endpoints that do not fall on the lattice are
    added as nodes when reached.  Returns ``(nodes, values, derivs, derivs2,
    reached, results)`` where ``derivs2`` comes from the continuous extension
    (NaN at ``q0``) and ``reached`` is the interval covered by accepted steps.
    """
    lo, hi = float(q_range[0]), float(q_range[1])
    if not lo <= q0 <= hi:
        raise PhShapeError(f"start point {q0} outside range [{lo}, {hi}]")
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    sides = {}
    results = {}
    for bound in (lo, hi):
        if bound == q0:
            empty = np.empty((0, y0.size))
            sides[bound] = (np.empty(0), empty, empty, empty, q0)
            continue
        nodes = _grid_side(q0, bound, dq)
        if nodes.size == 0 or abs(nodes[-1] - bound) > 1e-9 * max(1.0, abs(bound)):
            nodes = np.append(nodes, bound)
        else:
            nodes[-1] = bound
        res = integrate_ivp(rhs, (q0, bound), y0, rtol=rtol, atol=atol, t_eval=nodes,
                            stop_on=stop_on, land_on_eval=True)
        results[bound] = res
        sides[bound] = (res.t, res.y, res.dy, res.ddy, res.t_last)
    t_lo, y_lo, d_lo, dd_lo, reach_lo = sides[lo]
    t_hi, y_hi, d_hi, dd_hi, reach_hi = sides[hi]
    d0 = np.atleast_1d(rhs(q0, y0))
    nodes = np.concatenate([t_lo[::-1], [q0], t_hi])
    values = np.vstack([y_lo[::-1], y0[None, :], y_hi])
    derivs = np.vstack([d_lo[::-1], d0[None, :], d_hi])
    derivs2 = np.vstack([dd_lo[::-1], np.full((1, y0.size), np.nan), dd_hi])
    return nodes, values, derivs, derivs2, (reach_lo, reach_hi), results


def _fd_weights(x0, xs, order):
    """Finite-difference weights for the ``order``-th derivative at ``x0``."""
    xs = np.asarray(xs, dtype=float) - x0
    A = np.vander(xs, xs.size, increasing=True).T
    b = np.zeros(xs.size)
    b[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(A, b)


def refine_second_derivatives(rhs, nodes, values, derivs, derivs2, rel_tol=1e-7, stop_on=()):
    """Second derivatives of an ODE solution at its output nodes.

    Continuous-extension estimates are kept where they agree with a 5-point
    stencil of the nodal first derivatives; elsewhere (steep regions, the
    start node) they are replaced by a central difference of the right-hand
    side along the solution, ``[f(q+e, z+e f) - f(q-e, z-e f)] / 2e``.
    """
    dd = np.array(derivs2, dtype=float)
    N = nodes.size
    scale = np.max(np.abs(derivs2[np.isfinite(derivs2)]), initial=1.0)
    for k in range(N):
        redo = not np.all(np.isfinite(dd[k]))
        if not redo and N >= 5:
            lo = min(max(k - 2, 0), N - 5)
            idx = np.arange(lo, lo + 5)
            stencil = _fd_weights(nodes[k], nodes[idx], 1) @ derivs[idx]
            redo = np.max(np.abs(stencil - dd[k])) > rel_tol * max(scale, np.max(np.abs(dd[k])))
        if not redo:
            continue
        e = 1e-5 * (1.0 + abs(nodes[k]))
        try:
            fp = np.atleast_1d(rhs(nodes[k] + e, values[k] + e * derivs[k]))
            fm = np.atleast_1d(rhs(nodes[k] - e, values[k] - e * derivs[k]))
        except stop_on:
            if not np.all(np.isfinite(dd[k])):
                dd[k] = 0.0
            continue
        dd[k] = (fp - fm) / (2 * e)
    return dd


def integrate_ke(sys, free, init, q_range, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, dq=DEFAULT_DQ,
                 interp_tol=INTERP_TOL):
    """Integrate the kinetic-energy ODE from ``init`` across ``q_range``.

    Integration in each direction stops at the range end, at a
    :class:`DomainBoundaryError` that cannot be stepped around, or at step
    underflow (``|h| < 1e-12``); the reached interval is recorded in
    ``table.domain``.  Grid intervals at either end whose interpolated residual
    exceeds ``interp_tol`` (the solution is too steep there for the
    interpolant) are dropped, so ``table.table_range`` can sit slightly inside
    ``table.domain``.
    """
    _require_degree_one(sys)
    m = sys.m
    q0 = init.q_i
    z0 = np.concatenate([init.m_a21.ravel(), init.m_a22.ravel()])
    free_init = free.eval(q0)
    if not np.allclose(free_init, init.m_a11, rtol=1e-10, atol=1e-12):
        log.warning("init m_a11=%s differs from free function value %s; using the free function",
                    init.m_a11.tolist(), np.asarray(free_init).tolist())
    _ke_rhs_vector(sys, free, q0, z0)  # raises DomainBoundaryError at an inadmissible start

    def rhs(q_i, z):
        return _ke_rhs_vector(sys, free, q_i, z)

    stop = (DomainBoundaryError, SingularMatrixError)
    nodes, values, derivs, derivs2, reached, results = integrate_on_grid(
        rhs, q0, z0, q_range, dq, rtol, atol, stop)
    if nodes.size < 2:
        raise DomainBoundaryError(q0, "solution does not extend past the initial point")
    # every node is a step end, so derivs are exact right-hand-side values
    derivs2 = refine_second_derivatives(rhs, nodes, values, derivs, derivs2, stop_on=stop)
    grid = nodes
    ma = np.array([_unpack(sys, q_i, z, free) for q_i, z in zip(nodes, values)])
    dma = np.array([_dma_from(sys, free.deriv(q_i), dz) for q_i, dz in zip(nodes, derivs)])
    ddma = np.array([_dma_from(sys, free.second(q_i), ddz) for q_i, ddz in zip(nodes, derivs2)])
    i0, i1 = _resolved_span(sys, grid, ma, dma, ddma, interp_tol)
    if i1 - i0 < 1:
        raise DomainBoundaryError(q0, "no interval of the table passes the interpolation check")
    grid, ma, dma, ddma = grid[i0:i1 + 1], ma[i0:i1 + 1], dma[i0:i1 + 1], ddma[i0:i1 + 1]
    lam, s1, s2, s3 = _annotations(sys, grid, ma)
    meta = {
        "free_function": free.descriptor,
        "init": {"q_i": q0, "m_a11": init.m_a11.tolist(), "m_a21": init.m_a21.tolist(),
                 "m_a22": init.m_a22.tolist()},
        "range": [float(q_range[0]), float(q_range[1])],
        "rtol": rtol, "atol": atol, "dq": dq, "interp_tol": interp_tol,
        "status": {("lo" if b < q0 else "hi"): [res.status, res.message] for b, res in results.items()},
    }
    if np.min(lam) <= 0:
        log.warning("M^-1 + Ma loses positive definiteness on part of the table (min eig %.3g)", np.min(lam))
    return AddedMassTable(grid=grid, ma=ma, dma=dma, domain=(float(reached[0]), float(reached[1])),
                          lambda_min=lam, s1=s1, s2=s2, s3=s3, m=m, mass_coord=sys.mass_coord, meta=meta,
                          ddma=ddma)


# interior sample positions of the end-interval check (the derivative error
# of a Hermite piece vanishes at the midpoint, so probe off-centre too)
_PROBES = (0.2, 0.5, 0.8)
_RESOLVED_RUN = 10


def _interval_ok(sys, interp, a, b, tol):
    for t in _PROBES:
        q_i = a + t * (b - a)
        Ma, dMa = interp(q_i)
        try:
            res = ke_residual(sys, Ma, dMa, sys.config_vector(q_i))
        except (DomainBoundaryError, SingularMatrixError):
            return False
        if not np.max(np.abs(res)) <= tol:
            return False
    return True


def _resolved_span(sys, grid, ma, dma, ddma, tol):
    """Indices ``(i0, i1)`` of the outermost nodes bounding resolved intervals.

    Intervals are checked from each end inward until ``_RESOLVED_RUN``
    consecutive ones pass; unresolved end intervals are dropped.
    """
    interp = HermiteTable(grid, ma, dma, ddma)
    n_int = grid.size - 1

    def scan(order):
        first, run = None, 0
        for k in order:
            if _interval_ok(sys, interp, grid[k], grid[k + 1], tol):
                first = k if run == 0 else first
                run += 1
                if run >= _RESOLVED_RUN:
                    return first
            else:
                run = 0
        return first

    i0 = scan(range(n_int))
    if i0 is None:
        return 0, 0
    i1 = scan(range(n_int - 1, -1, -1))
    return int(i0), int(i1) + 1


def _annotations(sys, grid, ma):
    lam = np.empty(grid.size)
    s1 = np.empty((grid.size, sys.r, sys.r))
    s2 = np.empty((grid.size, sys.r, sys.m))
    s3 = np.empty((grid.size, sys.r, sys.r))
    for k, q_i in enumerate(grid):
        q = sys.config_vector(q_i)
        lam[k] = lambda_min(sys, ma[k], q)
        s1[k], s2[k], s3[k] = schur_terms(sys, ma[k], q)
    return lam, s1, s2, s3


# --- potential energy ----------------------------------------------------------

def _s_scalars(sys, table, q_i):
    Ma, _ = table.evaluate(q_i)
    q = sys.config_vector(q_i)
    s1, s2, s3 = schur_terms(sys, Ma, q)
    return float(s1[0, 0]), s2[0], float(s3[0, 0]), q


def pe_ode_rhs_single(sys, table, q_i, V_m=None):
    """``dV_m/dq_i = -(s1/s3) dV/dq_i`` for potentials depending on ``q_i`` only."""
    _require_degree_one(sys)
    if sys.mass_coord < sys.m:
        raise PhShapeError("single-coordinate potential shaping needs an unactuated mass coordinate")
    s1, _, s3, q = _s_scalars(sys, table, q_i)
    if abs(s3) <= SINGULAR_TOL:
        raise SingularMatrixError(f"s3 vanishes at q_i={q_i:.12g}")
    gV = np.asarray(sys.potential_grad(q), dtype=float)
    return -(s1 / s3) * gV[sys.mass_coord]


def _trig_coeffs(sys):
    try:
        return sys.params["c4"], sys.params["c5"], sys.params["g"]
    except KeyError:
        raise PhShapeError(
            f"trig ansatz needs an acrobot-family potential (c4, c5, g); {sys.name!r} has {sorted(sys.params)}"
        ) from None


def pe_ode_rhs_trig(sys, table, q1, f1, f2):
    """Coefficient ODE for ``V_m = f1(q1) sin q2 + f2(q1) cos q2``."""
    _require_degree_one(sys)
    c4, c5, g = _trig_coeffs(sys)
    s1, s2, s3, _ = _s_scalars(sys, table, q1)
    s2 = float(s2[0])
    if abs(s2) <= SINGULAR_TOL:
        raise SingularMatrixError(f"s2 vanishes at q1={q1:.12g}")
    df1 = (c4 * g * s1 + c5 * g * s1 * np.cos(q1) + s3 * f2) / s2
    df2 = (c5 * g * s1 * np.sin(q1) - s3 * f1) / s2
    return df1, df2


@dataclass
class GammaTable:
    """``Gamma(q) = q_j + g(q_i)`` with ``g' = beta_i / beta_j`` and ``g(anchor) = 0``.

    Values of ``g`` come from the table; its derivative is the integrand
    evaluated on the added-mass interpolant, so ``grad Gamma`` is exactly
    proportional to ``beta`` at every point.
    """

    table: HermiteTable
    chosen: int
    mass_coord: int
    k_choice: str
    sys: object
    mass_table: "AddedMassTable"

    def slope(self, q_i):
        Ma, _ = self.mass_table.evaluate(q_i)
        b = beta(self.sys, Ma, self.sys.config_vector(q_i))[0]
        if abs(b[self.chosen]) <= SINGULAR_TOL:
            raise SingularMatrixError(f"beta_{self.chosen + 1} vanishes at q_i={q_i:.12g}")
        return b[self.mass_coord] / b[self.chosen]

    def __call__(self, q):
        q_i = float(q[self.mass_coord])
        g = self.table.value(q_i)
        grad = np.zeros(len(q))
        grad[self.chosen] = 1.0
        grad[self.mass_coord] = self.slope(q_i)
        return q[self.chosen] + g[0], grad


K_CHOICES = {"inv_beta1": 0, "inv_beta2": 1}


def beta(sys, ma, q):
    """``G^T (Ma + M^{-1}) M``, shape ``(m, n)``."""
    return sys.G.T @ (ma + sys.inv_mass(q)) @ sys.mass(q)


def build_gamma(sys, table, k_choice, anchor=0.0, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Integral coordinate whose functions leave potential matching untouched."""
    _require_degree_one(sys)
    if sys.n != 2:
        raise PhShapeError("Gamma construction is implemented for n = 2, m = 1")
    try:
        j = K_CHOICES[k_choice]
    except KeyError:
        raise PhShapeError(f"k_choice must be one of {sorted(K_CHOICES)}, got {k_choice!r}") from None
    i = sys.mass_coord
    if j == i:
        raise PhShapeError(f"{k_choice} divides by beta of the mass coordinate; choose the other component")

    gamma = GammaTable(None, chosen=j, mass_coord=i, k_choice=k_choice, sys=sys, mass_table=table)

    def rhs(q_i, _):
        return np.array([gamma.slope(q_i)])

    nodes, vals, ders = _potential_on_table(rhs, table, anchor, [0.0], rtol, atol)
    gamma.table = HermiteTable(nodes, vals, ders)
    return gamma


def _potential_on_table(rhs, table, anchor, y0, rtol, atol):
    lo, hi = table.table_range
    if not lo <= anchor <= hi:
        raise PhShapeError(f"anchor {anchor} outside table range [{lo}, {hi}]")
    grid = table.grid
    vals = np.empty((grid.size, len(y0)))
    y0 = np.asarray(y0, dtype=float)
    up = grid >= anchor
    down = grid < anchor
    res_up = integrate_ivp(rhs, (anchor, hi), y0, rtol=rtol, atol=atol, t_eval=grid[up])
    res_dn = integrate_ivp(rhs, (anchor, lo), y0, rtol=rtol, atol=atol, t_eval=grid[down][::-1])
    for res in (res_up, res_dn):
        if not res.success:
            raise PhShapeError(f"potential integration failed: {res.message}")
    vals[up] = res_up.y
    vals[down] = res_dn.y[::-1]
    ders = np.array([rhs(q_i, v) for q_i, v in zip(grid, vals)]).reshape(vals.shape)
    return grid, vals, ders


@dataclass
class ShapedPotential:
    """``V_d = V_m + kappa/2 Gamma^2`` with ``V_m`` stored as coefficient tables.

    ``kind="single"``: ``V_m(q_i)`` directly.  ``kind="trig"``:
    ``V_m = f1(q_i) sin q_j + f2(q_i) cos q_j`` for the other coordinate ``j``.
    Values are interpolated from the table; derivatives along ``q_i`` are the
    matching ODE right-hand side at the interpolated values, so the gradient
    satisfies potential matching exactly on the added-mass interpolant.
    """

    kind: str
    table: HermiteTable
    gamma: GammaTable
    kappa: float
    mass_coord: int
    sys: object
    mass_table: "AddedMassTable"
    meta: dict = field(default_factory=dict)

    def V_m(self, q):
        q = np.asarray(q, dtype=float)
        i = self.mass_coord
        q_i = float(q[i])
        val = self.table.value(q_i)
        grad = np.zeros(q.size)
        if self.kind == "single":
            grad[i] = pe_ode_rhs_single(self.sys, self.mass_table, q_i)
            return float(val[0]), grad
        der = pe_ode_rhs_trig(self.sys, self.mass_table, q_i, val[0], val[1])
        j = 1 - i
        s, c = np.sin(q[j]), np.cos(q[j])
        grad[i] = der[0] * s + der[1] * c
        grad[j] = val[0] * c - val[1] * s
        return float(val[0] * s + val[1] * c), grad

    def contains(self, q):
        return self.table.contains(q[self.mass_coord]) and self.gamma.table.contains(q[self.mass_coord])


def eval_Vd(pot, q):
    """``(V_d(q), dV_d/dq)``."""
    q = np.asarray(q, dtype=float)
    vm, gvm = pot.V_m(q)
    gam, ggam = pot.gamma(q)
    return vm + 0.5 * pot.kappa * gam * gam, gvm + pot.kappa * gam * ggam


def integrate_potential(sys, table, ansatz, init, kappa, k_choice, anchor=0.0,
                        rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Solve the potential matching ODE on ``table``'s grid and attach ``Gamma``.

    ``init`` is ``{"V_m": value}`` for ``ansatz="single"`` or
    ``{"f1": value, "f2": value}`` for ``ansatz="trig"``, imposed at ``anchor``.
    """
    if ansatz == "single":
        y0 = [float(init.get("V_m", 0.0))]

        def rhs(q_i, y):
            return np.array([pe_ode_rhs_single(sys, table, q_i)])
    elif ansatz == "trig":
        if sys.mass_coord != 0 or sys.n != 2:
            raise PhShapeError("trig ansatz expects n = 2 with mass coordinate q1")
        y0 = [float(init.get("f1", 0.0)), float(init.get("f2", 0.0))]

        def rhs(q_i, y):
            return np.array(pe_ode_rhs_trig(sys, table, q_i, y[0], y[1]))
    else:
        raise PhShapeError(f"unknown potential ansatz {ansatz!r}")
    nodes, vals, ders = _potential_on_table(rhs, table, anchor, y0, rtol, atol)
    gamma = build_gamma(sys, table, k_choice, anchor=anchor, rtol=rtol, atol=atol)
    meta = {"ansatz": ansatz, "init": dict(init), "kappa": kappa, "gamma": k_choice, "anchor": anchor}
    return ShapedPotential(kind=ansatz, table=HermiteTable(nodes, vals, ders), gamma=gamma,
                           kappa=float(kappa), mass_coord=sys.mass_coord, sys=sys, mass_table=table,
                           meta=meta)
