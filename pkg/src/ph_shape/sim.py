"""Closed-loop simulation: static feedback, reduced field and CbI co-simulation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from .exceptions import DomainError, SingularMassError, SingularMatrixError
from .mechanics import PhaseState, open_loop_rhs
from .ode import integrate_ivp

log = logging.getLogger(__name__)

DEFAULT_DT_OUT = 1e-3
DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12

# errors that mark leaving the region where the controller is defined
_EXIT_ERRORS = (DomainError, SingularMatrixError, SingularMassError)


@dataclass
class Trajectory:
    """Sampled closed-loop solution.

    ``q``, ``p`` are ``(N, n)``, ``u`` is ``(N, m)`` and ``H_d`` is ``(N,)``.
    Co-simulations also fill ``q_a1``, ``q_a2``, ``p_a`` and ``drift``, the
    largest 2-norm distance of a controller block from its plant counterpart.
    ``status`` is ``"success"`` or describes why the run ended early.
    """

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    u: np.ndarray
    H_d: np.ndarray
    q_a1: np.ndarray | None = None
    q_a2: np.ndarray | None = None
    p_a: np.ndarray | None = None
    drift: np.ndarray | None = None
    status: str = "success"
    message: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly ascending")

    @property
    def n(self):
        return self.q.shape[1]

    @property
    def m(self):
        return self.u.shape[1]

    @property
    def interconnected(self):
        return self.q_a1 is not None

    @property
    def success(self):
        return self.status == "success"

    def __len__(self):
        return self.t.size

    def header(self):
        n, m = self.n, self.m
        cols = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
        cols += [f"u{i + 1}" for i in range(m)] + ["H_d"]
        if self.interconnected:
            cols += [f"qa1_{i + 1}" for i in range(n)] + [f"qa2_{i + 1}" for i in range(n)]
            cols += [f"pa_{i + 1}" for i in range(n)] + ["drift"]
        return cols

    def as_array(self):
        blocks = [self.t[:, None], self.q, self.p, self.u, self.H_d[:, None]]
        if self.interconnected:
            blocks += [self.q_a1, self.q_a2, self.p_a, self.drift[:, None]]
        return np.hstack(blocks) if self.t.size else np.empty((0, len(self.header())))

    def to_csv(self, path):
        write_csv(path, self.header(), self.as_array())

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        n = sum(1 for h in header if h.startswith("q") and h[1:].isdigit())
        m = sum(1 for h in header if h.startswith("u") and h[1:].isdigit())
        c = 1 + 2 * n + m
        kw = {}
        if "drift" in header:
            kw = dict(q_a1=data[:, c + 1:c + 1 + n], q_a2=data[:, c + 1 + n:c + 1 + 2 * n],
                      p_a=data[:, c + 1 + 2 * n:c + 1 + 3 * n], drift=data[:, -1])
        return cls(t=data[:, 0], q=data[:, 1:1 + n], p=data[:, 1 + n:1 + 2 * n], u=data[:, 1 + 2 * n:c],
                   H_d=data[:, c], **kw)

    def max_energy_increase(self):
        """Largest increase of ``H_d`` between consecutive samples (``<= 0`` if monotone)."""
        if self.H_d.size < 2:
            return 0.0
        return float(np.max(np.diff(self.H_d)))


def write_csv(path, header, rows):
    """Comma-separated UTF-8 table with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.asarray(rows, dtype=float).reshape(-1, len(header)):
            w.writerow([format(float(x), ".17g") for x in row])


def _sample_times(T, dt_out):
    if T <= 0 or dt_out <= 0:
        raise ValueError("T and dt_out must be positive")
    k = int(round(T / dt_out))
    if abs(k * dt_out - T) > 1e-9 * max(1.0, T):
        return np.append(dt_out * np.arange(int(np.floor(T / dt_out)) + 1), T)
    return np.linspace(0.0, T, k + 1)


def _feedback(ctrl, q, p, damp):
    v = ctl.damping(ctrl, q, p) if damp else np.zeros(ctrl.sys.m)
    return ctl.control_law(ctrl, q, p, v)


def _finish(res, t_out, build):
    status, message = res.status, res.message
    if status == "stopped":
        exc = res.stop_exception
        status = "domain_exit"
        message = f"left the controller domain near t={res.t_last:.6g}: {exc}"
    elif status != "success":
        message = f"integration ended at t={res.t_last:.6g}: {message}"
    if status != "success":
        log.warning("simulation ended early: %s", message)
    traj = build(res.t, res.y)
    traj.status, traj.message = status, message
    return traj


def simulate_closed_loop(ctrl, init, T, dt_out=DEFAULT_DT_OUT, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
                         damping=True):
    """Plant under the static feedback ``u = control_law(q, p, damping(q, p))``.

    A domain exit ends the run with ``status="domain_exit"`` and the samples
    reached so far.
    """
    sys = ctrl.sys
    n = sys.n
    if not isinstance(init, PhaseState):
        init = PhaseState(*init)
    if not ctrl.contains(init.q):
        raise DomainError(float(init.q[sys.mass_coord]), ctrl.domain)

    def rhs(t, x):
        q, p = x[:n], x[n:]
        u = _feedback(ctrl, q, p, damping)
        qd, pd = open_loop_rhs(sys, PhaseState(q, p), u)
        return np.concatenate([qd, pd])

    t_out = _sample_times(T, dt_out)
    res = integrate_ivp(rhs, (0.0, T), init.as_vector(), rtol=rtol, atol=atol, t_eval=t_out,
                        stop_on=_EXIT_ERRORS)

    def build(t, y):
        q, p = y[:, :n], y[:, n:]
        u = np.array([_feedback(ctrl, a, b, damping) for a, b in zip(q, p)]).reshape(t.size, sys.m)
        H = np.array([ctl.closed_loop_energy(ctrl, a, b) for a, b in zip(q, p)])
        return Trajectory(t=t, q=q, p=p, u=u, H_d=H, meta={"mode": "reduced", "damping": damping})

    return _finish(res, t_out, build)


def simulate_reduced(ctrl, init, T, dt_out=DEFAULT_DT_OUT, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
                     damping=True):
    """Integrate the shaped closed-loop field directly (no plant model in the loop)."""
    sys = ctrl.sys
    n = sys.n
    if not isinstance(init, PhaseState):
        init = PhaseState(*init)

    def rhs(t, x):
        q, p = x[:n], x[n:]
        v = ctl.damping(ctrl, q, p) if damping else np.zeros(sys.m)
        return np.concatenate(ctl.reduced_dynamics(ctrl, q, p, v))

    t_out = _sample_times(T, dt_out)
    res = integrate_ivp(rhs, (0.0, T), init.as_vector(), rtol=rtol, atol=atol, t_eval=t_out,
                        stop_on=_EXIT_ERRORS)

    def build(t, y):
        q, p = y[:, :n], y[:, n:]
        u = np.array([_feedback(ctrl, a, b, damping) for a, b in zip(q, p)]).reshape(t.size, sys.m)
        H = np.array([ctl.closed_loop_energy(ctrl, a, b) for a, b in zip(q, p)])
        return Trajectory(t=t, q=q, p=p, u=u, H_d=H, meta={"mode": "shaped-field", "damping": damping})

    return _finish(res, t_out, build)


def simulate_interconnected(ctrl, init, T, offset=None, dt_out=DEFAULT_DT_OUT, rtol=DEFAULT_RTOL,
                            atol=DEFAULT_ATOL, damping=True):
    """Plant and dynamic controller integrated as one ``5n``-dimensional system.

    Controller states start at ``(q, q, p)`` plus ``offset`` (a
    :class:`~ph_shape.controller.CbIControllerState` or a triple of arrays).
    """
    sys = ctrl.sys
    n = sys.n
    if not isinstance(init, PhaseState):
        init = PhaseState(*init)
    cs0 = ctl.CbIControllerState.on_manifold(init.q, init.p, offset)
    kd_zero = None if damping else (lambda y: np.zeros(sys.m))

    def split(x):
        return x[:n], x[n:2 * n], ctl.CbIControllerState.from_vector(x[2 * n:])

    def rhs(t, x):
        q, p, cs = split(x)
        qd, pd, csd, _, _ = ctl.interconnected_rhs(ctrl, q, p, cs, kd_zero)
        return np.concatenate([qd, pd, csd.as_vector()])

    t_out = _sample_times(T, dt_out)
    x0 = np.concatenate([init.as_vector(), cs0.as_vector()])
    res = integrate_ivp(rhs, (0.0, T), x0, rtol=rtol, atol=atol, t_eval=t_out, stop_on=_EXIT_ERRORS)

    def build(t, y):
        q, p = y[:, :n], y[:, n:2 * n]
        qa1, qa2, pa = y[:, 2 * n:3 * n], y[:, 3 * n:4 * n], y[:, 4 * n:]
        u = np.array([ctl.interconnected_rhs(ctrl, *split(row), kd_zero)[3] for row in y]).reshape(t.size, sys.m)
        H = np.array([ctl.closed_loop_energy(ctrl, a, b) for a, b in zip(q, p)])
        drift = np.max(np.stack([np.linalg.norm(qa1 - q, axis=1), np.linalg.norm(qa2 - q, axis=1),
                                 np.linalg.norm(pa - p, axis=1)]), axis=0) if t.size else np.empty(0)
        return Trajectory(t=t, q=q, p=p, u=u, H_d=H, q_a1=qa1, q_a2=qa2, p_a=pa, drift=drift,
                          meta={"mode": "interconnected", "damping": damping})

    return _finish(res, t_out, build)
