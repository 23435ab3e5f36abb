"""Adaptive Dormand-Prince 5(4) integration with continuous output.

The stepper is written out here rather than delegated to ``scipy`` because
synthesis needs control over termination: an exception raised by the
right-hand side at a trial stage is treated like a rejected step, and
integration stops cleanly (keeping everything accepted so far) once the step
would fall below ``h_min``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Butcher tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th-order minus embedded 4th-order weights (7 stages, last is FSAL)
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + th) = y + h * K^T P [th, th^2, th^3, th^4]
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class StepUnderflow(Exception):
    pass


@dataclass
class OdeResult:
    """Outcome of :func:`integrate_ivp`.

    ``t``/``y``/``dy``/``ddy`` hold the requested output samples that were
    reached (``dy`` is the right-hand side at a step end and the derivative
    of the continuous extension elsewhere; ``ddy`` is always the second
    derivative of the continuous extension);
    ``t_steps``/``y_steps``/``f_steps`` hold every accepted step.
    ``status`` is ``"success"``, ``"step_underflow"`` or ``"stopped"`` (the
    right-hand side raised one of the ``stop_on`` exceptions and the step
    could not be shrunk around it).
    """

    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    ddy: np.ndarray
    t_steps: np.ndarray
    y_steps: np.ndarray
    f_steps: np.ndarray
    status: str
    message: str = ""
    nfev: int = 0
    stop_exception: Exception | None = field(default=None, repr=False)

    @property
    def success(self):
        return self.status == "success"

    @property
    def t_last(self):
        return float(self.t_steps[-1])


def _rms_norm(x):
    return np.sqrt(np.mean(x * x)) if x.size else 0.0


def _initial_step(fun, t0, y0, f0, direction, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = _rms_norm(y0 / scale)
    d1 = _rms_norm(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = _rms_norm((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def _dense_eval(K, y, h, theta):
    """Value and first two time derivatives of the continuous extension at ``t + theta h``."""
    Q = K.T @ P
    th = np.array([theta, theta ** 2, theta ** 3, theta ** 4])
    dth = np.array([1.0, 2 * theta, 3 * theta ** 2, 4 * theta ** 3])
    ddth = np.array([0.0, 2.0, 6 * theta, 12 * theta ** 2])
    return y + h * (Q @ th), Q @ dth, (Q @ ddth) / h


def integrate_ivp(fun, t_span, y0, rtol=1e-9, atol=1e-12, t_eval=None, h_min=1e-12,
                  h_max=np.inf, stop_on=(), max_steps=1_000_000, land_on_eval=False):
    """Integrate ``y' = fun(t, y)`` over ``t_span`` (either direction).

    Parameters
    ----------
    t_eval : array_like, optional
        Output times, monotone in the direction of integration.  Values are
        produced by the method's continuous extension, or, with
        ``land_on_eval=True``, by shortening steps so they end on each output
        time.
    stop_on : tuple of exception types
        Exceptions from ``fun`` that mark the edge of the admissible region.
        They cause step rejection; integration stops with status
        ``"stopped"`` once the step size underflows.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.array(y0, dtype=float).reshape(-1)
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    nfev = 0

    def f(t, yy):
        nonlocal nfev
        nfev += 1
        return np.asarray(fun(t, yy), dtype=float).reshape(-1)

    f0 = f(t0, y)
    if not np.all(np.isfinite(f0)):
        raise FloatingPointError(f"right-hand side not finite at t={t0}")

    if t_eval is None:
        t_eval = np.array([t0, t1]) if span > 0 else np.array([t0])
    t_eval = np.asarray(t_eval, dtype=float)
    out_t, out_y, out_dy, out_ddy = [], [], [], []
    k_eval = 0
    while k_eval < t_eval.size and direction * (t_eval[k_eval] - t0) <= 0:
        if t_eval[k_eval] == t0:
            out_t.append(t0)
            out_y.append(y.copy())
            out_dy.append(f0.copy())
            out_ddy.append(np.full_like(f0, np.nan))
        k_eval += 1

    t_steps, y_steps, f_steps = [t0], [y.copy()], [f0.copy()]
    status, message, stop_exc = "success", "", None
    if span == 0:
        return OdeResult(np.array(out_t), np.array(out_y).reshape(len(out_t), -1),
                         np.array(out_dy).reshape(len(out_t), -1),
                         np.array(out_ddy).reshape(len(out_t), -1), np.array(t_steps), np.array(y_steps), np.array(f_steps), status, message, nfev)

    h = min(_initial_step(f, t0, y, f0, direction, rtol, atol, span), h_max)
    t = t0
    K = np.empty((7, y.size))
    rejected_last = False
    steps = 0
    while direction * (t1 - t) > 0:
        steps += 1
        if steps > max_steps:
            status, message = "max_steps", f"exceeded {max_steps} steps"
            break
        if h < h_min:
            status = "stopped" if stop_exc is not None else "step_underflow"
            message = f"step size {h:.3g} below {h_min:.3g} at t={t:.15g}"
            break
        h = min(h, abs(t1 - t))
        h_try = h
        if land_on_eval and k_eval < t_eval.size:
            h = min(h, abs(t_eval[k_eval] - t))
        hs = direction * h
        try:
            K[0] = f0
            for s in range(1, 6):
                K[s] = f(t + C[s] * hs, y + hs * (A[s] @ K[:s]))
            y_new = y + hs * (B @ K[:6])
            if h == abs(t1 - t):
                t_new = t1
            elif land_on_eval and k_eval < t_eval.size and h == abs(t_eval[k_eval] - t):
                t_new = t_eval[k_eval]
            else:
                t_new = t + hs
            f_new = f(t_new, y_new)
        except stop_on as exc:
            stop_exc = exc
            h *= 0.5
            rejected_last = True
            continue
        K[6] = f_new
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            h *= 0.5
            rejected_last = True
            continue
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms_norm(hs * (E @ K) / scale)
        if err <= 1.0:
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            if rejected_last:
                factor = min(1.0, factor)
            while k_eval < t_eval.size and direction * (t_eval[k_eval] - t_new) <= 0:
                out_t.append(t_eval[k_eval])
                yy, dyy, ddyy = _dense_eval(K, y, hs, (t_eval[k_eval] - t) / hs)
                if t_eval[k_eval] == t_new:
                    yy, dyy = y_new.copy(), f_new.copy()
                out_y.append(yy)
                out_dy.append(dyy)
                out_ddy.append(ddyy)
                k_eval += 1
            t, y, f0 = t_new, y_new, f_new
            t_steps.append(t)
            y_steps.append(y.copy())
            f_steps.append(f0.copy())
            stop_exc = None
            rejected_last = False
            h = min(max(h, h_try if land_on_eval else h) * factor, h_max)
        else:
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
            rejected_last = True

    if status != "success":
        log.debug("integration ended early: %s", message)
    n = y.size
    return OdeResult(
        t=np.array(out_t),
        y=np.array(out_y).reshape(len(out_t), n),
        dy=np.array(out_dy).reshape(len(out_t), n),
        ddy=np.array(out_ddy).reshape(len(out_t), n),
        t_steps=np.array(t_steps),
        y_steps=np.array(y_steps),
        f_steps=np.array(f_steps),
        status=status,
        message=message,
        nfev=nfev,
        stop_exception=stop_exc,
    )
