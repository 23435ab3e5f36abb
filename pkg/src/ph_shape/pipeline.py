"""Config-driven synthesis, verification and simulation shared by the CLI and the estimator."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from . import sim
from .exceptions import DomainError, PhShapeError
from .matching import (
    eval_Vd,
    free_function_from_descriptor,
    integrate_ke,
    integrate_potential,
    ke_residual,
    lambda_min,
    pe_residual,
)
from .casimir import reduced_structure
from .mechanics import PhaseState

log = logging.getLogger(__name__)

# verification thresholds
KE_NODE_TOL = 1e-7
KE_INTERP_TOL = 1e-5
PE_NODE_TOL = 1e-7
SKEW_TOL = 1e-10
DUAL_PATH_TOL = 1e-9
CASIMIR_TOL = 1e-9
N_CASIMIR = 50
N_INTERP = 1000
N_STATES = 200
CHECK_SEED = 0


def synthesize(cfg, sys=None):
    """Added-mass table, shaped potential and controller from a :class:`RunConfig`.

    Returns
    -------
    ctrl : ShapedController
    info : dict
        Timings and summary numbers for reporting.
    """
    sys = sys or cfg.build_system()
    syn, pot = cfg.synthesis, cfg.potential
    free = free_function_from_descriptor(sys, syn.free_function.as_descriptor())
    init = syn.init.state(sys)
    t0 = time.perf_counter()
    table = integrate_ke(sys, free, init, syn.range, rtol=syn.rtol, atol=syn.atol, dq=syn.dq,
                         interp_tol=syn.interp_tol)
    t1 = time.perf_counter()
    potential = integrate_potential(sys, table, pot.ansatz, pot.init, pot.kappa, pot.k_choice,
                                    anchor=pot.anchor, rtol=syn.rtol, atol=syn.atol)
    t2 = time.perf_counter()
    ctrl = ctl.ShapedController(sys, table, potential, cfg.damping.kd)
    info = {
        "domain": list(table.domain),
        "table_range": list(table.table_range),
        "nodes": int(table.grid.size),
        "lambda_min_range": [float(table.lambda_min.min()), float(table.lambda_min.max())],
        "time_mass": t1 - t0,
        "time_potential": t2 - t1,
    }
    k0 = int(np.argmin(np.abs(table.grid - init.q_i)))
    info["s_at_init"] = {"q_i": float(table.grid[k0]), "s1": table.s1[k0].tolist(),
                         "s2": table.s2[k0].tolist(), "s3": table.s3[k0].tolist()}
    if np.any(np.linalg.eigvalsh(table.s3[k0]) <= 0):
        info["warning"] = (f"s3({table.grid[k0]:.6g}) = {table.s3[k0].tolist()} is not positive; "
                           "the shaped potential may not have its minimum at the target")
        log.warning(info["warning"])
    if syn.free_function.kind == "target_Md":
        target = np.asarray(syn.free_function.md_inv, dtype=float)
        dev = max(float(np.max(np.abs(sys.inv_mass(sys.config_vector(q)) + ma - target)))
                  for q, ma in zip(table.grid, table.ma))
        info["md_inv_max_deviation"] = dev
    return ctrl, info


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""
    lower: bool = False

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        rel = "> " if self.lower else "tol "
        tail = f" {self.detail}" if self.detail else ""
        return f"[{mark}] {self.name}: {self.value:.3e} ({rel}{self.tol:.0e}){tail}"


@dataclass
class CheckReport:
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, value, tol, detail=""):
        value = float(value)
        self.checks.append(Check(name, value, tol, bool(np.isfinite(value) and value <= tol), detail))

    def add_floor(self, name, value, floor, detail=""):
        value = float(value)
        self.checks.append(Check(name, value, floor, bool(np.isfinite(value) and value > floor), detail, True))

    def as_dict(self):
        return {"passed": self.passed, "info": self.info,
                "checks": [c.__dict__ for c in self.checks]}


def _safe_max(fn, items):
    """Largest ``fn(item)``; evaluation failures count as infinite."""
    worst = 0.0
    for it in items:
        try:
            worst = max(worst, float(fn(it)))
        except (PhShapeError, FloatingPointError, np.linalg.LinAlgError):
            return np.inf
    return worst


def check_mass_table(sys, table, report=None, n_interp=N_INTERP):
    """Kinetic-energy residuals at nodes and between them, plus the ``lambda_min`` profile."""
    report = report or CheckReport()

    def node_res(k):
        q = sys.config_vector(table.grid[k])
        return np.max(np.abs(ke_residual(sys, table.ma[k], table.dma[k], q)))

    def interp_res(q_i):
        Ma, dMa = table.evaluate(q_i)
        return np.max(np.abs(ke_residual(sys, Ma, dMa, sys.config_vector(q_i))))

    report.add("KE residual at nodes", _safe_max(node_res, range(table.grid.size)), KE_NODE_TOL)
    lo, hi = table.table_range
    report.add("KE residual interpolated", _safe_max(interp_res, np.linspace(lo, hi, n_interp)), KE_INTERP_TOL,
               f"{n_interp} points")
    lam = np.array([lambda_min(sys, ma, sys.config_vector(q)) for q, ma in zip(table.grid, table.ma)])
    report.info["lambda_min_range"] = [float(lam.min()), float(lam.max())]
    report.info["lambda_min_stored_mismatch"] = float(np.max(np.abs(lam - table.lambda_min)))
    report.add_floor("min eigenvalue of M^-1 + Ma", lam.min(), 0.0)
    return report


def _random_states(ctrl, count, seed):
    rng = np.random.default_rng(seed)
    sys = ctrl.sys
    lo, hi = ctrl.domain
    qs = rng.uniform(-1.0, 1.0, size=(count, sys.n))
    qs[:, sys.mass_coord] = rng.uniform(lo, hi, size=count)
    ps = rng.normal(size=(count, sys.n))
    return list(zip(qs, ps))


def pe_node_residual(ctrl, q_other=(-1.0, 0.0, 0.5, 1.0)):
    """Largest potential-matching residual on the grid (several values of the other coordinates)."""
    sys, table, pot = ctrl.sys, ctrl.mass_table, ctrl.potential
    worst = 0.0
    for k, q_i in enumerate(table.grid):
        for c in q_other:
            q = np.full(sys.n, c)
            q[sys.mass_coord] = q_i
            _, gvm = pot.V_m(q)
            worst = max(worst, float(np.max(np.abs(pe_residual(sys, table.ma[k], gvm, q)))))
    return worst


def check_controller(ctrl, n_states=N_STATES, seed=CHECK_SEED):
    """Full verification report for a controller package."""
    report = check_mass_table(ctrl.sys, ctrl.mass_table)
    try:
        pe = pe_node_residual(ctrl)
    except PhShapeError:
        pe = np.inf
    report.add("PE residual at nodes", pe, PE_NODE_TOL)
    states = _random_states(ctrl, n_states, seed)

    def skew(fn):
        def f(s):
            A = fn(ctrl, *s)
            return np.max(np.abs(A + A.T))
        return f

    report.add("J skew-symmetry", _safe_max(skew(ctl.assemble_J), states), SKEW_TOL)
    report.add("J2 skew-symmetry", _safe_max(skew(ctl.assemble_J2), states), SKEW_TOL)

    def dual(s):
        return np.max(np.abs(ctl.control_law(ctrl, *s) - ctl.control_law_split(ctrl, *s)))

    report.add("dual-path control agreement", _safe_max(dual, states), DUAL_PATH_TOL, f"{n_states} states")

    phs = ctl.closed_loop_phs(ctrl)

    def casimir(s):
        q, p = s
        Fr = reduced_structure(phs, np.concatenate([q, p]))
        return np.max(np.abs(Fr - ctl.reduced_structure_expected(ctrl, q, p)))

    report.add("Casimir-reduced structure", _safe_max(casimir, states[:N_CASIMIR]), CASIMIR_TOL,
               f"{N_CASIMIR} states")
    Vd0, _ = eval_Vd(ctrl.potential, np.zeros(ctrl.sys.n)) if ctrl.contains(np.zeros(ctrl.sys.n)) else (np.nan, None)
    report.info["V_d(0)"] = float(Vd0)
    report.info["domain"] = list(ctrl.domain)
    return report


def initial_state(cfg, sys):
    s = cfg.simulation
    p0 = np.zeros(sys.n) if s.p0 is None else np.asarray(s.p0, dtype=float)
    return PhaseState(np.asarray(s.q0, dtype=float), p0)


def run_simulation(ctrl, cfg, mode=None, T=None):
    """Simulate with the settings of ``cfg.simulation``; ``mode`` overrides the config."""
    s = cfg.simulation
    mode = mode or s.mode
    init = initial_state(cfg, ctrl.sys)
    T = s.T if T is None else T
    if not ctrl.contains(init.q):
        raise DomainError(float(init.q[ctrl.sys.mass_coord]), ctrl.domain)
    if mode == "reduced":
        return sim.simulate_closed_loop(ctrl, init, T, dt_out=s.dt_out, rtol=s.rtol, atol=s.atol)
    if mode == "interconnected":
        return sim.simulate_interconnected(ctrl, init, T, offset=s.offset, dt_out=s.dt_out, rtol=s.rtol,
                                           atol=s.atol)
    raise PhShapeError(f"unknown simulation mode {mode!r}")


def summarize(traj, ctrl, energy_tol=1e-6, drift_tol=1e-6):
    """Summary dictionary printed by ``simulate``."""
    x0 = np.concatenate([traj.q[0], traj.p[0]]) if len(traj) else np.zeros(0)
    x1 = np.concatenate([traj.q[-1], traj.p[-1]]) if len(traj) else np.zeros(0)
    inc = traj.max_energy_increase()
    out = {
        "status": traj.status,
        "message": traj.message,
        "samples": len(traj),
        "t_final": float(traj.t[-1]) if len(traj) else 0.0,
        "initial_state_norm": float(np.linalg.norm(x0)),
        "final_state_norm": float(np.linalg.norm(x1)),
        "final_config_norm": float(np.linalg.norm(traj.q[-1])) if len(traj) else 0.0,
        "H_d_initial": float(traj.H_d[0]) if len(traj) else float("nan"),
        "H_d_final": float(traj.H_d[-1]) if len(traj) else float("nan"),
        "max_H_d_increase": inc,
        "H_d_monotone": "PASS" if (inc <= energy_tol and len(traj) > 1 and traj.H_d[-1] < traj.H_d[0]) else "FAIL",
        "kappa": ctrl.potential.kappa,
        "kd": ctrl.kd.tolist(),
        "mode": traj.meta.get("mode"),
    }
    if traj.interconnected:
        drift = float(np.max(traj.drift)) if len(traj) else 0.0
        out["max_casimir_drift"] = drift
        out["casimir_drift"] = "PASS" if drift <= drift_tol else "FAIL"
    return out


__all__ = [
    "synthesize", "check_mass_table", "check_controller", "pe_node_residual", "run_simulation",
    "summarize", "initial_state", "CheckReport", "Check",
]
