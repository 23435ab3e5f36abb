"""Controller package: a directory with a JSON envelope and two node tables.

Layout::

    package.json      system, synthesis and potential metadata, damping gain
    added_mass.csv    one row per node: q_i, Ma blocks, d/dq_i and d2/dq_i2 of
                      the blocks, s1, s2, s3, lambda_min
    potential.csv     one row per node: V_m coefficients, their derivatives and
                      the Gamma offset with its derivative

Every number is written with 17 significant digits so a reload reproduces the
tables bit for bit.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .controller import ShapedController
from .exceptions import PhShapeError, PackageError
from .hermite import HermiteTable
from .matching import AddedMassTable, GammaTable, K_CHOICES, ShapedPotential
from .mechanics import system_from_dict
from .sim import write_csv

log = logging.getLogger(__name__)

FORMAT = "ph-shape-controller"
VERSION = 1
ENVELOPE = "package.json"
MASS_CSV = "added_mass.csv"
POTENTIAL_CSV = "potential.csv"

_BLOCKS = ("m_a11", "m_a21", "m_a22")


def _block_slices(n, m):
    return {"m_a11": (slice(0, m), slice(0, m)), "m_a21": (slice(m, n), slice(0, m)),
            "m_a22": (slice(m, n), slice(m, n))}


def _names(prefix, rows, cols):
    if rows * cols == 1:
        return [prefix]
    return [f"{prefix}_{a + 1}{b + 1}" for a in range(rows) for b in range(cols)]


def mass_table_header(n, m):
    r = n - m
    shapes = {"m_a11": (m, m), "m_a21": (r, m), "m_a22": (r, r)}
    cols = ["q_i"]
    for pre in ("", "d_", "dd_"):
        for b in _BLOCKS:
            cols += _names(pre + b, *shapes[b])
    cols += _names("s1", r, r) + _names("s2", r, m) + _names("s3", r, r) + ["lambda_min"]
    return cols


def mass_table_rows(table):
    n, m = table.n, table.m
    sl = _block_slices(n, m)
    N = table.grid.size
    ddma = table.ddma if table.ddma is not None else np.full_like(table.ma, np.nan)
    parts = [table.grid[:, None]]
    for arr in (table.ma, table.dma, ddma):
        parts += [arr[:, rs, cs].reshape(N, -1) for rs, cs in (sl[b] for b in _BLOCKS)]
    parts += [table.s1.reshape(N, -1), table.s2.reshape(N, -1), table.s3.reshape(N, -1),
              table.lambda_min[:, None]]
    return np.hstack(parts)


def _assemble(blocks, n, m):
    """Symmetric ``(N, n, n)`` matrices from the three flat block arrays."""
    a11, a21, a22 = blocks
    N = a11.shape[0]
    out = np.empty((N, n, n))
    out[:, :m, :m] = a11.reshape(N, m, m)
    out[:, m:, :m] = a21.reshape(N, n - m, m)
    out[:, :m, m:] = np.transpose(out[:, m:, :m], (0, 2, 1))
    out[:, m:, m:] = a22.reshape(N, n - m, n - m)
    return out


def potential_header(kind):
    vm = ["V_m"] if kind == "single" else ["f1", "f2"]
    return ["q_i"] + vm + ["d_" + c for c in vm] + ["gamma", "d_gamma"]


def potential_rows(pot):
    t = pot.table
    return np.hstack([t.x[:, None], t.y.reshape(t.x.size, -1), t.dy.reshape(t.x.size, -1),
                      pot.gamma.table.y.reshape(-1, 1), pot.gamma.table.dy.reshape(-1, 1)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def envelope(ctrl, extra=None):
    """JSON-ready metadata for ``ctrl``."""
    table, pot = ctrl.mass_table, ctrl.potential
    env = {
        "format": FORMAT,
        "version": VERSION,
        "system": {"system": ctrl.sys.name, "params": dict(ctrl.sys.params)},
        "synthesis": {
            "n": table.n, "m": table.m, "mass_coord": table.mass_coord,
            "domain": list(table.domain), "table_range": list(table.table_range),
            "nodes": int(table.grid.size), **table.meta,
        },
        "potential": {"kind": pot.kind, "kappa": pot.kappa, "k_choice": pot.gamma.k_choice,
                      "gamma_coord": pot.gamma.chosen, **pot.meta},
        "kd": ctrl.kd.tolist(),
        "files": {"added_mass": MASS_CSV, "potential": POTENTIAL_CSV},
    }
    if extra:
        env["extra"] = extra
    return _jsonable(env)


def save_package(ctrl, out_dir, extra=None):
    """Write ``ctrl`` to ``out_dir`` and return the directory path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, pot = ctrl.mass_table, ctrl.potential
    write_csv(out / MASS_CSV, mass_table_header(table.n, table.m), mass_table_rows(table))
    write_csv(out / POTENTIAL_CSV, potential_header(pot.kind), potential_rows(pot))
    with open(out / ENVELOPE, "w", encoding="utf-8") as fh:
        json.dump(envelope(ctrl, extra), fh, indent=2, allow_nan=False)
        fh.write("\n")
    log.info("wrote controller package to %s", out)
    return out


def _read_table(path, header):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise PackageError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != header:
        got = rows[0] if rows else []
        raise PackageError(f"{path.name}: unexpected header {got}, expected {header}")
    body = rows[1:]
    if len(body) < 2:
        raise PackageError(f"{path.name}: need at least two rows")
    try:
        data = np.array(body, dtype=float)
    except ValueError as exc:
        raise PackageError(f"{path.name}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise PackageError(f"{path.name}: ragged rows")
    return data


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise PackageError(f"{name} contains non-finite values")


def load_package(path):
    """Rebuild the :class:`ShapedController` stored in directory ``path``.

    Raises
    ------
    PackageError
        Missing files, malformed JSON or CSV, or tables that disagree with the
        envelope.
    """
    root = Path(path)
    try:
        with open(root / ENVELOPE, encoding="utf-8") as fh:
            env = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PackageError(f"cannot read {root / ENVELOPE}: {exc}") from exc
    try:
        return _from_envelope(root, env)
    except PackageError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, PhShapeError) as exc:
        raise PackageError(f"inconsistent package {root}: {exc!r}") from exc


def _from_envelope(root, env):
    if env.get("format") != FORMAT or env.get("version") != VERSION:
        raise PackageError(f"not a {FORMAT} v{VERSION} package")
    sys = system_from_dict(env["system"])
    syn = env["synthesis"]
    n, m, k = int(syn["n"]), int(syn["m"]), int(syn["mass_coord"])
    if (n, m, k) != (sys.n, sys.m, sys.mass_coord):
        raise PackageError("package dimensions do not match the system")

    data = _read_table(root / MASS_CSV, mass_table_header(n, m))
    r = n - m
    widths = [m * m, r * m, r * r]
    w = sum(widths)
    # second-derivative columns may be blank (NaN) for cubic tables
    _finite(MASS_CSV, np.hstack([data[:, :1 + 2 * w], data[:, 1 + 3 * w:]]))
    grid = data[:, 0]
    if np.any(np.diff(grid) <= 0):
        raise PackageError(f"{MASS_CSV}: q_i must be strictly ascending")
    col = 1
    mats = []
    for _ in range(3):
        blocks = []
        for w in widths:
            blocks.append(data[:, col:col + w])
            col += w
        mats.append(_assemble(blocks, n, m))
    ma, dma, ddma = mats
    if not np.all(np.isfinite(ddma)):
        ddma = None
    N = grid.size
    s1 = data[:, col:col + r * r].reshape(N, r, r)
    col += r * r
    s2 = data[:, col:col + r * m].reshape(N, r, m)
    col += r * m
    s3 = data[:, col:col + r * r].reshape(N, r, r)
    lam = data[:, -1]
    meta = {key: v for key, v in syn.items()
            if key not in ("n", "m", "mass_coord", "domain", "table_range", "nodes")}
    table = AddedMassTable(grid=grid, ma=ma, dma=dma, domain=tuple(syn["domain"]), lambda_min=lam,
                           s1=s1, s2=s2, s3=s3, m=m, mass_coord=k, meta=meta, ddma=ddma)

    pinfo = env["potential"]
    kind = pinfo["kind"]
    if kind not in ("single", "trig"):
        raise PackageError(f"unknown potential kind {kind!r}")
    pdata = _read_table(root / POTENTIAL_CSV, potential_header(kind))
    _finite(POTENTIAL_CSV, pdata)
    if pdata.shape[0] != N or np.any(pdata[:, 0] != grid):
        raise PackageError(f"{POTENTIAL_CSV} grid differs from {MASS_CSV}")
    nv = 1 if kind == "single" else 2
    vm_table = HermiteTable(grid, pdata[:, 1:1 + nv], pdata[:, 1 + nv:1 + 2 * nv])
    k_choice = pinfo["k_choice"]
    if k_choice not in K_CHOICES:
        raise PackageError(f"unknown Gamma choice {k_choice!r}")
    gamma = GammaTable(HermiteTable(grid, pdata[:, -2:-1], pdata[:, -1:]), chosen=K_CHOICES[k_choice],
                       mass_coord=k, k_choice=k_choice, sys=sys, mass_table=table)
    pmeta = {key: v for key, v in pinfo.items() if key not in ("kind", "kappa", "k_choice", "gamma_coord")}
    pot = ShapedPotential(kind=kind, table=vm_table, gamma=gamma, kappa=float(pinfo["kappa"]),
                          mass_coord=k, sys=sys, mass_table=table, meta=pmeta)
    return ShapedController(sys, table, pot, np.asarray(env["kd"], dtype=float))


def read_envelope(path):
    """Metadata of a package without rebuilding the tables."""
    try:
        with open(Path(path) / ENVELOPE, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PackageError(f"cannot read {Path(path) / ENVELOPE}: {exc}") from exc
