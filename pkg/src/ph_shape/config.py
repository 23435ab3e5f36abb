"""Run configuration schema.

A config file is JSON with five blocks: ``system``, ``synthesis``,
``potential``, ``damping`` and ``simulation``.  Unknown keys anywhere are
rejected.  :func:`load_config` turns every validation or IO problem into a
:class:`~ph_shape.exceptions.ConfigError`.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError, PhShapeError
from .matching import DEFAULT_ATOL, DEFAULT_DQ, DEFAULT_RTOL, INTERP_TOL, K_CHOICES, AddedMassState
from .mechanics import make_system
from .sim import DEFAULT_DT_OUT

Matrix = Union[float, list[float], list[list[float]]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemBlock(_Strict):
    system: str
    params: dict[str, float] = Field(default_factory=dict)


class FreeFunctionBlock(_Strict):
    kind: Literal["constant", "target_Md"]
    value: Optional[Matrix] = None
    md_inv: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "constant" and self.md_inv is not None:
            raise ValueError("constant free function takes 'value', not 'md_inv'")
        if self.kind == "target_Md" and self.md_inv is None:
            raise ValueError("target_Md free function needs 'md_inv'")
        return self

    def as_descriptor(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": 0.0 if self.value is None else self.value}
        return {"kind": "target_Md", "md_inv": self.md_inv}


class InitBlock(_Strict):
    """Initial added inverse mass: explicit blocks, or ``md_inv - M^{-1}(q_i)``."""

    q_i: float = 0.0
    m_a11: Optional[Matrix] = None
    m_a21: Optional[Matrix] = None
    m_a22: Optional[Matrix] = None
    md_inv: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        blocks = [self.m_a11, self.m_a21, self.m_a22]
        if self.md_inv is None and any(b is None for b in blocks):
            raise ValueError("give either 'md_inv' or all of 'm_a11', 'm_a21', 'm_a22'")
        if self.md_inv is not None and any(b is not None for b in blocks):
            raise ValueError("'md_inv' and explicit blocks are mutually exclusive")
        return self

    def state(self, sys):
        if self.md_inv is not None:
            target = np.asarray(self.md_inv, dtype=float)
            if target.shape != (sys.n, sys.n):
                raise ConfigError(f"md_inv must be {sys.n}x{sys.n}")
            Ma = target - sys.inv_mass(sys.config_vector(self.q_i))
            return AddedMassState.from_matrix(self.q_i, Ma, sys.m)
        return AddedMassState(self.q_i, self.m_a11, self.m_a21, self.m_a22)


class SynthesisBlock(_Strict):
    init: InitBlock
    free_function: FreeFunctionBlock
    range: tuple[float, float]
    rtol: float = Field(DEFAULT_RTOL, gt=0)
    atol: float = Field(DEFAULT_ATOL, gt=0)
    dq: float = Field(DEFAULT_DQ, gt=0)
    interp_tol: float = Field(INTERP_TOL, gt=0)

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.range
        if not lo < hi:
            raise ValueError("synthesis range must be ascending")
        if not lo <= self.init.q_i <= hi:
            raise ValueError("init.q_i must lie inside the synthesis range")
        return self


class PotentialBlock(_Strict):
    ansatz: Literal["single", "trig"]
    init: dict[str, float] = Field(default_factory=dict)
    kappa: float = Field(gt=0)
    k_choice: str
    anchor: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.k_choice not in K_CHOICES:
            raise ValueError(f"k_choice must be one of {sorted(K_CHOICES)}")
        allowed = {"single": {"V_m"}, "trig": {"f1", "f2"}}[self.ansatz]
        extra = set(self.init) - allowed
        if extra:
            raise ValueError(f"unknown potential init keys {sorted(extra)} for ansatz {self.ansatz!r}")
        return self


class DampingBlock(_Strict):
    kd: Matrix


class SimulationBlock(_Strict):
    q0: list[float]
    p0: Optional[list[float]] = None
    T: float = Field(gt=0)
    dt_out: float = Field(DEFAULT_DT_OUT, gt=0)
    rtol: float = Field(1e-9, gt=0)
    atol: float = Field(1e-12, gt=0)
    mode: Literal["reduced", "interconnected"] = "reduced"
    offset: Optional[tuple[list[float], list[float], list[float]]] = None


class RunConfig(_Strict):
    """Validated run configuration."""

    system: SystemBlock
    synthesis: SynthesisBlock
    potential: PotentialBlock
    damping: DampingBlock
    simulation: SimulationBlock

    def build_system(self):
        try:
            return make_system(self.system.system, self.system.params)
        except PhShapeError as exc:
            raise ConfigError(str(exc)) from exc

    @model_validator(mode="after")
    def _dims(self):
        n = len(self.simulation.q0)
        if self.simulation.p0 is not None and len(self.simulation.p0) != n:
            raise ValueError("simulation.p0 and simulation.q0 differ in length")
        return self


def parse_config(data):
    """Validate a mapping; raises :class:`ConfigError`."""
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from exc
    sys = cfg.build_system()
    if len(cfg.simulation.q0) != sys.n:
        raise ConfigError(f"simulation.q0 must have {sys.n} entries for {sys.name}")
    return cfg


def load_config(path):
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(data)


def bundled_config_path(name):
    """Path of a config shipped with the package (``"cartpole"`` or ``"acrobot"``)."""
    from importlib.resources import files

    res = files("ph_shape") / "configs" / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(res))
