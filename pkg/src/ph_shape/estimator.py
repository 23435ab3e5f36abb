"""scikit-learn style wrapper around synthesis and the runtime control law.

The estimator learns nothing from data: ``fit`` runs the matching-ODE
synthesis described by its parameters, after which ``predict`` maps rows
``[q, p]`` to control inputs and ``transform`` to the closed-loop energy.
Keeping the sklearn protocol makes parameter sweeps with ``clone`` and
``get_params``/``set_params`` work unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import controller as ctl
from . import pipeline
from .config import load_config, parse_config
from .package import load_package, save_package


class EnergyShapingController(TransformerMixin, BaseEstimator):
    """Total energy shaping controller for a degree-one underactuated system.

    Parameters
    ----------
    system : str
        Registered system name, ``"cart-pole"`` or ``"acrobot"``.
    system_params : dict, optional
        Physical parameters; defaults of the registered model otherwise.
    init : dict
        Initial added inverse mass, either ``{"q_i", "m_a11", "m_a21", "m_a22"}``
        or ``{"q_i", "md_inv"}``.
    free_function : dict
        ``{"kind": "constant", "value": c}`` or ``{"kind": "target_Md", "md_inv": ...}``.
    q_range : tuple of float
        Synthesis interval of the mass coordinate.
    ansatz : {"single", "trig"}
    potential_init : dict
        Initial values of the potential coefficients at ``anchor``.
    kappa : float
        Gain of ``kappa/2 Gamma^2``.
    k_choice : {"inv_beta1", "inv_beta2"}
    kd : float or array_like
        Damping gain.
    rtol, atol, dq : float
        Synthesis integrator tolerances and grid spacing.

    Attributes
    ----------
    controller_ : ShapedController
    synthesis_info_ : dict
    n_features_in_ : int
        ``2 n``.
    """

    def __init__(self, system="cart-pole", system_params=None, init=None, free_function=None,
                 q_range=(-0.7, 0.7), ansatz="single", potential_init=None, kappa=5.0,
                 k_choice="inv_beta1", kd=5.0, rtol=1e-9, atol=1e-12, dq=1e-3):
        self.system = system
        self.system_params = system_params
        self.init = init
        self.free_function = free_function
        self.q_range = q_range
        self.ansatz = ansatz
        self.potential_init = potential_init
        self.kappa = kappa
        self.k_choice = k_choice
        self.kd = kd
        self.rtol = rtol
        self.atol = atol
        self.dq = dq

    def _config(self):
        init = self.init if self.init is not None else {"q_i": 0.0, "m_a11": 0.0, "m_a21": -2.0, "m_a22": 8.0}
        free = self.free_function if self.free_function is not None else {"kind": "constant", "value": 0.0}
        kd = self.kd.tolist() if isinstance(self.kd, np.ndarray) else self.kd
        data = {
            "system": {"system": self.system, "params": dict(self.system_params or {})},
            "synthesis": {"init": init, "free_function": free, "range": list(self.q_range),
                          "rtol": self.rtol, "atol": self.atol, "dq": self.dq},
            "potential": {"ansatz": self.ansatz, "init": dict(self.potential_init or {}),
                          "kappa": self.kappa, "k_choice": self.k_choice},
            "damping": {"kd": kd},
            "simulation": {"q0": [0.0, 0.0], "T": 1.0},
        }
        return parse_config(data)

    def fit(self, X=None, y=None):
        """Run the synthesis; ``X`` and ``y`` are ignored."""
        cfg = self._config()
        self.controller_, self.synthesis_info_ = pipeline.synthesize(cfg)
        self.n_features_in_ = 2 * self.controller_.sys.n
        return self

    def _states(self, X):
        check_is_fitted(self, "controller_")
        X = check_array(X, ensure_2d=True, dtype=float)
        n = self.controller_.sys.n
        if X.shape[1] != 2 * n:
            raise ValueError(f"X has {X.shape[1]} features, expected {2 * n} (q then p)")
        return X[:, :n], X[:, n:]

    def predict(self, X):
        """Control input with damping injection for each row ``[q, p]``; shape ``(N, m)``."""
        q, p = self._states(X)
        c = self.controller_
        return np.array([ctl.control_law(c, a, b, ctl.damping(c, a, b)) for a, b in zip(q, p)])

    def transform(self, X):
        """Closed-loop energy ``H_d`` for each row; shape ``(N, 1)``."""
        q, p = self._states(X)
        c = self.controller_
        return np.array([[ctl.closed_loop_energy(c, a, b)] for a, b in zip(q, p)])

    def check(self):
        """Verification report of the fitted controller."""
        check_is_fitted(self, "controller_")
        return pipeline.check_controller(self.controller_)

    def save(self, path):
        check_is_fitted(self, "controller_")
        return save_package(self.controller_, path)

    @classmethod
    def from_config(cls, path):
        """Unfitted estimator with the parameters of a run config file."""
        cfg = load_config(path)
        syn, pot = cfg.synthesis, cfg.potential
        return cls(system=cfg.system.system, system_params=dict(cfg.system.params),
                   init=syn.init.model_dump(exclude_none=True), free_function=syn.free_function.as_descriptor(),
                   q_range=tuple(syn.range), ansatz=pot.ansatz, potential_init=dict(pot.init),
                   kappa=pot.kappa, k_choice=pot.k_choice, kd=cfg.damping.kd,
                   rtol=syn.rtol, atol=syn.atol, dq=syn.dq)

    @classmethod
    def from_package(cls, path):
        """Fitted estimator wrapping a stored controller package."""
        ctrl = load_package(path)
        est = cls(system=ctrl.sys.name, system_params=dict(ctrl.sys.params), kappa=ctrl.potential.kappa,
                  ansatz=ctrl.potential.kind, k_choice=ctrl.potential.gamma.k_choice, kd=ctrl.kd)
        est.controller_ = ctrl
        est.synthesis_info_ = {"domain": list(ctrl.mass_table.domain)}
        est.n_features_in_ = 2 * ctrl.sys.n
        return est
