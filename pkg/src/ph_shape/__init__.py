"""Total energy shaping of underactuated mechanical systems by control by interconnection.

Typical use::

    from ph_shape import load_config, synthesize, simulate_closed_loop
    cfg = load_config(bundled_config_path("cartpole"))
    ctrl, info = synthesize(cfg)
"""

from .config import RunConfig, bundled_config_path, load_config, parse_config
from .controller import (
    CbIControllerState,
    ShapedController,
    assemble_J,
    assemble_J2,
    closed_loop_energy,
    control_law,
    control_law_split,
    damping,
    reduced_dynamics,
)
from .estimator import EnergyShapingController
from .exceptions import (
    ConfigError,
    DomainBoundaryError,
    DomainError,
    PackageError,
    PhShapeError,
    SingularMassError,
    SingularMatrixError,
)
from .matching import AddedMassState, AddedMassTable, ShapedPotential, integrate_ke, integrate_potential
from .mechanics import MechanicalSystem, PhaseState, acrobot, cart_pole, make_system
from .package import load_package, save_package
from .pipeline import check_controller, run_simulation, synthesize
from .sim import Trajectory, simulate_closed_loop, simulate_interconnected, simulate_reduced

__version__ = "0.1.0"
