"""Cascaded external/internal convertible (CEIC) control of highly underactuated balance robots.

Modules:

* :mod:`ceic.dynamics`    manipulator-form models and the actuated/unactuated split
* :mod:`ceic.cascade`     recursive decomposition into virtually actuated levels
* :mod:`ceic.bem`         balance equilibrium manifolds and their derivatives
* :mod:`ceic.controllers` classic EIC and cascaded EIC controllers, gain checks
* :mod:`ceic.systems`     cart-pendulum models (single, double, triple)
* :mod:`ceic.sim`         RK4 closed-loop simulation, logs and error metrics
* :mod:`ceic.config`, :mod:`ceic.cli`  scenario files and the command-line runner
"""

from .bem import BemFilter, BemHistory, SolverSettings, bem_derivatives, solve_bem
from .cascade import build_chain, verify_conditions
from .controllers import (
    REFERENCE_GAINS,
    CEICController,
    DerivativeSettings,
    EICController,
    GainSchedule,
    SineReference,
    ConstantReference,
    eic_gains_from_levels,
    eic_rank_diagnostic,
    make_controller,
    validate_gains,
)
from .dynamics import (
    ContractViolation,
    NumericError,
    Partition,
    RobotModel,
    SingularityError,
    StateVector,
    eval_terms,
    forward_dynamics,
    total_energy,
)
from .sim import SimConfig, TrajectoryLog, rk4_step, run_simulation, steady_state_errors
from .systems import (
    CartPendulumParams,
    cart_pole_model,
    double_pendulum_cart_model,
    triple_pendulum_model,
)

__version__ = "0.1.0"
