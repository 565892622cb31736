"""Co-optimization of EV charging setpoints, LQR feedback, and incentives."""

from .network import (
    BusSpec,
    EvcsParams,
    GridError,
    GridModel,
    LineSpec,
    VsiReport,
    bundled_grid_path,
    compute_vsi,
    load_grid,
    sending_bus,
)
from .dynamics import (
    EquilibriumError,
    OperatingPoint,
    SingularStateError,
    StateLayout,
    algebraic_residual,
    dae_rhs,
    solve_equilibrium,
)
from .linearization import (
    FullLinearModel,
    ReducedLinearModel,
    eigen_report,
    linearize,
    participation_factors,
    reduce_model,
)
from .control import h2_norm_sq, lqr_gain, solve_lyapunov
from .coopt import (
    OptimizationConfig,
    OptimizationResult,
    SetpointCoOptimizer,
    StabilityAwareCoOptimizer,
    default_demand,
    run_algorithm1,
    run_algorithm2,
)
from .incentive import DemandSubmission, OfferTable, build_offers, demand_currents
from .simulate import Scenario, Event, Trajectory, run_simulation

__version__ = "0.1.0"
