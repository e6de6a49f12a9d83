"""Differentiable rigid-body simulation with neural-scalar augmentation and
nonlinear least-squares system identification."""

__version__ = "0.1.0"

from .dual import Dual, gradient, jacobian, make_parameter
from .models import MultiBodyModel, parse_model, serialize_model
from .neural import (
    NetworkSpec,
    NeuralBlueprint,
    NeuralRegistry,
    mlp_forward,
    parse_blueprint,
    resolve,
    serialize_blueprint,
    weight_count,
)
from .dynamics import (
    SimulationError,
    bias_forces,
    forward_dynamics,
    integrate_step,
    mass_matrix,
    rollout,
    rollout_states,
    total_energy,
)
from .contact import (
    ContactPoint,
    detect_contacts,
    hunt_crossley_normal,
    neural_friction,
    pgs_rollout,
    pgs_target_step,
)
from .sysid import (
    IdentificationProblem,
    ObjectiveConfig,
    ParameterVector,
    SolveReport,
    SolverError,
    lma_solve,
    pbh_search,
)
from .trajectory import (
    Trajectory,
    TrajectoryState,
    import_double_pendulum,
    read_trajectory,
    resample,
    write_trajectory,
)
