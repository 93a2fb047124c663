"""Path-anchored output-tracking MPC toolkit for non-holonomic robots.

Modules: dynamics (differential-drive model and RK4 sensitivities),
geometry (polytopes and separation certificates), paths (reference
paths and clearance checks), ocp (transcription of the tracking OCP),
nlp (augmented Lagrangian solver), mpc (receding-horizon controller and
monitors), planner (RRT*-style waypoint search), sim (closed-loop
engine), cli (scenario files and subcommands).
"""

from .dynamics import (
    DiffDriveModel,
    InputBounds,
    RobotInput,
    RobotState,
    diff_drive_jacobians,
    diff_drive_ode,
    rk4_jacobians,
    rk4_step,
)
from .geometry import (
    ConvexPolytope,
    best_certificate,
    certificate_exists,
    farkas_margin,
    inflate,
)
from .mpc import (
    ControllerFault,
    InitialInfeasibilityFault,
    MonitorVerdict,
    PathMpcController,
    StepDiagnostics,
    baseline_tracking_step,
    cold_start,
    evaluate_monitors,
    mpc_step,
    restore_feasibility,
    shift_warm_start,
)
from .nlp import NlpProblem, NlpSolution, SolverOptions, kkt_residuals, minimize_box, solve
from .ocp import (
    BASELINE,
    PROPOSED,
    OcpSpec,
    OcpTranscription,
    StageWeights,
    assemble_nlp,
    check_gradients,
    offset_cost,
    stage_cost,
)
from .paths import (
    ConstantPath,
    PolylinePath,
    ReferencePath,
    SinusoidPath,
    check_path_clearance,
    estimate_lipschitz_gp,
)
from .planner import PlannerConfig, path_length, rrt_star
from .sim import (
    ClosedLoopLog,
    Scenario,
    Termination,
    horizon_sweep,
    lie_bracket_maneuver,
    replay_value_function,
    run_closed_loop,
    verify_controllability_exponent,
    verify_scenario,
    write_log_csv,
)

__version__ = "0.1.0"
