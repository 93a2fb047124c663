"""Closed-loop simulation: plant stepping, logging, sweeps, verification.

The simulator drives the plant with the first input of each controller
solve and records per-step diagnostics together with the runtime monitor
verdicts.  The plant integrator is the exact model object the controller
predicts with, so prediction and plant are bit-identical (nominal,
undisturbed setting).  Controller faults terminate a run but still yield
a partial log.

CSV column order (one row per applied step, floats as shortest
round-trip decimals, empty cell when a value does not apply):

    k, x, y, theta, v, omega, V_N, s_star, margin, solver_status,
    fallback, outer_iterations, inner_iterations, lyapunov_ok,
    lyapunov_slack, shift_ok, shift_violation, gap_ok, tracking_gap

Wall times are kept out of the CSV (they would break byte-identical
reruns) and reported in the summary instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nlp
from .dynamics import DiffDriveModel, InputBounds
from .geometry import inflate
from .mpc import ControllerFault, PathMpcController
from .ocp import (
    BASELINE,
    PROPOSED,
    OcpSpec,
    OcpTranscription,
    StageWeights,
    stage_cost,
)
from .paths import (
    ClearanceReport,
    ReferencePath,
    check_path_clearance,
    estimate_lipschitz_gp,
)

SUCCESS = "success"
TIMEOUT = "timeout"
FAULT = "fault"

CSV_COLUMNS = (
    "k",
    "x",
    "y",
    "theta",
    "v",
    "omega",
    "V_N",
    "s_star",
    "margin",
    "solver_status",
    "fallback",
    "outer_iterations",
    "inner_iterations",
    "lyapunov_ok",
    "lyapunov_slack",
    "shift_ok",
    "shift_violation",
    "gap_ok",
    "tracking_gap",
)


class ScenarioError(ValueError):
    """The scenario is not a valid closed-loop setup."""


@dataclass(frozen=True)
class Termination:
    """Run limits: step budget and the at-target thresholds."""

    max_steps: int = 300
    position_tolerance: float = 0.05
    heading_tolerance: float = 0.1

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.position_tolerance <= 0.0 or self.heading_tolerance <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class Scenario:
    """One closed-loop experiment, fully determined and reproducible.

    `obstacles` are the raw shapes; the controller sees them inflated by
    `robot_radius`.  `initial_state` of None starts on the path at s = 0.
    """

    name: str
    path: ReferencePath
    mode: str = PROPOSED
    horizon: int = 10
    step: float = 0.2
    substeps: int = 4
    obstacles: tuple = ()
    robot_radius: float = 0.0
    input_bounds: InputBounds = None
    weights: StageWeights = field(default_factory=StageWeights)
    offset_weight: float = 1000.0
    delta_sep: float = 1e-3
    termination: Termination = field(default_factory=Termination)
    solver_options: nlp.SolverOptions = field(default_factory=nlp.SolverOptions)
    rng_seed: int = 0
    initial_state: np.ndarray = None
    planner: dict = None
    sweep_horizons: tuple = ()

    def __post_init__(self):
        if self.mode not in (PROPOSED, BASELINE):
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if self.input_bounds is None:
            self.input_bounds = InputBounds((-0.31, -1.9), (0.31, 1.9))
        if self.robot_radius < 0.0:
            raise ScenarioError("robot_radius must be non-negative")
        self.obstacles = tuple(self.obstacles)
        if self.initial_state is not None:
            self.initial_state = np.asarray(self.initial_state, dtype=float).reshape(3)

    def inflated_obstacles(self) -> tuple:
        if self.robot_radius == 0.0:
            return self.obstacles
        return tuple(inflate(o, self.robot_radius) for o in self.obstacles)

    def build_model(self) -> DiffDriveModel:
        return DiffDriveModel(self.step, substeps=self.substeps)

    def ocp_spec(self) -> OcpSpec:
        return OcpSpec(
            horizon=self.horizon,
            step=self.step,
            model=self.build_model(),
            path=self.path,
            obstacles=self.inflated_obstacles(),
            input_bounds=self.input_bounds,
            weights=self.weights,
            offset_weight=self.offset_weight,
            delta_sep=self.delta_sep,
        )

    def build_controller(self) -> PathMpcController:
        return PathMpcController(self.ocp_spec(), self.mode, solver_options=self.solver_options)

    def start_state(self) -> np.ndarray:
        if self.initial_state is not None:
            return self.initial_state.copy()
        return self.path.lift(0.0)[0].copy()

    def target_state(self) -> np.ndarray:
        return self.path.lift(1.0)[0].copy()

    def validate(self) -> ClearanceReport:
        """Path clearance / steady-lift check against the inflated obstacles."""
        return check_path_clearance(
            self.path,
            self.inflated_obstacles(),
            model=self.build_model(),
            input_bounds=self.input_bounds,
            delta_sep=self.delta_sep,
        )


def heading_error(theta, theta_ref) -> float:
    """Wrapped angular difference in (-pi, pi]."""
    return float(math.remainder(float(theta) - float(theta_ref), 2.0 * math.pi))


def at_target(x, x_target, termination: Termination) -> bool:
    x = np.asarray(x, dtype=float)
    x_target = np.asarray(x_target, dtype=float)
    return bool(
        np.linalg.norm(x[:2] - x_target[:2]) <= termination.position_tolerance
        and abs(heading_error(x[2], x_target[2])) <= termination.heading_tolerance
    )


def _min_margin(obstacles, position) -> float:
    if not obstacles:
        return float("inf")
    return min(float(o.max_margin(np.asarray(position)[None, :2])[0]) for o in obstacles)


@dataclass
class ClosedLoopLog:
    """Per-step rows plus the visited state sequence and outcome.

    `steps[k]` holds the controller diagnostics of the k-th applied input
    (including the full plan, so the value function is replayable);
    `states` has one more row than `steps`.  Summary metrics are
    recomputable from the rows; wall time lives only here.
    """

    scenario_name: str
    mode: str
    steps: list
    states: np.ndarray
    margins: np.ndarray
    target: np.ndarray
    status: str
    reason: str = ""

    @property
    def steps_to_target(self):
        return len(self.steps) if self.status == SUCCESS else None

    @property
    def path_length(self) -> float:
        if len(self.states) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.states[:, :2], axis=0), axis=1).sum())

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else float("inf")

    @property
    def final_distance(self) -> float:
        return float(np.linalg.norm(self.states[-1, :2] - self.target[:2]))

    @property
    def final_heading_error(self) -> float:
        return abs(heading_error(self.states[-1, 2], self.target[2]))

    @property
    def total_wall_time(self) -> float:
        return float(sum(d.wall_time for d in self.steps))

    def closed_loop_cost(self, weights: StageWeights = None) -> float:
        """Accumulated stage cost of the realized motion about the target."""
        w = weights if weights is not None else StageWeights()
        u_rest = np.zeros(2)
        return float(
            sum(stage_cost(d.x, d.u, self.target, u_rest, w) for d in self.steps)
        )

    def summary_lines(self):
        lines = [
            f"status = {self.status}",
            f"steps = {len(self.steps)}",
            f"final_distance = {self.final_distance!r}",
            f"final_heading_error = {self.final_heading_error!r}",
            f"path_length = {self.path_length!r}",
            f"min_margin = {self.min_margin!r}",
            f"total_wall_time = {self.total_wall_time:.3f}",
        ]
        if self.reason:
            lines.insert(1, f"reason = {self.reason}")
        return lines


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_log_csv(log: ClosedLoopLog, fileobj):
    """Write the per-step rows in the documented column order."""
    fileobj.write(",".join(CSV_COLUMNS) + "\n")
    for d, margin in zip(log.steps, log.margins[: len(log.steps)]):
        v = d.verdict
        row = (
            d.k,
            float(d.x[0]),
            float(d.x[1]),
            float(d.x[2]),
            float(d.u[0]),
            float(d.u[1]),
            float(d.v_n),
            None if d.s_star is None else float(d.s_star),
            float(margin),
            d.solver_status,
            bool(d.fallback),
            d.outer_iterations,
            d.inner_iterations,
            v.lyapunov_ok,
            v.lyapunov_slack,
            v.shift_feasible_ok,
            v.shift_violation,
            v.gap_decrease_ok,
            float(d.tracking_gap),
        )
        fileobj.write(",".join(_cell(c) for c in row) + "\n")


def run_closed_loop(scenario: Scenario) -> ClosedLoopLog:
    """Simulate the scenario until at-target, step budget, or fault.

    The at-target test runs before each solve, so a start on the target
    succeeds in zero steps; reaching it exactly on the last allowed step
    still counts.  Faults are caught and returned as a partial log with
    status "fault".
    """
    report = scenario.validate()
    if not report.ok:
        raise ScenarioError(
            "path clearance check failed:\n" + "\n".join(report.summary_lines())
        )
    controller = scenario.build_controller()
    model = controller.spec.model
    obstacles = scenario.inflated_obstacles()
    term = scenario.termination
    x = scenario.start_state()
    x_target = scenario.target_state()

    steps = []
    states = [x.copy()]
    margins = [_min_margin(obstacles, x)]
    status = TIMEOUT
    reason = f"step budget {term.max_steps} exhausted"
    for k in range(term.max_steps + 1):
        if at_target(x, x_target, term):
            status = SUCCESS
            reason = ""
            break
        if k == term.max_steps:
            break
        try:
            u, diag = controller.step(x)
        except ControllerFault as fault:
            status = FAULT
            reason = str(fault)
            break
        steps.append(diag)
        x = model.step(x, u)
        states.append(x.copy())
        margins.append(_min_margin(obstacles, x))
    return ClosedLoopLog(
        scenario_name=scenario.name,
        mode=scenario.mode,
        steps=steps,
        states=np.asarray(states),
        margins=np.asarray(margins),
        target=x_target,
        status=status,
        reason=reason,
    )


def replay_value_function(log: ClosedLoopLog, scenario: Scenario) -> float:
    """Worst |V_N(recomputed from the stored plan) - logged V_N|."""
    tr = OcpTranscription(scenario.ocp_spec(), mode=scenario.mode)
    worst = 0.0
    for d in log.steps:
        worst = max(worst, abs(tr.total_cost(d.plan) - d.v_n))
    return worst


@dataclass(frozen=True)
class SweepRow:
    horizon: int
    step: float
    status: str
    steps: int
    path_length: float
    closed_loop_cost: float
    reason: str = ""


@dataclass
class SweepResult:
    rows: list

    def table_lines(self):
        lines = ["N,h,status,steps,path_length,closed_loop_cost"]
        for r in self.rows:
            lines.append(
                f"{r.horizon},{r.step!r},{r.status},{r.steps},"
                f"{r.path_length!r},{r.closed_loop_cost!r}"
            )
        return lines


def horizon_sweep(scenario: Scenario, horizons, keep_logs: bool = False):
    """Run the scenario once per (N, h) configuration.

    Faulted configurations are recorded and the sweep continues.  Rows
    keep the input order.  With `keep_logs` the full logs are returned
    alongside the table.
    """
    horizons = list(horizons)
    if not horizons:
        raise ScenarioError("horizon list is empty")
    rows = []
    logs = []
    for N, h in horizons:
        cfg = replace(scenario, horizon=int(N), step=float(h))
        try:
            log = run_closed_loop(cfg)
            rows.append(
                SweepRow(
                    horizon=int(N),
                    step=float(h),
                    status=log.status,
                    steps=len(log.steps),
                    path_length=log.path_length,
                    closed_loop_cost=log.closed_loop_cost(cfg.weights),
                    reason=log.reason,
                )
            )
            logs.append(log)
        except (ScenarioError, ControllerFault) as err:
            rows.append(
                SweepRow(
                    horizon=int(N),
                    step=float(h),
                    status=FAULT,
                    steps=0,
                    path_length=float("nan"),
                    closed_loop_cost=float("nan"),
                    reason=str(err),
                )
            )
            logs.append(None)
    result = SweepResult(rows=rows)
    return (result, logs) if keep_logs else result


LIE_BRACKET_DIRECTIONS = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])


def lie_bracket_maneuver(model, eps: float, weights: StageWeights = None):
    """Run the 4-step lateral-displacement sequence at magnitude sqrt(eps).

    Inputs rotate through (0,1),(1,0),(0,-1),(-1,0) scaled by sqrt(eps);
    the accumulated quartic stage cost is measured about the final state
    as the artificial steady pose.  Returns (cost, states, inputs).
    """
    if eps < 0.0:
        raise ValueError("eps must be non-negative")
    w = weights if weights is not None else StageWeights()
    U = math.sqrt(eps) * LIE_BRACKET_DIRECTIONS
    x = np.zeros(3)
    X = [x]
    for u in U:
        x = model.step(x, u)
        X.append(x)
    X = np.asarray(X)
    xs = X[-1]
    us = np.zeros(2)
    cost = float(sum(stage_cost(X[l], U[l], xs, us, w) for l in range(4)))
    return cost, X, U


@dataclass
class ExponentReport:
    """Log-log fit of maneuver cost against displacement scale."""

    exponent: float
    epsilons: tuple
    costs: tuple
    excluded: tuple
    expected_range: tuple = (1.7, 2.3)

    @property
    def ok(self) -> bool:
        lo, hi = self.expected_range
        return bool(lo <= self.exponent <= hi)

    def summary_lines(self):
        lines = [f"fitted exponent = {self.exponent:.4f} (expected {self.expected_range})"]
        for eps, cost in zip(self.epsilons, self.costs):
            lines.append(f"  eps={eps:g}: cost={cost:.6e}")
        for eps in self.excluded:
            lines.append(f"  eps={eps:g}: excluded (input bound clipped)")
        return lines


def verify_controllability_exponent(
    model,
    bounds: InputBounds,
    epsilons=(0.1, 0.05, 0.02, 0.01),
    weights: StageWeights = None,
) -> ExponentReport:
    """Fit log(maneuver cost) against log(eps); the quartic cost gives 2.

    Epsilons whose sqrt-scaled inputs leave the bounds are excluded from
    the fit (scaling them down would change the measured slope).
    """
    used = []
    costs = []
    excluded = []
    for eps in epsilons:
        U = math.sqrt(eps) * LIE_BRACKET_DIRECTIONS
        if not all(bounds.contains(u) for u in U):
            excluded.append(float(eps))
            continue
        cost, _, _ = lie_bracket_maneuver(model, float(eps), weights)
        used.append(float(eps))
        costs.append(cost)
    if len(used) < 2:
        raise ValueError("need at least two unclipped eps values to fit a slope")
    slope = float(np.polyfit(np.log(used), np.log(costs), 1)[0])
    return ExponentReport(
        exponent=slope, epsilons=tuple(used), costs=tuple(costs), excluded=tuple(excluded)
    )


@dataclass
class VerificationReport:
    """Assumption checks the CLI `verify` subcommand reports on."""

    clearance: ClearanceReport
    lipschitz_gp: float
    exponent: ExponentReport

    @property
    def ok(self) -> bool:
        return self.clearance.ok and self.exponent.ok

    def summary_lines(self):
        lines = ["[path clearance]"]
        lines += ["  " + line for line in self.clearance.summary_lines()]
        lines.append("[steady-lift Lipschitz]")
        lines.append(f"  L_gp estimate = {self.lipschitz_gp:.6f}")
        lines.append("[controllability exponent]")
        lines += ["  " + line for line in self.exponent.summary_lines()]
        lines.append(f"verdict = {'pass' if self.ok else 'fail'}")
        return lines


def verify_scenario(scenario: Scenario) -> VerificationReport:
    """Run the clearance, Lipschitz, and controllability checks."""
    return VerificationReport(
        clearance=scenario.validate(),
        lipschitz_gp=estimate_lipschitz_gp(scenario.path),
        exponent=verify_controllability_exponent(
            scenario.build_model(), scenario.input_bounds, weights=scenario.weights
        ),
    )
