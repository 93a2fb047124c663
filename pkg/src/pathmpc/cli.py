"""Command-line interface: scenario files, subcommands, artifact output.

Scenario files are YAML mappings with the following tables (all scalar
values optional unless noted; defaults in parentheses):

    name:          string (file stem)
    mode:          proposed | baseline (proposed)
    seed:          integer (0)
    horizon:       integer N (10)
    model:         step (0.2), substeps (4)
    input_bounds:  lower [v, omega], upper [v, omega] (+-(0.31, 1.9))
    path:          type: sinusoid (length, amplitude)
                   | polyline (waypoints, corner_radius)
                   | constant (configuration)            -- required table
    obstacles:     list of {type: box, rect: [xmin, ymin, xmax, ymax]}
                   or {type: polytope, A: [[..]], b: [..]}
    robot_radius:  inflation radius (0.0)
    separation:    certified margin delta_sep (0.001)
    cost:          w_pos, w_theta, w_v, w_omega, offset_weight
    termination:   max_steps, position_tolerance, heading_tolerance
    solver:        any solver option (tolerances, iteration caps,
                   penalty schedule); see nlp.SolverOptions
    initial_state: [x, y, theta] (path start)
    sweep:         horizons: [[N, h], ...] (sweep subcommand)
    planner:       bounds [xmin, ymin, xmax, ymax] (required for plan),
                   start, goal, max_iterations, steer_step, goal_bias,
                   rewire_radius, min_clearance, seed

Overrides `--set dotted.key=value` are applied to the mapping before
validation and echoed in the `# config` header of summary files.

Subcommands and exit codes:

    simulate  log.csv, summary.txt, trajectory.svg; 0 success,
              2 timeout, 3 fault
    sweep     sweep.csv, summary.txt, sweep.svg; 0 when no run faulted,
              3 otherwise
    plan      waypoints.csv, polyline.yaml, plan.svg; 0 path found,
              2 no path
    verify    assumption report to stdout; 0 pass, 2 violation
    gradcheck derivative check report to stdout; 0 pass, 2 failure

Scenario parse or schema errors exit 1 with a line/column diagnostic
where available.  All artifacts are deterministic for a fixed scenario
and seed; wall times never enter the CSV.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import yaml

from . import nlp
from .dynamics import InputBounds
from .geometry import ConvexPolytope
from .mpc import cold_start
from .ocp import OcpTranscription, StageWeights, check_gradients
from .paths import ConstantPath, PolylinePath, SinusoidPath
from .planner import PlannerConfig, path_length, rrt_star
from .sim import (
    FAULT,
    SUCCESS,
    Scenario,
    Termination,
    horizon_sweep,
    run_closed_loop,
    verify_scenario,
    write_log_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_LIMIT = 2
EXIT_FAULT = 3

_BUNDLED_DIR = Path(__file__).parent / "scenarios"


class CliError(Exception):
    """Invalid invocation or scenario content; message goes to stderr."""


# ---------------------------------------------------------------------------
# scenario mapping -> Scenario


def _as_table(value, context):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise CliError(f"{context} must be a mapping")
    return value


def _check_keys(table, allowed, context):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise CliError(f"unknown key(s) in {context}: {', '.join(unknown)}")


def _build_path(table):
    table = _as_table(table, "path")
    if "type" not in table:
        raise CliError("path table requires a type")
    kind = table["type"]
    if kind == "sinusoid":
        _check_keys(table, ("type", "length", "amplitude"), "path")
        return SinusoidPath(
            length=float(table.get("length", 2.5)),
            amplitude=float(table.get("amplitude", 1.1)),
        )
    if kind == "polyline":
        _check_keys(table, ("type", "waypoints", "corner_radius"), "path")
        if "waypoints" not in table:
            raise CliError("polyline path requires waypoints")
        return PolylinePath(
            np.asarray(table["waypoints"], dtype=float),
            corner_radius=float(table.get("corner_radius", 0.1)),
        )
    if kind == "constant":
        _check_keys(table, ("type", "configuration"), "path")
        if "configuration" not in table:
            raise CliError("constant path requires a configuration")
        return ConstantPath(np.asarray(table["configuration"], dtype=float))
    raise CliError(f"unknown path type {kind!r}")


def _build_obstacle(table, index):
    table = _as_table(table, f"obstacles[{index}]")
    kind = table.get("type", "box")
    if kind == "box":
        _check_keys(table, ("type", "rect"), f"obstacles[{index}]")
        rect = table.get("rect")
        if rect is None or len(rect) != 4:
            raise CliError(f"obstacles[{index}] box requires rect [xmin, ymin, xmax, ymax]")
        return ConvexPolytope.from_box(*[float(v) for v in rect])
    if kind == "polytope":
        _check_keys(table, ("type", "A", "b"), f"obstacles[{index}]")
        if "A" not in table or "b" not in table:
            raise CliError(f"obstacles[{index}] polytope requires A and b")
        return ConvexPolytope(np.asarray(table["A"], float), np.asarray(table["b"], float))
    raise CliError(f"unknown obstacle type {kind!r}")


def _build_options(table, cls, context):
    """Construct a dataclass from a table, validating keys and coercing types."""
    table = _as_table(table, context)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(table, fields, context)
    kwargs = {}
    for key, value in table.items():
        target = fields[key].type
        name = target if isinstance(target, str) else target.__name__
        kwargs[key] = int(value) if name == "int" else (
            bool(value) if name == "bool" else float(value)
        )
    return cls(**kwargs)


_TOP_KEYS = (
    "name",
    "mode",
    "seed",
    "horizon",
    "model",
    "input_bounds",
    "path",
    "obstacles",
    "robot_radius",
    "separation",
    "cost",
    "termination",
    "solver",
    "initial_state",
    "sweep",
    "planner",
)


def scenario_from_mapping(data, default_name: str = "scenario") -> Scenario:
    """Validate a parsed scenario mapping and construct the Scenario."""
    data = _as_table(data, "scenario")
    _check_keys(data, _TOP_KEYS, "scenario")
    if "path" not in data:
        raise CliError("scenario requires a path table")

    model = _as_table(data.get("model"), "model")
    _check_keys(model, ("step", "substeps"), "model")

    bounds_table = _as_table(data.get("input_bounds"), "input_bounds")
    _check_keys(bounds_table, ("lower", "upper"), "input_bounds")
    if bounds_table:
        if "lower" not in bounds_table or "upper" not in bounds_table:
            raise CliError("input_bounds requires both lower and upper")
        input_bounds = InputBounds(
            tuple(float(v) for v in bounds_table["lower"]),
            tuple(float(v) for v in bounds_table["upper"]),
        )
    else:
        input_bounds = InputBounds((-0.31, -1.9), (0.31, 1.9))

    cost = _as_table(data.get("cost"), "cost")
    _check_keys(cost, ("w_pos", "w_theta", "w_v", "w_omega", "offset_weight"), "cost")
    weights = StageWeights(
        w_pos=float(cost.get("w_pos", 1.0)),
        w_theta=float(cost.get("w_theta", 0.1)),
        w_v=float(cost.get("w_v", 1.0)),
        w_omega=float(cost.get("w_omega", 1.0)),
    )

    obstacles = data.get("obstacles") or ()
    if not isinstance(obstacles, (list, tuple)):
        raise CliError("obstacles must be a list")

    sweep = _as_table(data.get("sweep"), "sweep")
    _check_keys(sweep, ("horizons",), "sweep")
    horizons = tuple(
        (int(n), float(h)) for n, h in (sweep.get("horizons") or ())
    )

    planner = data.get("planner")
    if planner is not None:
        planner = _as_table(planner, "planner")
        _check_keys(
            planner,
            ("bounds", "start", "goal", "max_iterations", "steer_step",
             "goal_bias", "rewire_radius", "min_clearance", "seed"),
            "planner",
        )

    try:
        return Scenario(
            name=str(data.get("name", default_name)),
            mode=str(data.get("mode", "proposed")),
            horizon=int(data.get("horizon", 10)),
            step=float(model.get("step", 0.2)),
            substeps=int(model.get("substeps", 4)),
            path=_build_path(data["path"]),
            obstacles=tuple(_build_obstacle(o, i) for i, o in enumerate(obstacles)),
            robot_radius=float(data.get("robot_radius", 0.0)),
            delta_sep=float(data.get("separation", 1e-3)),
            input_bounds=input_bounds,
            weights=weights,
            offset_weight=float(cost.get("offset_weight", 1000.0)),
            termination=_build_options(data.get("termination"), Termination, "termination"),
            solver_options=_build_options(data.get("solver"), nlp.SolverOptions, "solver"),
            rng_seed=int(data.get("seed", 0)),
            initial_state=data.get("initial_state"),
            planner=planner,
            sweep_horizons=horizons,
        )
    except ValueError as err:
        raise CliError(str(err)) from err


def apply_overrides(data, overrides):
    """Apply `dotted.key=value` assignments to the raw mapping in place."""
    for item in overrides:
        if "=" not in item:
            raise CliError(f"override {item!r} is not of the form key=value")
        dotted, _, text = item.partition("=")
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise CliError(f"override {item!r} has an empty key")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as err:
            raise CliError(f"override {item!r}: unparseable value ({err})") from err
        node = data
        for key in keys[:-1]:
            nxt = node.get(key)
            if nxt is None:
                nxt = node[key] = {}
            if not isinstance(nxt, dict):
                raise CliError(f"override {item!r} descends into a non-table key {key!r}")
            node = nxt
        node[keys[-1]] = value
    return data


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt_value(v) for v in value) + "]"
    return str(value)


def flatten_config(data, prefix: str = ""):
    """Dotted (key, rendered value) pairs of the effective scenario mapping."""
    pairs = []
    for key in sorted(data):
        value = data[key]
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            pairs.extend(flatten_config(value, dotted + "."))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for i, item in enumerate(value):
                pairs.extend(flatten_config(item, f"{dotted}[{i}]."))
        else:
            pairs.append((dotted, _fmt_value(value)))
    return pairs


def bundled_scenario_names():
    return sorted(p.stem for p in _BUNDLED_DIR.glob("*.yaml"))


def resolve_scenario_path(argument: str) -> Path:
    """A real file path wins; otherwise the argument names a bundled file."""
    p = Path(argument)
    if p.is_file():
        return p
    bundled = _BUNDLED_DIR / (argument + ".yaml")
    if bundled.is_file():
        return bundled
    raise CliError(
        f"scenario {argument!r} is neither a file nor a bundled name "
        f"(bundled: {', '.join(bundled_scenario_names())})"
    )


def load_scenario(argument: str, overrides=()):
    """Resolve, parse, override, and validate; returns (Scenario, mapping)."""
    path = resolve_scenario_path(argument)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise CliError(f"{path}: parse error{where}: {err}") from err
    data = _as_table(data, "scenario")
    apply_overrides(data, overrides)
    return scenario_from_mapping(data, default_name=path.stem), data


# ---------------------------------------------------------------------------
# SVG rendering (presentation only; nothing downstream parses these)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


class _Canvas:
    """Fixed-width planar canvas mapping world (x, y) to SVG (y down)."""

    def __init__(self, xmin, ymin, xmax, ymax, width=640.0, pad=0.25):
        self.xmin, self.ymax = xmin - pad, ymax + pad
        span_x = (xmax - xmin) + 2 * pad
        span_y = (ymax - ymin) + 2 * pad
        self.scale = width / span_x
        self.width = width
        self.height = span_y * self.scale
        self.parts = []

    def pt(self, p):
        return (
            (float(p[0]) - self.xmin) * self.scale,
            (self.ymax - float(p[1])) * self.scale,
        )

    def _pts(self, points):
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in map(self.pt, points))

    def polygon(self, points, fill, stroke="none"):
        self.parts.append(
            f'<polygon points="{self._pts(points)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def polyline(self, points, stroke, width=1.5, dash=None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{self._pts(points)}" fill="none" '
            f'stroke="{stroke}" stroke-width="{width}"{dash_attr}/>'
        )

    def circle(self, p, radius, fill):
        x, y = self.pt(p)
        self.parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{fill}"/>')

    def text(self, p, content, color="#000000"):
        x, y = self.pt(p)
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="12" fill="{color}">{content}</text>'
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.0f}" '
            f'height="{self.height:.0f}" viewBox="0 0 {self.width:.2f} {self.height:.2f}">'
        )
        bg = f'<rect width="{self.width:.2f}" height="{self.height:.2f}" fill="#ffffff"/>'
        return "\n".join([head, bg, *self.parts, "</svg>"]) + "\n"


def _ordered_vertices(poly: ConvexPolytope) -> np.ndarray:
    v = poly.vertices
    c = v.mean(axis=0)
    return v[np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))]


def render_scene_svg(scenario: Scenario, trajectories=(), labels=(), waypoints=None) -> str:
    """Reference path, obstacles, and any number of labeled trajectories."""
    samples = scenario.path.eval(np.linspace(0.0, 1.0, 257))[:, :2]
    stack = [samples]
    for obs in scenario.inflated_obstacles():
        stack.append(_ordered_vertices(obs))
    for t in trajectories:
        stack.append(np.asarray(t)[:, :2])
    if waypoints is not None:
        stack.append(np.asarray(waypoints, dtype=float))
    pts = np.vstack(stack)
    canvas = _Canvas(pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())
    for obs in scenario.inflated_obstacles():
        canvas.polygon(_ordered_vertices(obs), fill="#c8c8c8", stroke="#555555")
    canvas.polyline(samples, stroke="#888888", width=1.0, dash="6 4")
    if waypoints is not None:
        canvas.polyline(waypoints, stroke="#444444", width=1.0, dash="2 3")
        for p in np.asarray(waypoints, dtype=float):
            canvas.circle(p, 2.0, "#444444")
    for i, t in enumerate(trajectories):
        t = np.asarray(t)
        color = _PALETTE[i % len(_PALETTE)]
        canvas.polyline(t[:, :2], stroke=color, width=1.8)
        canvas.circle(t[0, :2], 4.0, color)
        if i < len(labels):
            canvas.text(t[-1, :2], labels[i], color)
    target = scenario.target_state()
    canvas.circle(target[:2], 4.0, "#000000")
    return canvas.render()


# ---------------------------------------------------------------------------
# subcommands


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_summary(path: Path, data, lines):
    header = [f"# config {key} = {value}" for key, value in flatten_config(data)]
    path.write_text("\n".join([*header, *lines]) + "\n")


def _cmd_simulate(args) -> int:
    scenario, data = load_scenario(args.scenario, args.set)
    log = run_closed_loop(scenario)
    out = _prepare_out(args)
    with open(out / "log.csv", "w") as fh:
        write_log_csv(log, fh)
    _write_summary(out / "summary.txt", data, log.summary_lines())
    (out / "trajectory.svg").write_text(
        render_scene_svg(scenario, trajectories=[log.states], labels=[scenario.mode])
    )
    print("\n".join(log.summary_lines()))
    print(f"artifacts in {out}")
    if log.status == SUCCESS:
        return EXIT_OK
    return EXIT_FAULT if log.status == FAULT else EXIT_LIMIT


def _cmd_sweep(args) -> int:
    scenario, data = load_scenario(args.scenario, args.set)
    horizons = scenario.sweep_horizons
    if not horizons:
        raise CliError("scenario has no sweep.horizons table")
    result, logs = horizon_sweep(scenario, horizons, keep_logs=True)
    out = _prepare_out(args)
    (out / "sweep.csv").write_text("\n".join(result.table_lines()) + "\n")
    trajectories = [log.states for log in logs if log is not None]
    labels = [f"N={r.horizon}, h={r.step:g}" for r, log in zip(result.rows, logs) if log is not None]
    (out / "sweep.svg").write_text(
        render_scene_svg(scenario, trajectories=trajectories, labels=labels)
    )
    _write_summary(out / "summary.txt", data, result.table_lines())
    print("\n".join(result.table_lines()))
    print(f"artifacts in {out}")
    return EXIT_FAULT if any(r.status == FAULT for r in result.rows) else EXIT_OK


def _cmd_plan(args) -> int:
    scenario, data = load_scenario(args.scenario, args.set)
    table = scenario.planner
    if not table or "bounds" not in table:
        raise CliError("scenario has no planner table with bounds")
    config = PlannerConfig(
        bounds=tuple(float(v) for v in table["bounds"]),
        max_iterations=int(table.get("max_iterations", 1000)),
        steer_step=float(table.get("steer_step", 0.3)),
        goal_bias=float(table.get("goal_bias", 0.1)),
        rewire_radius=float(table.get("rewire_radius", 0.6)),
        rng_seed=int(table.get("seed", scenario.rng_seed)),
        min_clearance=float(table.get("min_clearance", scenario.delta_sep)),
        collision_resolution=float(scenario.delta_sep) / 2.0,
    )
    start = np.asarray(table.get("start", scenario.start_state()[:2]), dtype=float)
    goal = np.asarray(table.get("goal", scenario.target_state()[:2]), dtype=float)
    waypoints = rrt_star(start, goal, scenario.inflated_obstacles(), config)
    out = _prepare_out(args)
    if waypoints is None:
        _write_summary(out / "summary.txt", data, ["status = no-path"])
        print("no path found")
        return EXIT_LIMIT
    rows = ["x,y"] + [f"{repr(float(x))},{repr(float(y))}" for x, y in waypoints]
    (out / "waypoints.csv").write_text("\n".join(rows) + "\n")
    snippet = {
        "path": {
            "type": "polyline",
            "waypoints": [[float(x), float(y)] for x, y in waypoints],
            "corner_radius": 0.1,
        }
    }
    (out / "polyline.yaml").write_text(yaml.safe_dump(snippet, sort_keys=False))
    (out / "plan.svg").write_text(render_scene_svg(scenario, waypoints=waypoints))
    lines = [
        "status = path-found",
        f"waypoints = {len(waypoints)}",
        f"length = {path_length(waypoints)!r}",
    ]
    _write_summary(out / "summary.txt", data, lines)
    print("\n".join(lines))
    print(f"artifacts in {out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    scenario, _ = load_scenario(args.scenario, args.set)
    report = verify_scenario(scenario)
    print("\n".join(report.summary_lines()))
    return EXIT_OK if report.ok else EXIT_LIMIT


def _cmd_gradcheck(args) -> int:
    scenario, _ = load_scenario(args.scenario, args.set)
    tr = OcpTranscription(scenario.ocp_spec(), mode=scenario.mode)
    problem = tr.problem(scenario.start_state())
    rng = np.random.default_rng(scenario.rng_seed)
    z0 = cold_start(tr, scenario.start_state())
    lo = np.where(np.isfinite(problem.lower), problem.lower + 1e-3, -np.inf)
    hi = np.where(np.isfinite(problem.upper), problem.upper - 1e-3, np.inf)
    worst = 0.0
    for _ in range(args.vectors):
        z = np.clip(z0 + rng.normal(0.0, 0.3, problem.n), lo, hi)
        report = check_gradients(problem, z)
        worst = max(worst, report.max_error)
        print(
            f"objective {report.objective_error:.3e}  equalities {report.eq_error:.3e}  "
            f"inequalities {report.ineq_error:.3e}"
        )
    ok = worst <= args.tol
    print(f"worst error = {worst:.3e} ({'pass' if ok else 'fail'} at {args.tol:g})")
    return EXIT_OK if ok else EXIT_LIMIT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathmpc",
        description="Path-anchored tracking MPC toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, helptext, out_dir=True):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("scenario", help="scenario file path or bundled name")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a scenario entry (dotted keys)",
        )
        if out_dir:
            p.add_argument("--out", default="out", help="artifact directory")
        p.set_defaults(handler=handler)
        return p

    add("simulate", _cmd_simulate, "run one closed-loop scenario")
    add("sweep", _cmd_sweep, "run the scenario's horizon sweep")
    add("plan", _cmd_plan, "run the sampling-based planner")
    add("verify", _cmd_verify, "check scenario assumptions", out_dir=False)
    grad = add("gradcheck", _cmd_gradcheck, "finite-difference derivative check", out_dir=False)
    grad.add_argument("--vectors", type=int, default=20, help="random probe count")
    grad.add_argument("--tol", type=float, default=1e-5, help="pass threshold")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
