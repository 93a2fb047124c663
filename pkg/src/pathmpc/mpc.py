"""Receding-horizon controller around the transcribed tracking OCP.

Each step solves the OCP at the measured state, warm-started from the
previous solution shifted by one stage with the steady pair appended.
The applied plan is the better (by objective) of the solver's output,
when that point is feasible, and the feasible shifted candidate; this
keeps the optimal value non-increasing by at least the first stage cost
up to roundoff, which the runtime monitors then verify instead of
assume.  Solver non-convergence is tolerated as long as a feasible plan
exists; only infeasibility halts the controller.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import nlp
from .geometry import best_certificate
from .ocp import (
    BASELINE,
    PROPOSED,
    OcpSpec,
    OcpTranscription,
    offset_cost,
    stage_cost,
)


class ControllerFault(RuntimeError):
    """The controller cannot produce a certified input at this state."""


class InitialInfeasibilityFault(ControllerFault):
    """No feasible plan found at the first step (cold start failed)."""


@dataclass
class MonitorVerdict:
    """Per-step runtime check of the closed-loop guarantees.

    `lyapunov_ok` / `gap_decrease_ok` are None when not applicable (first
    step, or the conditional trend's premise does not hold).
    """

    lyapunov_ok: bool = None
    lyapunov_slack: float = None
    shift_feasible_ok: bool = None
    shift_violation: float = None
    gap_decrease_ok: bool = None
    s_delta: float = None
    s_trend: float = None
    tracking_gap: float = None

    def all_ok(self) -> bool:
        return all(v is not False for v in (self.lyapunov_ok, self.shift_feasible_ok, self.gap_decrease_ok))


@dataclass
class StepDiagnostics:
    k: int
    x: np.ndarray
    u: np.ndarray
    v_n: float
    s_star: float
    solver_status: str
    fallback: bool
    outer_iterations: int
    inner_iterations: int
    wall_time: float
    stage_cost_first: float
    tracking_gap: float
    gap: float
    shift_violation: float
    verdict: MonitorVerdict = None
    plan: np.ndarray = None


@dataclass
class MpcState:
    z: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    penalty: float
    v_n: float
    s_star: float
    k: int


def cold_start(transcription: OcpTranscription, x0) -> np.ndarray:
    """Initial decision vector for the first solve.

    Progress starts at the grid-nearest path sample, the trajectory holds
    x0, certificates come from face enumeration, and 20 bounded
    quasi-Newton iterations relax the held trajectory toward consistency
    with the initial-condition and dynamics rows.
    """
    lay = transcription.layout
    spec = transcription.spec
    x0 = np.asarray(x0, dtype=float)
    N = lay.horizon
    s0 = 0.0
    if lay.with_progress:
        grid = np.linspace(0.0, 1.0, 200)
        states, _ = spec.path.lift(grid)
        s0 = float(grid[np.argmin(np.linalg.norm(states - x0, axis=1))])
    X = np.tile(x0, (N + 1, 1))
    U = np.zeros((N + 1, lay.m))
    mu = np.zeros(N * lay.faces_total)
    if transcription.n_obstacles:
        for l in range(1, N + 1):
            for i, obs in enumerate(spec.obstacles):
                cert, _ = best_certificate(obs, X[l, :2])
                sl = lay.mu_slice(l, i)
                mu[sl.start - lay.mu_offset : sl.stop - lay.mu_offset] = cert
    z = lay.pack(U, X, s=s0, mu=mu)

    n_dyn = lay.n * (N + 1)  # initial-condition rows plus dynamics rows

    def residual(zz):
        return transcription.eq_residuals(zz, x0)[:n_dyn]

    def value(zz):
        r = residual(zz)
        return 0.5 * float(r @ r)

    def value_and_grad(zz):
        r = residual(zz)
        J = transcription.eq_jacobian(zz)[:n_dyn]
        return 0.5 * float(r @ r), J.T @ r

    result = nlp.minimize_box(
        value,
        value_and_grad,
        z,
        transcription.lower,
        transcription.upper,
        gtol=1e-12,
        max_iter=20,
    )
    return result.w


def restore_feasibility(
    transcription: OcpTranscription, z, x_current, max_iter: int = 30
) -> np.ndarray:
    """Pull a nearly feasible point onto the constraint manifold.

    Gauss-Newton least squares on the stacked residuals (equalities plus
    the violated part of the inequalities), used to polish budgeted solver
    output whose cost is good but whose violation is slightly above the
    acceptance threshold.  Moves are orthogonal to the constraint manifold
    to first order, so the objective barely changes.
    """
    tr = transcription
    x_current = np.asarray(x_current, dtype=float)

    def residual(zz):
        r = tr.eq_residuals(zz, x_current)
        if tr.n_ineq:
            r = np.concatenate([r, np.minimum(tr.ineq_residuals(zz), 0.0)])
        return r

    def jacobian(zz):
        J = tr.eq_jacobian(zz)
        if tr.n_ineq:
            Ji = tr.ineq_jacobian(zz)
            active = (tr.ineq_residuals(zz) < 0.0)[:, None]
            J = np.vstack([J, np.where(active, Ji, 0.0)])
        return J

    def value(zz):
        r = residual(zz)
        return 0.5 * float(r @ r)

    def value_and_grad(zz):
        r = residual(zz)
        return 0.5 * float(r @ r), jacobian(zz).T @ r

    def gauss_newton(zz):
        J = jacobian(zz)
        return J.T @ J

    result = nlp.minimize_box(
        value,
        value_and_grad,
        np.asarray(z, dtype=float),
        tr.lower,
        tr.upper,
        gtol=1e-14,
        max_iter=max_iter,
        hessian=gauss_newton,
    )
    return result.w


def shift_warm_start(prev_z, transcription: OcpTranscription) -> np.ndarray:
    """Shift a solution one stage forward, appending the steady pair.

    The certificate block for the new terminal stage is re-derived by
    face enumeration at the (unchanged) steady position; everything else
    moves by one slot.  For a solution whose tail is already steady this
    is a fixed point.
    """
    lay = transcription.layout
    prev_z = np.asarray(prev_z, dtype=float)
    N = lay.horizon
    X = lay.states(prev_z).copy()
    U = lay.inputs(prev_z).copy()
    X[:N] = X[1:]
    U[:N] = U[1:]
    # slot N keeps the steady pair (x_N, u_N) -- already in place after the move
    mu = prev_z[lay.mu_offset :].copy()
    if transcription.n_obstacles and N > 1:
        block = lay.faces_total
        mu[: (N - 1) * block] = mu[block:]
    if transcription.n_obstacles:
        for i, obs in enumerate(transcription.spec.obstacles):
            cert, _ = best_certificate(obs, X[N, :2])
            sl = lay.mu_slice(N, i)
            mu[sl.start - lay.mu_offset : sl.stop - lay.mu_offset] = cert
    s = lay.progress(prev_z) if lay.with_progress else None
    return lay.pack(U, X, s=s, mu=mu)


def evaluate_monitors(
    prev: StepDiagnostics, curr: StepDiagnostics, tol_coeff: float = 1e-4
) -> MonitorVerdict:
    """Check the decrease/feasibility/trend conditions between two steps.

    The Lyapunov slack is V_N(k) - V_N(k+1) - stage_cost of the plan
    applied at k; tolerance scales with 1 + V_N to absorb solver
    inexactness.  The gap trend is only judged when the tracking gap
    actually shrank.
    """
    verdict = MonitorVerdict(
        shift_feasible_ok=None if curr.shift_violation is None else bool(curr.shift_violation <= 1e-6),
        shift_violation=curr.shift_violation,
        tracking_gap=curr.tracking_gap,
    )
    if prev is None:
        return verdict
    tol = tol_coeff * (1.0 + prev.v_n)
    slack = prev.v_n - curr.v_n - prev.stage_cost_first
    verdict.lyapunov_slack = float(slack)
    verdict.lyapunov_ok = bool(slack >= -tol)
    if prev.s_star is not None and curr.s_star is not None:
        verdict.s_delta = float(curr.s_star - prev.s_star)
        if prev.gap is not None and curr.tracking_gap < prev.tracking_gap - 1e-12:
            verdict.gap_decrease_ok = bool(curr.gap <= prev.gap + tol)
    return verdict


class PathMpcController:
    """Stateful controller: call step(x_k) once per sampling instant.

    Attributes
    ----------
    spec : OcpSpec
    mode : str
        "proposed" (path-anchored) or "baseline" (terminal-pose penalty).
    state : MpcState or None
        Last applied plan and multipliers; None before the first step.
    """

    def __init__(
        self,
        spec: OcpSpec,
        mode: str = PROPOSED,
        solver_options: nlp.SolverOptions = None,
        cold_solver_options: nlp.SolverOptions = None,
        monitor_tol: float = 1e-4,
        fallback_tol: float = 1e-6,
    ):
        self.spec = spec
        self.mode = mode
        self.transcription = OcpTranscription(spec, mode=mode)
        self.options = solver_options if solver_options is not None else nlp.SolverOptions()
        # the first solve has no feasible candidate to fall back on, so it
        # gets a larger budget and full-quality inner iterations unless the
        # caller decides otherwise
        # the cold plan is dynamically feasible by construction, so a stiff
        # initial penalty keeps the first subproblems anchored to the
        # feasible manifold; a soft one lets the large initial cost buy
        # constraint violation and the iterates can then path-follow into
        # an infeasible stationary point no escalation recovers from
        self.cold_options = cold_solver_options if cold_solver_options is not None else replace(
            self.options,
            max_outer=max(self.options.max_outer, 30),
            max_inner=max(self.options.max_inner, 400),
            penalty_init=max(self.options.penalty_init, 1e5),
            # relative merit decreases below 1e-13 are machine-flat for
            # these cost magnitudes; letting such inners run on only
            # burns the budget that later outers need
            inner_ftol=1e-13,
        )
        self.monitor_tol = float(monitor_tol)
        self.fallback_tol = float(fallback_tol)
        # solver points are only adopted when distinctly inside the
        # fallback tolerance, so the shifted candidate of the next step
        # stays acceptable and the feasibility chain cannot erode
        self.accept_tol = 0.1 * self.fallback_tol
        self.state = None
        self.prev_diagnostics = None
        self._s_steps = 0
        self._s_nondecreasing = 0

    def reset(self):
        self.state = None
        self.prev_diagnostics = None
        self._s_steps = 0
        self._s_nondecreasing = 0

    def step(self, x_k):
        """Solve at x_k and return (applied input, diagnostics)."""
        t0 = time.perf_counter()
        tr = self.transcription
        lay = tr.layout
        x_k = np.asarray(x_k, dtype=float).reshape(lay.n)
        problem = tr.problem(x_k)

        if self.state is None:
            z0 = cold_start(tr, x_k)
            shift_violation = None
            candidate = None
            eq0 = None
            nu0 = None
            rho0 = None
            options = self.cold_options
        else:
            z0 = shift_warm_start(self.state.z, tr)
            shift_violation = tr.max_violation(z0, x_k)
            candidate = z0 if shift_violation <= self.fallback_tol else None
            eq0 = self.state.eq_multipliers
            nu0 = self.state.ineq_multipliers
            rho0 = self.state.penalty
            options = self.options

        solution = nlp.solve(
            problem,
            z0,
            options,
            eq_multipliers0=eq0,
            ineq_multipliers0=nu0,
            penalty0=rho0,
        )

        # acceptance is by feasibility, not by solver status: a max-iter
        # local solve whose point satisfies the constraints is a usable
        # plan, and the feasible shifted candidate is the fallback
        z_solution = solution.z
        solution_violation = tr.max_violation(z_solution, x_k)
        if self.accept_tol < solution_violation <= 1e-2:
            z_solution = restore_feasibility(tr, z_solution, x_k)
            solution_violation = tr.max_violation(z_solution, x_k)
        solution_usable = solution_violation <= self.accept_tol
        fallback = False
        if solution_usable and (
            candidate is None or tr.total_cost(z_solution) <= tr.total_cost(candidate)
        ):
            z_applied = z_solution
        elif candidate is not None:
            z_applied = candidate
            fallback = True
        elif self.state is None:
            raise InitialInfeasibilityFault(
                f"no feasible plan at the initial state: solver status "
                f"{solution.status!r}, max constraint violation {solution_violation:.3e}"
            )
        else:
            raise ControllerFault(
                f"solver status {solution.status!r} with max violation "
                f"{solution_violation:.3e} and infeasible warm start "
                f"(violation {shift_violation:.3e})"
            )

        X = lay.states(z_applied)
        U = lay.inputs(z_applied)
        u_applied = U[0].copy()
        x_steady = X[lay.horizon]
        u_steady = U[lay.horizon]
        v_n = tr.total_cost(z_applied)
        s_star = lay.progress(z_applied) if lay.with_progress else None
        gap = v_n - float(offset_cost(s_star, self.spec.offset_weight)) if s_star is not None else None

        diag = StepDiagnostics(
            k=0 if self.state is None else self.state.k + 1,
            x=x_k.copy(),
            u=u_applied,
            v_n=float(v_n),
            s_star=s_star,
            solver_status=solution.status,
            fallback=fallback,
            outer_iterations=solution.outer_iterations,
            inner_iterations=solution.inner_iterations,
            wall_time=time.perf_counter() - t0,
            stage_cost_first=float(stage_cost(X[0], U[0], x_steady, u_steady, self.spec.weights)),
            tracking_gap=float(np.linalg.norm(x_k - x_steady)),
            gap=gap,
            shift_violation=shift_violation,
            plan=z_applied.copy(),
        )
        verdict = evaluate_monitors(self.prev_diagnostics, diag, self.monitor_tol)
        if verdict.s_delta is not None:
            self._s_steps += 1
            if verdict.s_delta >= -1e-9:
                self._s_nondecreasing += 1
        verdict.s_trend = self._s_nondecreasing / self._s_steps if self._s_steps else None
        diag.verdict = verdict

        self.state = MpcState(
            z=z_applied.copy(),
            eq_multipliers=solution.eq_multipliers,
            ineq_multipliers=solution.ineq_multipliers,
            penalty=min(solution.penalty, 1e6),
            v_n=diag.v_n,
            s_star=s_star,
            k=diag.k,
        )
        self.prev_diagnostics = diag
        return u_applied, diag


def mpc_step(controller: PathMpcController, x_k):
    """Path-anchored step; the controller must be in proposed mode."""
    if controller.mode != PROPOSED:
        raise ValueError("controller is not in proposed mode")
    return controller.step(x_k)


def baseline_tracking_step(controller: PathMpcController, x_k):
    """Terminal-pose tracking step; the controller must be in baseline mode."""
    if controller.mode != BASELINE:
        raise ValueError("controller is not in baseline mode")
    return controller.step(x_k)
