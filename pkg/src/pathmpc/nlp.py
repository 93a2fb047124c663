"""Self-contained solver for smooth constrained programs.

    minimize f(z)  s.t.  c_eq(z) = 0,  c_ineq(z) >= 0,  lb <= z <= ub

The method is a bound-constrained augmented Lagrangian: inequalities are
converted to equalities with non-negative slacks, the resulting penalty
subproblems are solved by projected descent (reduced Newton on the free
variables when a curvature model is available, limited-memory
quasi-Newton otherwise), and first-order multiplier updates run in an
outer loop with penalty escalation when feasibility stalls.  No external
optimization dependencies.

Sign conventions: reported inequality multipliers `nu` are >= 0 and enter
stationarity as grad f + J_eq^T lam - J_ineq^T nu (up to active bounds,
measured through the projected gradient).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-detected"


class EvaluationError(RuntimeError):
    """A problem callback produced NaN at a point the solver committed to."""


@dataclass
class NlpProblem:
    """Callback bundle describing one constrained program.

    `objective`/`gradient` are mandatory; constraint callbacks may be None
    when the corresponding block is absent.  Jacobians are dense arrays,
    (n_eq, n) and (n_ineq, n).
    """

    n: int
    objective: callable
    gradient: callable
    eq_residuals: callable = None
    eq_jacobian: callable = None
    n_eq: int = 0
    ineq_residuals: callable = None
    ineq_jacobian: callable = None
    n_ineq: int = 0
    lower: np.ndarray = None
    upper: np.ndarray = None
    eq_sparsity: np.ndarray = None
    ineq_sparsity: np.ndarray = None
    # optional curvature model of the objective (a positive diagonal as a
    # 1-D array or a dense symmetric PSD matrix), used to precondition
    # the inner iteration; the solver works without it
    hessian_model: callable = None

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.lower is None:
            self.lower = np.full(self.n, -np.inf)
        if self.upper is None:
            self.upper = np.full(self.n, np.inf)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bound shapes must be (n,)")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if (self.n_eq > 0) != (self.eq_residuals is not None):
            raise ValueError("n_eq and eq_residuals must be set together")
        if (self.n_ineq > 0) != (self.ineq_residuals is not None):
            raise ValueError("n_ineq and ineq_residuals must be set together")

    def clip(self, z) -> np.ndarray:
        return np.clip(np.asarray(z, dtype=float), self.lower, self.upper)


@dataclass
class SolverOptions:
    tol_stat: float = 1e-6
    tol_feas: float = 1e-6
    tol_comp: float = 1e-6
    max_outer: int = 50
    max_inner: int = 500
    penalty_init: float = 10.0
    penalty_factor: float = 10.0
    penalty_max: float = 1e10
    memory: int = 10
    armijo_c: float = 1e-4
    max_line_search: int = 40
    inner_tol_init: float = 1e-3
    inner_tol_shrink: float = 0.1
    inner_tol_floor: float = 0.1  # relative to tol_stat
    # when positive, an inner solve also stops after five consecutive
    # steps whose relative merit decrease is below this; keeps warm solves
    # from burning their whole budget at a stationarity plateau
    inner_ftol: float = 0.0
    record_iterates: bool = False


@dataclass
class KktResiduals:
    stationarity: float
    eq_violation: float
    ineq_violation: float
    complementarity: float

    def within(self, options: SolverOptions) -> bool:
        return (
            self.stationarity <= options.tol_stat
            and self.eq_violation <= options.tol_feas
            and self.ineq_violation <= options.tol_feas
            and self.complementarity <= options.tol_comp
        )

    def as_dict(self):
        return {
            "stationarity": self.stationarity,
            "eq_violation": self.eq_violation,
            "ineq_violation": self.ineq_violation,
            "complementarity": self.complementarity,
        }


@dataclass
class NlpSolution:
    z: np.ndarray
    objective: float
    status: str
    kkt: KktResiduals
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    penalty: float
    outer_iterations: int
    inner_iterations: int
    merit_history: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def kkt_residuals(problem: NlpProblem, z, eq_mult=None, ineq_mult=None) -> KktResiduals:
    """First-order optimality residuals at (z, multipliers).

    Stationarity is measured as the infinity norm of the projected
    gradient step z - P(z - r), which accounts for active bounds without
    explicit bound multipliers.
    """
    z = np.asarray(z, dtype=float)
    r = np.asarray(problem.gradient(z), dtype=float).copy()
    eq_violation = 0.0
    ineq_violation = 0.0
    complementarity = 0.0
    if problem.n_eq:
        lam = np.zeros(problem.n_eq) if eq_mult is None else np.asarray(eq_mult, float)
        ceq = problem.eq_residuals(z)
        eq_violation = float(np.abs(ceq).max()) if ceq.size else 0.0
        r += problem.eq_jacobian(z).T @ lam
    if problem.n_ineq:
        nu = np.zeros(problem.n_ineq) if ineq_mult is None else np.asarray(ineq_mult, float)
        cin = problem.ineq_residuals(z)
        ineq_violation = float(max(0.0, -(cin.min()))) if cin.size else 0.0
        complementarity = float(np.abs(nu * cin).max()) if cin.size else 0.0
        r -= problem.ineq_jacobian(z).T @ nu
    stationarity = float(np.abs(z - np.clip(z - r, problem.lower, problem.upper)).max())
    return KktResiduals(stationarity, eq_violation, ineq_violation, complementarity)


@dataclass
class _InnerResult:
    w: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    projected_gradient: float
    stalled: bool


def _two_loop(g, mem):
    """L-BFGS two-loop recursion; returns an approximation of H^-1 g.

    The initial metric is the usual s^T y / y^T y scaling of the latest
    stored pair.
    """
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        q = q * ((s @ y) / (y @ y))
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return q


def _model_direction(model, g, free):
    """Descent direction from a curvature model, reduced to free variables.

    Components in `free` take the Newton step of the model restricted to
    that subspace; the remaining (bound-pinned) components take the plain
    negative gradient, which the projection then clips at the bound.
    Solving the model jointly over pinned and free variables would let the
    coupling place all predicted decrease in components the projection
    removes, leaving an ascent direction; the reduction avoids that.  The
    model spectrum is floored relative to its top so the inverse stays
    bounded on null directions of the model.
    """
    d = -g.copy()
    if model.ndim == 1:
        d[free] = -g[free] / np.maximum(model[free], 1e-8)
        return d
    sub = model[np.ix_(free, free)]
    if sub.size:
        evals, evecs = np.linalg.eigh(sub)
        # the floor must sit far below any real curvature (quartic terms
        # carry meaningful eigenvalues down to ~1e-6 near their minima,
        # and flooring those away stalls the iteration); amplified noise
        # in the truly flat directions is rejected by the line search
        floor = max(1e-10, 1e-12 * float(evals[-1]))
        d[free] = -(evecs @ ((evecs.T @ g[free]) / np.maximum(evals, floor)))
    return d


def minimize_box(
    value,
    value_and_grad,
    w0,
    lower,
    upper,
    *,
    gtol: float = 1e-8,
    max_iter: int = 500,
    memory: int = 10,
    armijo_c: float = 1e-4,
    max_line_search: int = 40,
    hessian=None,
    ftol: float = 0.0,
) -> _InnerResult:
    """Projected descent on a box with Armijo backtracking.

    Directions are searched along the projected path w -> P(w + alpha d);
    the slope test uses the projected step, so clipped components cannot
    fake decrease.  Without a curvature model the direction comes from
    the limited-memory quasi-Newton two-loop recursion (pairs stored only
    when s^T y is safely positive), with a memory-cleared retry and a
    negative-gradient fallback when a direction fails.  The merit value
    is non-increasing by construction.

    `hessian(w)`, when given, supplies a curvature model per iteration: a
    positive diagonal as a 1-D array, or a symmetric positive
    semidefinite matrix as a 2-D array.  The direction is then the
    model's Newton step reduced to the free variables (bound-pinned
    components with outward gradients are excluded and follow the plain
    gradient instead).  The matrix form is what keeps the iteration
    usable under large penalty weights, where almost all curvature lives
    in a known Gauss-Newton term.

    A positive `ftol` adds an early exit after five consecutive steps
    whose relative decrease stays below it.

    NaN from the callbacks at the start point or an accepted point raises
    EvaluationError; non-finite values at trial points just reject the
    trial.
    """
    w = np.clip(np.asarray(w0, dtype=float), lower, upper)
    f, g = value_and_grad(w)
    if np.isnan(f) or np.any(np.isnan(g)):
        raise EvaluationError("NaN objective/gradient at the start point")
    mem = []
    iterations = 0
    stalled = False
    flat_steps = 0

    def line_search(d):
        alpha = 1.0
        for _ in range(max_line_search):
            w_trial = np.clip(w + alpha * d, lower, upper)
            step = w_trial - w
            slope = g @ step
            if slope < 0.0:
                f_trial = value(w_trial)
                if np.isnan(f_trial):
                    f_trial = np.inf
                if np.isfinite(f_trial) and f_trial <= f + armijo_c * slope:
                    return w_trial, f_trial
            elif not np.any(step):
                return None
            alpha *= 0.5
        return None

    for _ in range(max_iter):
        pg = w - np.clip(w - g, lower, upper)
        pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
        if pg_norm <= gtol:
            break
        if hessian is not None:
            model = np.asarray(hessian(w), dtype=float)
            eps = 1e-10 * (1.0 + np.abs(w))
            pinned = (((w - lower) <= eps) & (g > 0.0)) | (((upper - w) <= eps) & (g < 0.0))
            hit = line_search(_model_direction(model, g, ~pinned))
        else:
            hit = line_search(-_two_loop(g, mem))
            if hit is None and mem:
                mem.clear()
                hit = line_search(-_two_loop(g, []))
        if hit is None:
            hit = line_search(-g)
        if hit is None:
            stalled = True
            break
        w_new, f_new = hit
        _, g_new = value_and_grad(w_new)
        if np.any(np.isnan(g_new)):
            raise EvaluationError("NaN gradient at an accepted point")
        if hessian is None:
            s = w_new - w
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
                mem.append((s, y, 1.0 / sy))
                if len(mem) > memory:
                    mem.pop(0)
        assert f_new <= f + 1e-12 * (1.0 + abs(f)), "merit increased"
        if ftol > 0.0:
            flat_steps = flat_steps + 1 if f - f_new <= ftol * (1.0 + abs(f_new)) else 0
        w, f, g = w_new, f_new, g_new
        iterations += 1
        if ftol > 0.0 and flat_steps >= 5:
            break
    pg = w - np.clip(w - g, lower, upper)
    pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
    return _InnerResult(w, f, g, iterations, pg_norm, stalled)


def solve(
    problem: NlpProblem,
    z0,
    options: SolverOptions = None,
    *,
    eq_multipliers0=None,
    ineq_multipliers0=None,
    penalty0: float = None,
) -> NlpSolution:
    """Augmented Lagrangian outer loop with warm-startable multipliers.

    Returns status "converged" when the KKT residuals meet the
    tolerances, "max-iter" when the outer budget runs out, and
    "infeasible-detected" when the penalty has been driven past
    `penalty_max` without feasibility progress.
    """
    t_start = time.perf_counter()
    o = options if options is not None else SolverOptions()
    nz = problem.n
    n_eq = problem.n_eq
    n_in = problem.n_ineq

    z = problem.clip(z0)
    lam = np.zeros(n_eq) if eq_multipliers0 is None else np.array(eq_multipliers0, float)
    if ineq_multipliers0 is None:
        nu_hat = np.zeros(n_in)
    else:
        # external convention: nu >= 0; internal slack-equality multiplier
        nu_hat = -np.array(ineq_multipliers0, dtype=float)
    if lam.shape != (n_eq,) or nu_hat.shape != (n_in,):
        raise ValueError("warm-start multiplier shapes do not match the problem")
    rho = float(penalty0) if penalty0 is not None else o.penalty_init
    rho = min(max(rho, o.penalty_init), o.penalty_max)

    def eq(zz):
        return problem.eq_residuals(zz) if n_eq else np.zeros(0)

    def eqJ(zz):
        return problem.eq_jacobian(zz) if n_eq else np.zeros((0, nz))

    def ineq(zz):
        return problem.ineq_residuals(zz) if n_in else np.zeros(0)

    def ineqJ(zz):
        return problem.ineq_jacobian(zz) if n_in else np.zeros((0, nz))

    cin = ineq(z)
    t = np.maximum(0.0, cin + (nu_hat / rho if n_in else 0.0)) if n_in else np.zeros(0)
    w = np.concatenate([z, t])
    w_lower = np.concatenate([problem.lower, np.zeros(n_in)])
    w_upper = np.concatenate([problem.upper, np.full(n_in, np.inf)])

    merit_history = []
    iterates = []
    total_inner = 0
    status = MAX_ITER
    prev_feas = np.inf
    prev_obj = np.inf
    best_stat = np.inf
    best_comp = np.inf
    flat_outers = 0
    tol_floor = o.inner_tol_floor * o.tol_stat
    inner_tol = max(o.inner_tol_init, tol_floor)
    if n_eq + n_in == 0:
        inner_tol = tol_floor
    nu = np.maximum(-nu_hat, 0.0)
    outer_done = 0

    for outer in range(1, o.max_outer + 1):
        lam_k = lam
        nu_hat_k = nu_hat
        rho_k = rho

        def al_value(ww):
            zz = ww[:nz]
            obj = problem.objective(zz)
            val = obj
            if n_eq:
                ce = eq(zz)
                val += lam_k @ ce + 0.5 * rho_k * (ce @ ce)
            if n_in:
                ci = ineq(zz) - ww[nz:]
                val += nu_hat_k @ ci + 0.5 * rho_k * (ci @ ci)
            return float(val)

        def al_value_and_grad(ww):
            zz = ww[:nz]
            obj = problem.objective(zz)
            gz = np.asarray(problem.gradient(zz), dtype=float).copy()
            val = obj
            gt = np.zeros(n_in)
            if n_eq:
                ce = eq(zz)
                val += lam_k @ ce + 0.5 * rho_k * (ce @ ce)
                gz += eqJ(zz).T @ (lam_k + rho_k * ce)
            if n_in:
                ci = ineq(zz) - ww[nz:]
                val += nu_hat_k @ ci + 0.5 * rho_k * (ci @ ci)
                mult = nu_hat_k + rho_k * ci
                gz += ineqJ(zz).T @ mult
                gt = -mult
            return float(val), np.concatenate([gz, gt])

        def al_hessian(ww):
            # Gauss-Newton model of the subproblem: exact curvature of the
            # penalty terms (built from constraint Jacobians only) plus the
            # objective curvature model supplied by the problem.
            zz = ww[:nz]
            model = np.asarray(problem.hessian_model(zz), dtype=float)
            if n_eq + n_in == 0:
                return model
            H = np.zeros((nz + n_in, nz + n_in))
            if model.ndim == 1:
                H[:nz, :nz] = np.diag(np.maximum(model, 0.0))
            else:
                H[:nz, :nz] = model
            if n_eq:
                Je = eqJ(zz)
                H[:nz, :nz] += rho_k * (Je.T @ Je)
            if n_in:
                Ji = ineqJ(zz)
                H[:nz, :nz] += rho_k * (Ji.T @ Ji)
                H[:nz, nz:] = -rho_k * Ji.T
                H[nz:, :nz] = -rho_k * Ji
                H[nz:, nz:] = rho_k * np.eye(n_in)
            return H

        # without a problem-supplied objective curvature model the
        # quasi-Newton inner learns the subproblem curvature online; a
        # made-up objective block would poison the Newton directions
        # along constraint-tangent directions instead
        use_model = problem.hessian_model is not None
        inner = minimize_box(
            al_value,
            al_value_and_grad,
            w,
            w_lower,
            w_upper,
            gtol=inner_tol,
            max_iter=o.max_inner,
            memory=o.memory,
            armijo_c=o.armijo_c,
            max_line_search=o.max_line_search,
            hessian=al_hessian if use_model else None,
            ftol=o.inner_ftol,
        )
        w = inner.w
        total_inner += inner.iterations
        merit_history.append(inner.value)
        z = w[:nz]
        t = w[nz:]
        outer_done = outer

        ce = eq(z)
        ci = ineq(z)
        feas_vec = np.concatenate([ce, ci - t])
        feas = float(np.abs(feas_vec).max()) if feas_vec.size else 0.0

        lam = lam + rho * ce
        nu_hat = nu_hat + rho * (ci - t)
        nu = np.maximum(-nu_hat, 0.0)
        if o.record_iterates:
            iterates.append(z.copy())

        kkt = kkt_residuals(problem, z, lam, nu)
        if kkt.within(o):
            status = CONVERGED
            break

        # once the iterate is feasible, further outers can only polish
        # stationarity and complementarity; when neither residual nor
        # the objective makes headway for several consecutive outers the
        # polish has hit the floor of what the curvature model supports
        # and more budget buys nothing
        obj_now = float(problem.objective(z))
        feasible_now = max(kkt.eq_violation, kkt.ineq_violation) <= o.tol_feas
        improved = (
            (best_stat > o.tol_stat and kkt.stationarity <= 0.5 * best_stat)
            or (best_comp > o.tol_comp and kkt.complementarity <= 0.5 * best_comp)
            or obj_now <= prev_obj - 1e-9 * (1.0 + abs(obj_now))
        )
        if feasible_now and not improved:
            flat_outers += 1
            if flat_outers >= 3:
                break
        else:
            flat_outers = 0
        best_stat = min(best_stat, kkt.stationarity)
        best_comp = min(best_comp, kkt.complementarity)
        prev_obj = obj_now

        if feas > 0.25 * prev_feas and feas > o.tol_feas:
            if rho >= o.penalty_max:
                # at the penalty cap, keep iterating while feasibility
                # still shrinks meaningfully; declare infeasibility only
                # once it has stalled there
                if feas > 0.9 * prev_feas:
                    status = INFEASIBLE
                    break
            else:
                rho = min(rho * o.penalty_factor, o.penalty_max)
        prev_feas = feas
        # solve subproblems only as precisely as current feasibility
        # warrants; over-solving at loose multipliers wastes iterations,
        # under-solving poisons the multiplier update
        inner_tol = min(max(tol_floor, o.inner_tol_shrink * feas), o.inner_tol_init)

        if n_in:
            t = np.maximum(0.0, ci + nu_hat / rho)
            w = np.concatenate([z, t])

    kkt = kkt_residuals(problem, z, lam, nu)
    if kkt.within(o):
        status = CONVERGED
    return NlpSolution(
        z=z,
        objective=float(problem.objective(z)),
        status=status,
        kkt=kkt,
        eq_multipliers=lam,
        ineq_multipliers=nu,
        penalty=rho,
        outer_iterations=outer_done,
        inner_iterations=total_inner,
        merit_history=merit_history,
        iterates=iterates,
        wall_time=time.perf_counter() - t_start,
    )
