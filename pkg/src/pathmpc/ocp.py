"""Transcription of the path-anchored tracking OCP into a flat NLP.

Decision vector layout (documented offsets, see DecisionLayout):

    [ u_0 .. u_N | x_0 .. x_N | s | mu_{1,1} .. mu_{1,No} .. mu_{N,No} ]

The artificial steady pair is identified with (x_N, u_N) through the
steady-state equality, so it is not stored separately.  Equality residual
ordering: initial condition (n rows), dynamics (N*n rows), steady state
(n rows), path anchoring (n_p rows), certificate normalizations (N*N_o
rows).  Inequality rows are the certified separation margins, one per
(stage, obstacle), counted l-major.  Input boxes, s in [0,1] and mu >= 0
are variable bounds, not residual rows.

The "baseline" mode removes s and the anchoring rows and instead
penalizes the squared distance of the terminal configuration to the
target configuration; everything else is identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynamicsModel, InputBounds
from .geometry import ConvexPolytope
from .nlp import NlpProblem
from .paths import IdentityConfiguration, ReferencePath

PROPOSED = "proposed"
BASELINE = "baseline"


@dataclass(frozen=True)
class StageWeights:
    """Weights of the quartic stage cost."""

    w_pos: float = 1.0
    w_theta: float = 0.1
    w_v: float = 1.0
    w_omega: float = 1.0

    def __post_init__(self):
        for name in ("w_pos", "w_theta", "w_v", "w_omega"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    def state_vector(self) -> np.ndarray:
        return np.array([self.w_pos, self.w_pos, self.w_theta])

    def input_vector(self) -> np.ndarray:
        return np.array([self.w_v, self.w_omega])


def stage_cost(x, u, xs, us, weights: StageWeights = StageWeights()):
    """Quartic tracking cost of one stage about the steady pair (xs, us)."""
    dx = np.asarray(x, dtype=float) - np.asarray(xs, dtype=float)
    du = np.asarray(u, dtype=float) - np.asarray(us, dtype=float)
    val = (weights.state_vector() * dx**4).sum(axis=-1)
    val = val + (weights.input_vector() * du**4).sum(axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def offset_cost(s, offset_weight: float = 1000.0):
    """Penalty on remaining path progress, vanishing at s = 1."""
    s = np.asarray(s, dtype=float)
    val = offset_weight * (1.0 - s) ** 2
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class OcpSpec:
    """Immutable description of one finite-horizon tracking problem."""

    horizon: int
    step: float
    model: DynamicsModel
    path: ReferencePath
    obstacles: tuple
    input_bounds: InputBounds
    weights: StageWeights = StageWeights()
    offset_weight: float = 1000.0
    delta_sep: float = 1e-3

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.offset_weight <= 0.0:
            raise ValueError("offset_weight must be positive")
        if self.delta_sep < 0.0:
            raise ValueError("delta_sep must be non-negative")
        model_h = getattr(self.model, "step_size", None)
        if model_h is not None and abs(model_h - self.step) > 1e-12:
            raise ValueError("spec step disagrees with the model step size")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if len(self.input_bounds.lower) != self.model.m:
            raise ValueError("input bound dimension disagrees with the model")


class DecisionLayout:
    """Offsets of the flat decision vector for one OcpSpec.

    Inputs first, then states, then (in proposed mode) the progress s,
    then the certificate block ordered stage-major.
    """

    def __init__(self, n: int, m: int, horizon: int, face_counts, with_progress: bool):
        self.n = int(n)
        self.m = int(m)
        self.horizon = int(horizon)
        self.face_counts = tuple(int(r) for r in face_counts)
        self.with_progress = bool(with_progress)
        N = self.horizon
        self.inputs_offset = 0
        self.states_offset = m * (N + 1)
        after_states = self.states_offset + n * (N + 1)
        if with_progress:
            self.s_index = after_states
            self.mu_offset = after_states + 1
        else:
            self.s_index = None
            self.mu_offset = after_states
        self.faces_total = sum(self.face_counts)
        self.size = self.mu_offset + N * self.faces_total
        # per-obstacle column start inside one stage's mu sub-block
        starts = np.concatenate([[0], np.cumsum(self.face_counts)]).astype(int)
        self._mu_starts = starts

    def input_slice(self, l: int) -> slice:
        base = self.inputs_offset + l * self.m
        return slice(base, base + self.m)

    def state_slice(self, l: int) -> slice:
        base = self.states_offset + l * self.n
        return slice(base, base + self.n)

    def inputs(self, z) -> np.ndarray:
        return z[self.inputs_offset : self.inputs_offset + self.m * (self.horizon + 1)].reshape(
            self.horizon + 1, self.m
        )

    def states(self, z) -> np.ndarray:
        return z[self.states_offset : self.states_offset + self.n * (self.horizon + 1)].reshape(
            self.horizon + 1, self.n
        )

    def progress(self, z) -> float:
        if self.s_index is None:
            raise ValueError("layout has no progress variable")
        return float(z[self.s_index])

    def mu_matrix(self, z) -> np.ndarray:
        """Certificates as a (N, faces_total) matrix, row l-1 for stage l."""
        return z[self.mu_offset :].reshape(self.horizon, self.faces_total)

    def mu_slice(self, l: int, i: int) -> slice:
        """Flat slice of mu for stage l (1-based, 1..N) and obstacle i."""
        if not 1 <= l <= self.horizon:
            raise ValueError("stage index out of range")
        base = self.mu_offset + (l - 1) * self.faces_total + self._mu_starts[i]
        return slice(base, base + self.face_counts[i])

    def pack(self, inputs, states, s=None, mu=None) -> np.ndarray:
        z = np.zeros(self.size)
        z[: self.states_offset] = np.asarray(inputs, dtype=float).reshape(-1)
        z[self.states_offset : self.states_offset + self.n * (self.horizon + 1)] = np.asarray(
            states, dtype=float
        ).reshape(-1)
        if self.with_progress:
            z[self.s_index] = 0.0 if s is None else float(s)
        if mu is not None:
            z[self.mu_offset :] = np.asarray(mu, dtype=float).reshape(-1)
        return z


class OcpTranscription:
    """Callable residuals/Jacobians of one OcpSpec over the flat layout.

    A one-entry evaluation cache keyed on the decision vector bytes keeps
    the dynamics rollout shared between residual and Jacobian calls at
    the same point, which is where the solver spends its time.
    """

    def __init__(self, spec: OcpSpec, mode: str = PROPOSED):
        if mode not in (PROPOSED, BASELINE):
            raise ValueError(f"unknown mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.config = IdentityConfiguration(min(3, spec.model.n))
        self.n_config = self.config.dim
        n, m, N = spec.model.n, spec.model.m, spec.horizon
        self.layout = DecisionLayout(
            n, m, N, [o.A.shape[0] for o in spec.obstacles], with_progress=(mode == PROPOSED)
        )
        self.n_obstacles = len(spec.obstacles)
        self.n_eq = n * (N + 1) + n + N * self.n_obstacles
        if mode == PROPOSED:
            self.n_eq += self.n_config
        self.n_ineq = N * self.n_obstacles
        self.target_state, _ = spec.path.lift(1.0)
        self._wx = spec.weights.state_vector()
        self._wu = spec.weights.input_vector()
        self._cache_key = None
        self._cache = {}
        self.lower, self.upper = self._build_bounds()
        self.eq_sparsity, self.ineq_sparsity = self._build_sparsity()

    # ---- layout plumbing -------------------------------------------------

    def _build_bounds(self):
        lo = np.full(self.layout.size, -np.inf)
        hi = np.full(self.layout.size, np.inf)
        N = self.layout.horizon
        lo[: self.layout.states_offset] = np.tile(self.spec.input_bounds.lower_array, N + 1)
        hi[: self.layout.states_offset] = np.tile(self.spec.input_bounds.upper_array, N + 1)
        if self.layout.s_index is not None:
            lo[self.layout.s_index] = 0.0
            hi[self.layout.s_index] = 1.0
        lo[self.layout.mu_offset :] = 0.0
        return lo, hi

    def _eq_row_blocks(self):
        n, N = self.layout.n, self.layout.horizon
        rows = {"initial": slice(0, n)}
        rows["dynamics"] = slice(n, n + N * n)
        base = n + N * n
        rows["steady"] = slice(base, base + n)
        base += n
        if self.mode == PROPOSED:
            rows["anchor"] = slice(base, base + self.n_config)
            base += self.n_config
        rows["normalization"] = slice(base, base + N * self.n_obstacles)
        return rows

    def _rollout(self, z, need_jacobians: bool):
        key = z.tobytes()
        if key != self._cache_key:
            self._cache_key = key
            self._cache = {}
        if "F" not in self._cache:
            X = self.layout.states(z)
            U = self.layout.inputs(z)
            self._cache["F"] = self.spec.model.step(X, U)
        if need_jacobians and "AB" not in self._cache:
            X = self.layout.states(z)
            U = self.layout.inputs(z)
            self._cache["AB"] = self.spec.model.jacobians(X, U)
        return self._cache

    # ---- objective -------------------------------------------------------

    def total_cost(self, z) -> float:
        z = np.asarray(z, dtype=float)
        N = self.layout.horizon
        X = self.layout.states(z)
        U = self.layout.inputs(z)
        dX = X[:N] - X[N]
        dU = U[:N] - U[N]
        val = float((self._wx * dX**4).sum() + (self._wu * dU**4).sum())
        if self.mode == PROPOSED:
            val += float(offset_cost(self.layout.progress(z), self.spec.offset_weight))
        else:
            dT = self.config(X[N]) - self.config(self.target_state)
            val += float(self.spec.offset_weight * (dT @ dT))
        return val

    def objective_gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        N = self.layout.horizon
        lay = self.layout
        X = lay.states(z)
        U = lay.inputs(z)
        g = np.zeros(lay.size)
        gX = g[lay.states_offset : lay.states_offset + lay.n * (N + 1)].reshape(N + 1, lay.n)
        gU = g[: lay.states_offset].reshape(N + 1, lay.m)
        dX3 = 4.0 * self._wx * (X[:N] - X[N]) ** 3
        dU3 = 4.0 * self._wu * (U[:N] - U[N]) ** 3
        gX[:N] = dX3
        gX[N] = -dX3.sum(axis=0)
        gU[:N] = dU3
        gU[N] = -dU3.sum(axis=0)
        if self.mode == PROPOSED:
            g[lay.s_index] = -2.0 * self.spec.offset_weight * (1.0 - lay.progress(z))
        else:
            dT = self.config(X[N]) - self.config(self.target_state)
            gX[N][: self.n_config] += 2.0 * self.spec.offset_weight * dT
        return g

    def objective_hessian(self, z) -> np.ndarray:
        """Dense objective Hessian (exact for this cost, and PSD).

        Each stage couples to the terminal pair through the quartic
        deviation terms, giving [[D, -D], [-D, D]] blocks per stage with
        D diagonal; the terminal diagonal accumulates all of them.
        """
        z = np.asarray(z, dtype=float)
        N = self.layout.horizon
        lay = self.layout
        X = lay.states(z)
        U = lay.inputs(z)
        H = np.zeros((lay.size, lay.size))
        DX = 12.0 * self._wx * (X[:N] - X[N]) ** 2
        DU = 12.0 * self._wu * (U[:N] - U[N]) ** 2
        so = lay.states_offset
        ixN = np.arange(so + N * lay.n, so + (N + 1) * lay.n)
        iuN = np.arange(N * lay.m, (N + 1) * lay.m)
        for l in range(N):
            ix = np.arange(so + l * lay.n, so + (l + 1) * lay.n)
            iu = np.arange(l * lay.m, (l + 1) * lay.m)
            H[ix, ix] += DX[l]
            H[ixN, ixN] += DX[l]
            H[ix, ixN] -= DX[l]
            H[ixN, ix] -= DX[l]
            H[iu, iu] += DU[l]
            H[iuN, iuN] += DU[l]
            H[iu, iuN] -= DU[l]
            H[iuN, iu] -= DU[l]
        if self.mode == PROPOSED:
            H[lay.s_index, lay.s_index] = 2.0 * self.spec.offset_weight
        else:
            cfg = ixN[: self.n_config]
            H[cfg, cfg] += 2.0 * self.spec.offset_weight
        return H

    # ---- equality block --------------------------------------------------

    def eq_residuals(self, z, x_current) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lay = self.layout
        N, n = lay.horizon, lay.n
        X = lay.states(z)
        F = self._rollout(z, need_jacobians=False)["F"]
        r = np.empty(self.n_eq)
        blocks = self._eq_row_blocks()
        r[blocks["initial"]] = X[0] - x_current
        r[blocks["dynamics"]] = (X[1:] - F[:N]).reshape(-1)
        r[blocks["steady"]] = X[N] - F[N]
        if self.mode == PROPOSED:
            r[blocks["anchor"]] = self.config(X[N]) - self.spec.path.eval(lay.progress(z))
        if self.n_obstacles:
            MU = lay.mu_matrix(z)
            sums = np.empty((N, self.n_obstacles))
            for i in range(self.n_obstacles):
                cols = slice(lay._mu_starts[i], lay._mu_starts[i + 1])
                sums[:, i] = MU[:, cols].sum(axis=1)
            r[blocks["normalization"]] = (sums - 1.0).reshape(-1)
        return r

    def eq_jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lay = self.layout
        N, n, m = lay.horizon, lay.n, lay.m
        A, B = self._rollout(z, need_jacobians=True)["AB"]
        J = np.zeros((self.n_eq, lay.size))
        blocks = self._eq_row_blocks()
        J[blocks["initial"], lay.state_slice(0)] = np.eye(n)
        dyn0 = blocks["dynamics"].start
        for l in range(N):
            rows = slice(dyn0 + l * n, dyn0 + (l + 1) * n)
            J[rows, lay.state_slice(l + 1)] = np.eye(n)
            J[rows, lay.state_slice(l)] = -A[l]
            J[rows, lay.input_slice(l)] = -B[l]
        J[blocks["steady"], lay.state_slice(N)] = np.eye(n) - A[N]
        J[blocks["steady"], lay.input_slice(N)] = -B[N]
        if self.mode == PROPOSED:
            rows = blocks["anchor"]
            xN = lay.state_slice(N)
            J[rows, xN.start : xN.start + self.n_config] = self.config.jacobian(
                lay.states(z)[N]
            )[:, : self.n_config]
            J[rows, lay.s_index] = -self.spec.path.derivative(lay.progress(z))[: self.n_config]
        if self.n_obstacles:
            base = blocks["normalization"].start
            for l in range(1, N + 1):
                for i in range(self.n_obstacles):
                    row = base + (l - 1) * self.n_obstacles + i
                    J[row, lay.mu_slice(l, i)] = 1.0
        return J

    # ---- inequality block ------------------------------------------------

    def ineq_residuals(self, z, _x_current=None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lay = self.layout
        N = lay.horizon
        if not self.n_obstacles:
            return np.zeros(0)
        pos = lay.states(z)[1:, :2]
        MU = lay.mu_matrix(z)
        out = np.empty((N, self.n_obstacles))
        for i, obs in enumerate(self.spec.obstacles):
            cols = slice(lay._mu_starts[i], lay._mu_starts[i + 1])
            margins = pos @ obs.A.T - obs.b
            out[:, i] = (margins * MU[:, cols]).sum(axis=1) - self.spec.delta_sep
        return out.reshape(-1)

    def ineq_jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lay = self.layout
        N = lay.horizon
        J = np.zeros((self.n_ineq, lay.size))
        if not self.n_obstacles:
            return J
        pos = lay.states(z)[1:, :2]
        MU = lay.mu_matrix(z)
        for i, obs in enumerate(self.spec.obstacles):
            cols = slice(lay._mu_starts[i], lay._mu_starts[i + 1])
            margins = pos @ obs.A.T - obs.b
            for l in range(1, N + 1):
                row = (l - 1) * self.n_obstacles + i
                xs = lay.state_slice(l)
                J[row, xs.start : xs.start + 2] = MU[l - 1, cols] @ obs.A
                J[row, lay.mu_slice(l, i)] = margins[l - 1]
        return J

    # ---- sparsity --------------------------------------------------------

    def _build_sparsity(self):
        lay = self.layout
        N, n = lay.horizon, lay.n
        eq = np.zeros((self.n_eq, lay.size), dtype=bool)
        blocks = self._eq_row_blocks()
        eq[blocks["initial"], lay.state_slice(0)] = True
        dyn0 = blocks["dynamics"].start
        for l in range(N):
            rows = slice(dyn0 + l * n, dyn0 + (l + 1) * n)
            eq[rows, lay.state_slice(l + 1)] = True
            eq[rows, lay.state_slice(l)] = True
            eq[rows, lay.input_slice(l)] = True
        eq[blocks["steady"], lay.state_slice(N)] = True
        eq[blocks["steady"], lay.input_slice(N)] = True
        if self.mode == PROPOSED:
            rows = blocks["anchor"]
            xN = lay.state_slice(N)
            eq[rows, xN.start : xN.start + self.n_config] = True
            eq[rows, lay.s_index] = True
        if self.n_obstacles:
            base = blocks["normalization"].start
            for l in range(1, N + 1):
                for i in range(self.n_obstacles):
                    eq[base + (l - 1) * self.n_obstacles + i, lay.mu_slice(l, i)] = True
        ineq = np.zeros((self.n_ineq, lay.size), dtype=bool)
        for l in range(1, N + 1):
            for i in range(self.n_obstacles):
                row = (l - 1) * self.n_obstacles + i
                xs = lay.state_slice(l)
                ineq[row, xs.start : xs.start + 2] = True
                ineq[row, lay.mu_slice(l, i)] = True
        return eq, ineq

    # ---- problem factory ---------------------------------------------------

    def problem(self, x_current) -> NlpProblem:
        x_cur = np.asarray(x_current, dtype=float).reshape(-1)
        if x_cur.shape != (self.layout.n,):
            raise ValueError(f"x_current must have shape ({self.layout.n},)")
        if not np.all(np.isfinite(x_cur)):
            raise ValueError("x_current must be finite")
        return NlpProblem(
            n=self.layout.size,
            objective=self.total_cost,
            gradient=self.objective_gradient,
            eq_residuals=lambda z: self.eq_residuals(z, x_cur),
            eq_jacobian=self.eq_jacobian,
            n_eq=self.n_eq,
            ineq_residuals=self.ineq_residuals if self.n_ineq else None,
            ineq_jacobian=self.ineq_jacobian if self.n_ineq else None,
            n_ineq=self.n_ineq,
            lower=self.lower.copy(),
            upper=self.upper.copy(),
            eq_sparsity=self.eq_sparsity,
            ineq_sparsity=self.ineq_sparsity,
            hessian_model=self.objective_hessian,
        )

    def max_violation(self, z, x_current) -> float:
        """Worst constraint violation of z (equalities, inequalities, bounds)."""
        z = np.asarray(z, dtype=float)
        v = float(np.abs(self.eq_residuals(z, x_current)).max())
        if self.n_ineq:
            v = max(v, float(max(0.0, -self.ineq_residuals(z).min())))
        v = max(v, float(np.maximum(self.lower - z, 0.0).max()))
        v = max(v, float(np.maximum(z - self.upper, 0.0).max()))
        return v


def total_cost(z, spec: OcpSpec, mode: str = PROPOSED) -> float:
    """Objective value of a packed decision vector under `spec`."""
    return OcpTranscription(spec, mode).total_cost(np.asarray(z, dtype=float))


def assemble_nlp(spec: OcpSpec, x_current, mode: str = PROPOSED) -> NlpProblem:
    """One-shot NLP assembly; prefer holding an OcpTranscription when
    assembling repeatedly for the same spec."""
    return OcpTranscription(spec, mode).problem(x_current)


@dataclass
class GradientCheckReport:
    objective_error: float
    eq_error: float
    ineq_error: float
    step: float

    @property
    def max_error(self) -> float:
        return max(self.objective_error, self.eq_error, self.ineq_error)


def check_gradients(problem: NlpProblem, z, step: float = 1e-6) -> GradientCheckReport:
    """Compare analytic derivatives against central finite differences.

    Probes every coordinate with +-step, so any domain-limited coordinate
    (the progress variable) must sit at least `step` inside its bounds.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(problem.gradient(z), dtype=float)
    Je = problem.eq_jacobian(z) if problem.n_eq else None
    Ji = problem.ineq_jacobian(z) if problem.n_ineq else None
    obj_err = 0.0
    eq_err = 0.0
    ineq_err = 0.0
    for j in range(problem.n):
        zp = z.copy()
        zm = z.copy()
        zp[j] += step
        zm[j] -= step
        obj_err = max(obj_err, abs((problem.objective(zp) - problem.objective(zm)) / (2 * step) - g[j]))
        if Je is not None:
            col = (problem.eq_residuals(zp) - problem.eq_residuals(zm)) / (2 * step)
            eq_err = max(eq_err, float(np.abs(col - Je[:, j]).max()))
        if Ji is not None:
            col = (problem.ineq_residuals(zp) - problem.ineq_residuals(zm)) / (2 * step)
            ineq_err = max(ineq_err, float(np.abs(col - Ji[:, j]).max()))
    return GradientCheckReport(float(obj_err), float(eq_err), float(ineq_err), step)
