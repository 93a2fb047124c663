"""Controller mechanics: warm starts, feasibility repair, monitors, faults.

The solver itself is covered elsewhere; these tests exercise the
plumbing around it with hand-built plans and synthetic diagnostics so
every expected value is computable by inspection.
"""

import numpy as np
import pytest

from pathmpc.dynamics import DiffDriveModel, InputBounds
from pathmpc.geometry import ConvexPolytope, best_certificate
from pathmpc.mpc import (
    InitialInfeasibilityFault,
    PathMpcController,
    StepDiagnostics,
    baseline_tracking_step,
    cold_start,
    evaluate_monitors,
    mpc_step,
    restore_feasibility,
    shift_warm_start,
)
from pathmpc.nlp import SolverOptions
from pathmpc.ocp import BASELINE, PROPOSED, OcpSpec, OcpTranscription, StageWeights
from pathmpc.paths import SinusoidPath


def make_spec(obstacles=True, horizon=5):
    obs = (ConvexPolytope.from_box(1.0, -1.0, 1.5, 1.0),) if obstacles else ()
    return OcpSpec(
        horizon=horizon,
        step=0.2,
        model=DiffDriveModel(0.2, substeps=4),
        path=SinusoidPath(),
        obstacles=obs,
        input_bounds=InputBounds((-0.31, -1.9), (0.31, 1.9)),
        weights=StageWeights(),
        offset_weight=1000.0,
        delta_sep=1e-3,
    )


def steady_plan(transcription, s=0.4):
    """A plan that holds the lifted steady pair at every stage."""
    lay = transcription.layout
    xs, us = transcription.spec.path.lift(s)
    X = np.tile(np.asarray(xs, dtype=float), (lay.horizon + 1, 1))
    U = np.tile(np.asarray(us, dtype=float), (lay.horizon + 1, 1))
    mu = np.zeros(lay.horizon * lay.faces_total)
    for l in range(1, lay.horizon + 1):
        for i, obs in enumerate(transcription.spec.obstacles):
            cert, _ = best_certificate(obs, X[l, :2])
            sl = lay.mu_slice(l, i)
            mu[sl.start - lay.mu_offset : sl.stop - lay.mu_offset] = cert
    return lay.pack(U, X, s=s if lay.with_progress else None, mu=mu)


def diag(k, v_n, stage_cost_first=0.0, s_star=None, tracking_gap=0.0, gap=None, shift_violation=None):
    return StepDiagnostics(
        k=k,
        x=np.zeros(3),
        u=np.zeros(2),
        v_n=v_n,
        s_star=s_star,
        solver_status="converged",
        fallback=False,
        outer_iterations=1,
        inner_iterations=1,
        wall_time=0.0,
        stage_cost_first=stage_cost_first,
        tracking_gap=tracking_gap,
        gap=gap,
        shift_violation=shift_violation,
    )


def test_shift_is_a_fixed_point_on_a_steady_plan():
    tr = OcpTranscription(make_spec(), mode=PROPOSED)
    z = steady_plan(tr)
    shifted = shift_warm_start(z, tr)
    np.testing.assert_allclose(shifted, z, atol=1e-14)


def test_shift_moves_every_stage_forward_by_one():
    tr = OcpTranscription(make_spec(obstacles=False), mode=PROPOSED)
    lay = tr.layout
    rng = np.random.default_rng(20)
    X = rng.normal(size=(lay.horizon + 1, 3))
    U = rng.normal(size=(lay.horizon + 1, 2))
    z = lay.pack(U, X, s=0.3)
    shifted = shift_warm_start(z, tr)
    np.testing.assert_allclose(lay.states(shifted)[: lay.horizon], X[1:])
    np.testing.assert_allclose(lay.inputs(shifted)[: lay.horizon], U[1:])
    # the appended slot repeats the steady pair
    np.testing.assert_allclose(lay.states(shifted)[lay.horizon], X[lay.horizon])
    np.testing.assert_allclose(lay.inputs(shifted)[lay.horizon], U[lay.horizon])
    assert lay.progress(shifted) == pytest.approx(0.3)


def test_shift_refreshes_terminal_certificates():
    tr = OcpTranscription(make_spec(), mode=PROPOSED)
    lay = tr.layout
    z = steady_plan(tr)
    # corrupt the terminal certificate block only
    zc = z.copy()
    sl = lay.mu_slice(lay.horizon, 0)
    zc[sl] = 7.0
    shifted = shift_warm_start(zc, tr)
    cert, _ = best_certificate(tr.spec.obstacles[0], lay.states(z)[lay.horizon, :2])
    np.testing.assert_allclose(shifted[sl], cert, atol=1e-12)


def test_cold_start_respects_bounds_and_anchors_progress():
    tr = OcpTranscription(make_spec(), mode=PROPOSED)
    lay = tr.layout
    for s_query, s_expect in ((0.0, 0.0), (1.0, 1.0)):
        x0 = np.asarray(tr.spec.path.eval(s_query), dtype=float)
        z = cold_start(tr, x0)
        assert np.all(z >= tr.lower - 1e-12)
        assert np.all(z <= tr.upper + 1e-12)
        assert lay.progress(z) == pytest.approx(s_expect, abs=1e-12)
        # the initial-condition rows close to high accuracy
        np.testing.assert_allclose(lay.states(z)[0], x0, atol=1e-6)


def test_restore_feasibility_repairs_a_perturbed_plan():
    tr = OcpTranscription(make_spec(), mode=PROPOSED)
    x0 = np.asarray(tr.spec.path.eval(0.0), dtype=float)
    rng = np.random.default_rng(21)
    z = cold_start(tr, x0)
    base_violation = tr.max_violation(z, x0)
    zp = z + rng.normal(0.0, 1e-4, z.shape)
    zp = np.clip(zp, tr.lower, tr.upper)
    broken = tr.max_violation(zp, x0)
    assert broken > 1e-5
    repaired = restore_feasibility(tr, zp, x0)
    assert tr.max_violation(repaired, x0) <= max(1e-8, base_violation)
    # the repair is a local projection, not a re-optimization
    assert abs(tr.total_cost(repaired) - tr.total_cost(zp)) < 1.0


def test_monitors_first_step_has_no_decrease_verdict():
    v = evaluate_monitors(None, diag(0, 5.0))
    assert v.lyapunov_ok is None
    assert v.gap_decrease_ok is None
    assert v.shift_feasible_ok is None
    assert v.all_ok()


def test_monitors_lyapunov_decrease_condition():
    prev = diag(0, v_n=10.0, stage_cost_first=2.0)
    ok = evaluate_monitors(prev, diag(1, v_n=7.0))
    assert ok.lyapunov_ok is True
    assert ok.lyapunov_slack == pytest.approx(1.0)
    bad = evaluate_monitors(prev, diag(1, v_n=9.0))
    assert bad.lyapunov_ok is False
    assert bad.lyapunov_slack == pytest.approx(-1.0)
    # a violation inside the scaled tolerance still passes
    near = evaluate_monitors(prev, diag(1, v_n=8.0 + 1e-4))
    assert near.lyapunov_ok is True


def test_monitors_shift_feasibility_threshold():
    assert evaluate_monitors(None, diag(0, 1.0, shift_violation=1e-7)).shift_feasible_ok is True
    assert evaluate_monitors(None, diag(0, 1.0, shift_violation=1e-4)).shift_feasible_ok is False
    assert evaluate_monitors(None, diag(0, 1.0, shift_violation=None)).shift_feasible_ok is None


def test_monitors_gap_trend_requires_shrinking_tracking_gap():
    prev = diag(0, v_n=5.0, s_star=0.2, tracking_gap=1.0, gap=3.0)
    # premise holds, conclusion holds
    good = evaluate_monitors(prev, diag(1, v_n=4.0, s_star=0.3, tracking_gap=0.5, gap=2.5))
    assert good.gap_decrease_ok is True
    assert good.s_delta == pytest.approx(0.1)
    # premise holds, conclusion fails
    bad = evaluate_monitors(prev, diag(1, v_n=4.0, s_star=0.3, tracking_gap=0.5, gap=3.5))
    assert bad.gap_decrease_ok is False
    assert not bad.all_ok()
    # premise fails: tracking gap did not shrink, so no verdict
    skip = evaluate_monitors(prev, diag(1, v_n=4.0, s_star=0.3, tracking_gap=1.0, gap=9.0))
    assert skip.gap_decrease_ok is None
    assert skip.all_ok()


def test_controller_rejects_start_inside_an_obstacle():
    spec = make_spec(horizon=3)
    controller = PathMpcController(
        spec,
        mode=PROPOSED,
        cold_solver_options=SolverOptions(max_outer=4, max_inner=40, penalty_init=1e4),
    )
    inside = np.array([1.25, 0.0, 0.0])
    with pytest.raises(InitialInfeasibilityFault):
        controller.step(inside)


def test_mode_dispatch_helpers_check_the_mode():
    spec = make_spec(obstacles=False, horizon=3)
    proposed = PathMpcController(spec, mode=PROPOSED)
    baseline = PathMpcController(spec, mode=BASELINE)
    with pytest.raises(ValueError):
        baseline_tracking_step(proposed, np.zeros(3))
    with pytest.raises(ValueError):
        mpc_step(baseline, np.zeros(3))


def test_controller_steps_chain_diagnostics():
    spec = make_spec(obstacles=False, horizon=4)
    controller = PathMpcController(spec, mode=PROPOSED)
    x = np.asarray(spec.path.eval(0.85), dtype=float)
    model = spec.model
    lo = np.asarray(spec.input_bounds.lower, dtype=float)
    hi = np.asarray(spec.input_bounds.upper, dtype=float)
    history = []
    for _ in range(3):
        u, d = controller.step(x)
        history.append(d)
        assert np.all(u >= lo - 1e-12)
        assert np.all(u <= hi + 1e-12)
        x = model.step(x, u)
    assert [d.k for d in history] == [0, 1, 2]
    assert history[0].shift_violation is None
    for d in history[1:]:
        assert d.verdict.shift_feasible_ok is True
        assert d.verdict.lyapunov_ok is True
        assert d.v_n <= history[0].v_n + 1e-9
    assert all(0.0 <= d.s_star <= 1.0 for d in history)
    controller.reset()
    assert controller.state is None
    assert controller.prev_diagnostics is None
