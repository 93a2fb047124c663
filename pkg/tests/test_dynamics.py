"""Integrator correctness against the exact unicycle flow.

For piecewise-constant inputs the unicycle ODE has a closed-form
solution (arc of a circle for omega != 0, straight segment otherwise),
which serves as an independent oracle for the RK4 discretization.
"""

import numpy as np
import pytest

from pathmpc.dynamics import (
    DiffDriveModel,
    InputBounds,
    IntegrationError,
    RobotInput,
    RobotState,
    diff_drive_jacobians,
    diff_drive_ode,
    rk4_jacobians,
    rk4_step,
)


def exact_flow(x, u, t):
    """Closed-form unicycle flow for constant input over time t."""
    px, py, theta = float(x[0]), float(x[1]), float(x[2])
    v, omega = float(u[0]), float(u[1])
    if abs(omega) < 1e-14:
        return np.array([px + v * t * np.cos(theta), py + v * t * np.sin(theta), theta])
    return np.array(
        [
            px + (v / omega) * (np.sin(theta + omega * t) - np.sin(theta)),
            py - (v / omega) * (np.cos(theta + omega * t) - np.cos(theta)),
            theta + omega * t,
        ]
    )


def random_state_inputs(rng, count):
    states = np.column_stack(
        [
            rng.uniform(-3.0, 3.0, count),
            rng.uniform(-3.0, 3.0, count),
            rng.uniform(-np.pi, np.pi, count),
        ]
    )
    inputs = np.column_stack(
        [rng.uniform(-0.31, 0.31, count), rng.uniform(-1.9, 1.9, count)]
    )
    return states, inputs


def test_model_step_matches_exact_flow():
    rng = np.random.default_rng(0)
    model = DiffDriveModel(0.2, substeps=4)
    states, inputs = random_state_inputs(rng, 100)
    worst = 0.0
    for x, u in zip(states, inputs):
        err = np.abs(model.step(x, u) - exact_flow(x, u, 0.2)).max()
        worst = max(worst, err)
    assert worst < 1e-8


def test_rk4_fourth_order_convergence():
    x = np.array([0.1, -0.2, 0.7])
    u = np.array([0.3, 1.5])
    exact = exact_flow(x, u, 0.4)
    errors = []
    for substeps in (1, 2, 4):
        approx = rk4_step(diff_drive_ode, x, u, 0.4, substeps=substeps)
        errors.append(np.abs(approx - exact).max())
    # classical RK4: halving the step divides the error by about 2^4
    assert errors[0] / errors[1] > 12.0
    assert errors[1] / errors[2] > 12.0


def test_substep_composition_matches_smaller_steps():
    x = np.array([1.0, 2.0, -0.5])
    u = np.array([0.2, -1.0])
    two_half_steps = rk4_step(
        diff_drive_ode, rk4_step(diff_drive_ode, x, u, 0.1), u, 0.1
    )
    one_substepped = rk4_step(diff_drive_ode, x, u, 0.2, substeps=2)
    np.testing.assert_allclose(one_substepped, two_half_steps, atol=1e-14)


def test_ode_jacobians_match_finite_differences():
    rng = np.random.default_rng(1)
    step = 1e-6
    for _ in range(50):
        x = rng.uniform(-2.0, 2.0, 3)
        u = rng.uniform(-1.0, 1.0, 2)
        A, B = diff_drive_jacobians(x, u)
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = step
            col = (diff_drive_ode(x + dx, u) - diff_drive_ode(x - dx, u)) / (2 * step)
            np.testing.assert_allclose(A[:, j], col, atol=1e-8)
        for j in range(2):
            du = np.zeros(2)
            du[j] = step
            col = (diff_drive_ode(x, u + du) - diff_drive_ode(x, u - du)) / (2 * step)
            np.testing.assert_allclose(B[:, j], col, atol=1e-8)


def test_discrete_jacobians_match_finite_differences():
    rng = np.random.default_rng(2)
    model = DiffDriveModel(0.2, substeps=4)
    step = 1e-6
    for _ in range(20):
        x = rng.uniform(-2.0, 2.0, 3)
        u = rng.uniform(-1.0, 1.0, 2)
        Jx, Ju = model.jacobians(x, u)
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = step
            col = (model.step(x + dx, u) - model.step(x - dx, u)) / (2 * step)
            np.testing.assert_allclose(Jx[:, j], col, atol=1e-7)
        for j in range(2):
            du = np.zeros(2)
            du[j] = step
            col = (model.step(x, u + du) - model.step(x, u - du)) / (2 * step)
            np.testing.assert_allclose(Ju[:, j], col, atol=1e-7)


def test_jacobians_consistent_with_batched_call():
    rng = np.random.default_rng(3)
    states, inputs = random_state_inputs(rng, 10)
    Jx, Ju = rk4_jacobians(
        diff_drive_ode, diff_drive_jacobians, states, inputs, 0.2, substeps=4
    )
    assert Jx.shape == (10, 3, 3)
    assert Ju.shape == (10, 3, 2)
    for i in range(10):
        jx_i, ju_i = rk4_jacobians(
            diff_drive_ode, diff_drive_jacobians, states[i], inputs[i], 0.2, substeps=4
        )
        np.testing.assert_allclose(Jx[i], jx_i, atol=1e-14)
        np.testing.assert_allclose(Ju[i], ju_i, atol=1e-14)


def test_batched_step_matches_loop():
    rng = np.random.default_rng(4)
    model = DiffDriveModel(0.2)
    states, inputs = random_state_inputs(rng, 25)
    batched = model.step(states, inputs)
    for i in range(25):
        np.testing.assert_allclose(batched[i], model.step(states[i], inputs[i]), atol=1e-14)


def test_state_and_input_round_trip():
    s = RobotState(1.0, -2.0, 0.5)
    assert RobotState.from_array(s.to_array()) == s
    w = RobotInput(0.1, -0.7)
    assert RobotInput.from_array(w.to_array()) == w


def test_input_bounds_contains_and_clip():
    bounds = InputBounds((-0.31, -1.9), (0.31, 1.9))
    assert bounds.contains((0.0, 0.0))
    assert bounds.contains((0.31, 1.9))
    assert not bounds.contains((0.32, 0.0))
    assert not bounds.contains((0.31, 1.9), margin=1e-6)
    np.testing.assert_allclose(bounds.clip((1.0, -5.0)), [0.31, -1.9])


def test_invalid_construction_rejected():
    with pytest.raises(ValueError):
        DiffDriveModel(0.0)
    with pytest.raises(ValueError):
        DiffDriveModel(0.2, substeps=0)
    with pytest.raises(ValueError):
        rk4_step(diff_drive_ode, np.zeros(3), np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        InputBounds((1.0, 0.0), (0.0, 1.0))


def test_non_finite_state_raises():
    with pytest.raises(IntegrationError):
        rk4_step(diff_drive_ode, np.array([np.inf, 0.0, 0.0]), np.zeros(2), 0.2)
