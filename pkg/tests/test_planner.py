"""Planner behavior: optimality on empty maps, collision-free output, determinism."""

import numpy as np
import pytest

from pathmpc.geometry import ConvexPolytope
from pathmpc.planner import PlannerConfig, path_length, rrt_star


def wall_map():
    """A wall with a single narrow opening between start and goal."""
    return (
        ConvexPolytope.from_box(0.9, -2.0, 1.1, -0.2),
        ConvexPolytope.from_box(0.9, 0.3, 1.1, 2.0),
    )


def test_path_length_of_a_right_triangle():
    assert path_length([(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)]) == pytest.approx(7.0)
    assert path_length([(1.0, 1.0)]) == 0.0
    assert path_length([]) == 0.0


def test_empty_map_path_is_near_the_straight_line():
    config = PlannerConfig(bounds=(-0.5, -0.5, 2.5, 2.5), max_iterations=1500, rng_seed=3)
    start, goal = np.array([0.0, 0.0]), np.array([2.0, 2.0])
    path = rrt_star(start, goal, (), config)
    assert path is not None
    np.testing.assert_allclose(path[0], start)
    np.testing.assert_allclose(path[-1], goal)
    straight = float(np.linalg.norm(goal - start))
    assert path_length(path) <= 1.2 * straight


def test_planner_is_deterministic_for_a_fixed_seed():
    config = PlannerConfig(bounds=(-0.5, -2.5, 2.5, 2.5), max_iterations=800, rng_seed=7)
    a = rrt_star((0.0, 0.0), (2.0, 0.0), wall_map(), config)
    b = rrt_star((0.0, 0.0), (2.0, 0.0), wall_map(), config)
    assert a is not None and b is not None
    assert np.array_equal(a, b)


def test_planned_path_keeps_clearance_on_every_segment():
    obstacles = wall_map()
    config = PlannerConfig(
        bounds=(-0.5, -2.5, 2.5, 2.5),
        max_iterations=1200,
        rng_seed=5,
        min_clearance=0.02,
    )
    path = rrt_star((0.0, 0.0), (2.0, 0.0), obstacles, config)
    assert path is not None
    for a, b in zip(path[:-1], path[1:]):
        ts = np.linspace(0.0, 1.0, 200)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        for obs in obstacles:
            assert obs.max_margin(pts).min() >= 0.02 - 1e-12
    # the opening is at y in (-0.2, 0.3): the path must thread it
    crossing = [p for p in path if 0.9 <= p[0] <= 1.1]
    assert all(-0.2 < p[1] < 0.3 for p in crossing)


def test_more_iterations_never_lengthen_the_path():
    obstacles = wall_map()
    lengths = []
    for iters in (600, 1200, 2400):
        config = PlannerConfig(bounds=(-0.5, -2.5, 2.5, 2.5), max_iterations=iters, rng_seed=11)
        path = rrt_star((0.0, 0.0), (2.0, 0.0), obstacles, config)
        assert path is not None
        lengths.append(path_length(path))
    assert lengths[1] <= lengths[0] + 1e-9
    assert lengths[2] <= lengths[1] + 1e-9


def test_unreachable_goal_returns_none():
    # goal sealed inside a box of walls
    walls = (
        ConvexPolytope.from_box(0.8, 0.8, 1.6, 0.9),
        ConvexPolytope.from_box(0.8, 1.5, 1.6, 1.6),
        ConvexPolytope.from_box(0.8, 0.9, 0.9, 1.5),
        ConvexPolytope.from_box(1.5, 0.9, 1.6, 1.5),
    )
    config = PlannerConfig(bounds=(0.0, 0.0, 2.0, 2.0), max_iterations=400, rng_seed=1)
    assert rrt_star((0.1, 0.1), (1.2, 1.2), walls, config) is None


def test_start_or_goal_in_collision_is_rejected():
    box = (ConvexPolytope.from_box(0.0, 0.0, 1.0, 1.0),)
    config = PlannerConfig(bounds=(-1.0, -1.0, 2.0, 2.0), max_iterations=10)
    with pytest.raises(ValueError):
        rrt_star((0.5, 0.5), (1.5, 1.5), box, config)
    with pytest.raises(ValueError):
        rrt_star((-0.5, -0.5), (0.5, 0.5), box, config)


def test_coincident_start_and_goal_short_circuits():
    config = PlannerConfig(bounds=(-1.0, -1.0, 1.0, 1.0), max_iterations=10)
    path = rrt_star((0.2, 0.2), (0.2, 0.2), (), config)
    assert path.shape == (1, 2)
    np.testing.assert_allclose(path[0], [0.2, 0.2])


def test_config_validation_rejects_bad_settings():
    with pytest.raises(ValueError):
        PlannerConfig(bounds=(0.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        PlannerConfig(bounds=(1.0, 0.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        PlannerConfig(bounds=(0.0, 0.0, 1.0, 1.0), goal_bias=1.5)
    with pytest.raises(ValueError):
        PlannerConfig(bounds=(0.0, 0.0, 1.0, 1.0), steer_step=0.0)
    with pytest.raises(ValueError):
        PlannerConfig(bounds=(0.0, 0.0, 1.0, 1.0), max_iterations=0)
