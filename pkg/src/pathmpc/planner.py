"""Sampling-based global planner producing waypoint paths.

An RRT*-style tree: uniform workspace sampling with goal bias, fixed-step
steering, collision checks by dense sampling along segments, and rewiring
within a fixed radius with cost propagation through the affected subtree.
Determinism comes from a seeded generator in the config.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConvexPolytope


@dataclass(frozen=True)
class PlannerConfig:
    """Tuning knobs of the tree search.

    bounds is the sampling workspace (xmin, ymin, xmax, ymax); collision
    checks sample segments every `collision_resolution` meters and demand
    `min_clearance` of margin against every obstacle.
    """

    bounds: tuple
    max_iterations: int = 1000
    steer_step: float = 0.3
    goal_bias: float = 0.1
    rewire_radius: float = 0.6
    rng_seed: int = 0
    min_clearance: float = 1e-3
    collision_resolution: float = 5e-4

    def __post_init__(self):
        if len(self.bounds) != 4:
            raise ValueError("bounds must be (xmin, ymin, xmax, ymax)")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("degenerate workspace bounds")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be a probability")
        if self.steer_step <= 0.0 or self.rewire_radius <= 0.0:
            raise ValueError("steer_step and rewire_radius must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.collision_resolution <= 0.0:
            raise ValueError("collision_resolution must be positive")


def _points_free(points, obstacles, clearance) -> np.ndarray:
    """Boolean mask of points with margin >= clearance against all obstacles."""
    points = np.atleast_2d(points)
    free = np.ones(len(points), dtype=bool)
    for obs in obstacles:
        free &= obs.max_margin(points) >= clearance
    return free


def _segment_free(a, b, obstacles, clearance, resolution) -> bool:
    length = float(np.linalg.norm(b - a))
    count = max(2, int(np.ceil(length / resolution)) + 1)
    ts = np.linspace(0.0, 1.0, count)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return bool(_points_free(pts, obstacles, clearance).all())


def path_length(waypoints) -> float:
    """Total Euclidean length of a waypoint chain."""
    pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def rrt_star(start, goal, obstacles, config: PlannerConfig):
    """Plan a waypoint path from start to goal; None when not connected.

    Runs exactly config.max_iterations sampling rounds, then connects the
    goal to the cheapest tree node within steering range.  Node costs are
    maintained exactly under rewiring (subtree updates), so the returned
    path cost never increases with more iterations.
    """
    start = np.asarray(start, dtype=float).reshape(2)
    goal = np.asarray(goal, dtype=float).reshape(2)
    if not _points_free(start, obstacles, config.min_clearance)[0]:
        raise ValueError("start position is in collision")
    if not _points_free(goal, obstacles, config.min_clearance)[0]:
        raise ValueError("goal position is in collision")
    if np.linalg.norm(goal - start) < 1e-12:
        return np.array([start])

    rng = np.random.default_rng(config.rng_seed)
    xmin, ymin, xmax, ymax = config.bounds
    low = np.array([xmin, ymin])
    high = np.array([xmax, ymax])

    nodes = np.empty((config.max_iterations + 1, 2))
    nodes[0] = start
    parents = [-1]
    costs = [0.0]
    children = [[]]
    n = 1

    for _ in range(config.max_iterations):
        if rng.random() < config.goal_bias:
            sample = goal.copy()
        else:
            sample = rng.uniform(low, high)
        diffs = nodes[:n] - sample
        dist2 = (diffs * diffs).sum(axis=1)
        nearest = int(np.argmin(dist2))
        gap = float(np.sqrt(dist2[nearest]))
        if gap < 1e-12:
            continue
        step = min(config.steer_step, gap)
        new = nodes[nearest] + (sample - nodes[nearest]) * (step / gap)
        if not _points_free(new, obstacles, config.min_clearance)[0]:
            continue

        # candidate parents: all nodes within the rewire radius, nearest included
        d_new = np.linalg.norm(nodes[:n] - new, axis=1)
        neighbors = np.nonzero(d_new <= config.rewire_radius)[0]
        if nearest not in neighbors:
            neighbors = np.append(neighbors, nearest)
        order = neighbors[np.argsort([costs[j] + d_new[j] for j in neighbors], kind="stable")]
        parent = -1
        for j in order:
            if _segment_free(nodes[j], new, obstacles, config.min_clearance, config.collision_resolution):
                parent = int(j)
                break
        if parent < 0:
            continue
        new_cost = costs[parent] + float(d_new[parent])
        nodes[n] = new
        parents.append(parent)
        costs.append(new_cost)
        children.append([])
        children[parent].append(n)
        idx_new = n
        n += 1

        # rewire neighbors through the new node when strictly cheaper
        for j in neighbors:
            j = int(j)
            cand = new_cost + float(d_new[j])
            if cand < costs[j] - 1e-12 and _segment_free(
                new, nodes[j], obstacles, config.min_clearance, config.collision_resolution
            ):
                children[parents[j]].remove(j)
                parents[j] = idx_new
                children[idx_new].append(j)
                delta = cand - costs[j]
                stack = [j]
                while stack:
                    node = stack.pop()
                    costs[node] += delta
                    stack.extend(children[node])

    # connect the goal through the cheapest reachable node
    d_goal = np.linalg.norm(nodes[:n] - goal, axis=1)
    best = -1
    best_total = np.inf
    for j in np.nonzero(d_goal <= config.steer_step)[0]:
        total = costs[j] + float(d_goal[j])
        if total < best_total - 1e-12 and _segment_free(
            nodes[j], goal, obstacles, config.min_clearance, config.collision_resolution
        ):
            best = int(j)
            best_total = total
    if best < 0:
        return None

    chain = [best]
    while parents[chain[-1]] >= 0:
        chain.append(parents[chain[-1]])
    chain.reverse()
    waypoints = [nodes[j] for j in chain]
    if np.linalg.norm(waypoints[-1] - goal) > 1e-12:
        waypoints.append(goal)
    return np.array(waypoints)
