"""Reference paths: endpoints, smoothness, lifts, clearance checks.

Derivatives are checked against central finite differences and the
Lipschitz estimate is checked as an actual bound on sampled secants.
"""

import numpy as np
import pytest

from pathmpc.dynamics import DiffDriveModel, InputBounds
from pathmpc.geometry import ConvexPolytope
from pathmpc.paths import (
    ConstantPath,
    PathDomainError,
    PolylinePath,
    SinusoidPath,
    check_path_clearance,
    estimate_lipschitz_gp,
)

SINUSOID_LIPSCHITZ = 6.012984960164486


def test_sinusoid_endpoints_and_target():
    path = SinusoidPath()
    start = path.eval(0.0)
    end = path.eval(1.0)
    np.testing.assert_allclose(start[:2], [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(end[:2], [2.5, 0.0], atol=1e-12)
    # symmetric sinusoid: entry and exit headings are mirrored
    assert end[2] == pytest.approx(-start[2], abs=1e-12)


def test_sinusoid_derivative_matches_finite_differences():
    path = SinusoidPath()
    rng = np.random.default_rng(7)
    step = 1e-7
    for s in rng.uniform(step, 1.0 - step, 200):
        fd = (path.eval(s + step) - path.eval(s - step)) / (2 * step)
        np.testing.assert_allclose(path.derivative(s), fd, atol=1e-5)


def test_lift_is_steady_pair_on_path():
    path = SinusoidPath()
    for s in np.linspace(0.0, 1.0, 17):
        x_s, u_s = path.lift(s)
        np.testing.assert_allclose(x_s, path.eval(s), atol=1e-14)
        np.testing.assert_allclose(u_s, [0.0, 0.0], atol=1e-14)


def test_domain_errors_outside_unit_interval():
    path = SinusoidPath()
    for bad in (-0.01, 1.01, np.nan):
        with pytest.raises(PathDomainError):
            path.eval(bad)
        with pytest.raises(PathDomainError):
            path.derivative(bad)


def test_lipschitz_estimate_bounds_sampled_secants():
    rng = np.random.default_rng(8)
    for path in (SinusoidPath(), PolylinePath([[0, 0], [2, 0], [2, 2]], 0.1)):
        L = estimate_lipschitz_gp(path)
        for _ in range(2000):
            a, b = rng.uniform(0.0, 1.0, 2)
            if a == b:
                continue
            secant = np.linalg.norm(path.eval(a) - path.eval(b)) / abs(a - b)
            assert secant <= L + 1e-9


def test_lipschitz_golden_value_is_stable():
    assert estimate_lipschitz_gp(SinusoidPath()) == pytest.approx(
        SINUSOID_LIPSCHITZ, abs=1e-12
    )


def test_polyline_hits_endpoints_and_stays_near_segments():
    wps = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]]
    path = PolylinePath(wps, corner_radius=0.1)
    np.testing.assert_allclose(path.eval(0.0)[:2], wps[0], atol=1e-12)
    np.testing.assert_allclose(path.eval(1.0)[:2], wps[-1], atol=1e-12)
    # the blended path deviates from the sharp corner by at most the trim
    samples = path.eval(np.linspace(0.0, 1.0, 500))
    dist_to_legs = np.minimum(
        np.abs(samples[:, 1]) + np.maximum(0.0, samples[:, 0] - 2.0),
        np.abs(samples[:, 0] - 2.0) + np.maximum(0.0, -samples[:, 1]),
    )
    assert dist_to_legs.max() < 0.1


def test_polyline_position_and_heading_are_continuous():
    path = PolylinePath(
        [[0.0, 0.0], [1.0, 0.0], [1.5, 1.0], [0.5, 1.5]], corner_radius=0.08
    )
    s = np.linspace(0.0, 1.0, 4000)
    samples = path.eval(s)
    pos_gaps = np.linalg.norm(np.diff(samples[:, :2], axis=0), axis=1)
    heading_gaps = np.abs(np.diff(samples[:, 2]))
    L = estimate_lipschitz_gp(path)
    assert pos_gaps.max() <= L * (s[1] - s[0]) + 1e-12
    assert heading_gaps.max() <= L * (s[1] - s[0]) + 1e-12


def test_polyline_arc_length_parametrization_is_uniform():
    path = PolylinePath([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], corner_radius=0.1)
    s = np.linspace(0.0, 1.0, 2001)
    samples = path.eval(s)
    speeds = np.linalg.norm(np.diff(samples[:, :2], axis=0), axis=1) / (s[1] - s[0])
    # position speed is constant (= total length) except across the blend,
    # where the chord under-measures the arc slightly
    assert speeds.max() <= path.total_length + 1e-9
    assert speeds.min() >= path.total_length * 0.999


def test_polyline_derivative_matches_finite_differences():
    path = PolylinePath([[0.0, 0.0], [1.0, 0.2], [1.8, 1.4]], corner_radius=0.12)
    rng = np.random.default_rng(9)
    step = 1e-8
    for s in rng.uniform(step, 1.0 - step, 300):
        fd = (path.eval(s + step) - path.eval(s - step)) / (2 * step)
        np.testing.assert_allclose(path.derivative(s), fd, atol=1e-5)


def test_polyline_invalid_geometry_rejected():
    with pytest.raises(ValueError):
        PolylinePath([[0.0, 0.0]])
    with pytest.raises(ValueError):
        PolylinePath([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]], corner_radius=0.1)
    with pytest.raises(ValueError):
        # corner trim longer than the middle segment
        PolylinePath([[0.0, 0.0], [1.0, 0.0], [1.0, 0.05], [0.0, 0.05]], 0.2)
    with pytest.raises(ValueError):
        PolylinePath([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], corner_radius=0.0)


def test_constant_path_is_a_point():
    path = ConstantPath(np.array([1.0, 2.0, 0.3]))
    for s in (0.0, 0.5, 1.0):
        np.testing.assert_allclose(path.eval(s), [1.0, 2.0, 0.3], atol=1e-14)
        np.testing.assert_allclose(path.derivative(s), np.zeros(3), atol=1e-14)


def test_clearance_report_flags_colliding_path():
    path = PolylinePath([[0.0, 0.0], [2.0, 0.0]], corner_radius=0.1)
    blocker = ConvexPolytope.from_box(0.8, -0.5, 1.2, 0.5)
    report = check_path_clearance(
        path,
        [blocker],
        model=DiffDriveModel(0.2),
        input_bounds=InputBounds((-0.31, -1.9), (0.31, 1.9)),
        delta_sep=1e-3,
    )
    assert not report.ok
    assert report.min_margin < 0.0
    assert len(report.violations) > 0


def test_clearance_report_passes_clear_path():
    path = SinusoidPath()
    box = ConvexPolytope.from_box(1.0, -1.0, 1.5, 1.0)
    report = check_path_clearance(
        path,
        [box],
        model=DiffDriveModel(0.2),
        input_bounds=InputBounds((-0.31, -1.9), (0.31, 1.9)),
        delta_sep=1e-3,
    )
    assert report.ok
    assert report.min_margin > 0.0
    assert any("margin" in line for line in report.summary_lines())
