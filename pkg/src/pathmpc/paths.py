"""Reference paths p : [0,1] -> (px, py, theta) and their steady-state lift.

A path supplies the anchor targets for the tracking controller: `eval`
returns the configuration at progress s, `lift` returns the state/input
pair that holds that configuration (for kinematic pose models the input is
zero), and `lipschitz_gp` bounds how fast the lifted state moves with s.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynamicsModel, InputBounds
from .geometry import ConvexPolytope

_DOMAIN_TOL = 1e-9


class PathDomainError(ValueError):
    """Progress variable outside [0, 1]."""


class IdentityConfiguration:
    """Configuration map g for robots whose state already is the pose."""

    def __init__(self, dim: int = 3):
        self.dim = int(dim)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., : self.dim]

    def jacobian(self, x) -> np.ndarray:
        return np.eye(self.dim)


def _check_domain(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.logical_and(s >= -_DOMAIN_TOL, s <= 1.0 + _DOMAIN_TOL)
    if not np.all(inside):
        bad = np.atleast_1d(s)[np.atleast_1d(~inside)]
        raise PathDomainError(f"progress value outside [0, 1]: {bad[0]}")
    return np.clip(s, 0.0, 1.0)


class ReferencePath(abc.ABC):
    """Map from progress s in [0, 1] to a planar configuration."""

    input_dim = 2

    @abc.abstractmethod
    def eval(self, s) -> np.ndarray:
        """Configuration (px, py, theta); batched when s is an array."""

    @abc.abstractmethod
    def derivative(self, s) -> np.ndarray:
        """d eval / d s, same batching as eval."""

    def lift(self, s):
        """Steady (state, input) pair holding the configuration at s."""
        x = self.eval(s)
        u = np.zeros(np.shape(x)[:-1] + (self.input_dim,))
        return x, u

    @property
    def lipschitz_gp(self) -> float:
        if not hasattr(self, "_lipschitz_cache"):
            self._lipschitz_cache = estimate_lipschitz_gp(self, 1000)
        return self._lipschitz_cache


class SinusoidPath(ReferencePath):
    """Sine-shaped swerve: (L s, a sin(pi s), arctan(a pi cos(pi s) / L)).

    The heading is the tangent direction of the planar curve.
    """

    def __init__(self, length: float = 2.5, amplitude: float = 1.1):
        if length <= 0.0:
            raise ValueError("length must be positive")
        self.length = float(length)
        self.amplitude = float(amplitude)

    def eval(self, s):
        s = _check_domain(s)
        c = self.amplitude * np.pi / self.length
        out = np.empty(np.shape(s) + (3,))
        out[..., 0] = self.length * s
        out[..., 1] = self.amplitude * np.sin(np.pi * s)
        out[..., 2] = np.arctan(c * np.cos(np.pi * s))
        return out

    def derivative(self, s):
        s = _check_domain(s)
        c = self.amplitude * np.pi / self.length
        cos = np.cos(np.pi * s)
        out = np.empty(np.shape(s) + (3,))
        out[..., 0] = self.length
        out[..., 1] = self.amplitude * np.pi * cos
        out[..., 2] = -c * np.pi * np.sin(np.pi * s) / (1.0 + (c * cos) ** 2)
        return out


class ConstantPath(ReferencePath):
    """Degenerate path that stays at one configuration for every s."""

    def __init__(self, configuration):
        cfg = np.asarray(configuration, dtype=float)
        if cfg.shape != (3,):
            raise ValueError("configuration must have shape (3,)")
        self.configuration = cfg

    def eval(self, s):
        s = _check_domain(s)
        return np.broadcast_to(self.configuration, np.shape(s) + (3,)).copy()

    def derivative(self, s):
        s = _check_domain(s)
        return np.zeros(np.shape(s) + (3,))


@dataclass(frozen=True)
class _Piece:
    kind: str          # "seg" or "arc"
    length: float
    heading0: float    # heading at the start of the piece (unwrapped)
    point: np.ndarray  # seg: start point; arc: center
    vector: np.ndarray # seg: unit direction; arc: (entry angle, signed sweep rate 1/R)
    radius: float = 0.0


class PolylinePath(ReferencePath):
    """Arc-length parametrized polyline with circular corner blends.

    Corners are replaced by arcs of `corner_radius` tangent to both
    segments, so position and heading are continuous in s.  Headings are
    accumulated (not wrapped to (-pi, pi]) so theta is itself Lipschitz.
    """

    def __init__(self, waypoints, corner_radius: float = 0.1):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("waypoints must be a (k, 2) array-like")
        keep = [pts[0]]
        for p in pts[1:]:
            if np.linalg.norm(p - keep[-1]) > 1e-12:
                keep.append(p)
        pts = np.array(keep)
        if len(pts) < 2:
            raise ValueError("need at least 2 distinct waypoints")
        if corner_radius < 0.0:
            raise ValueError("corner_radius must be non-negative")
        self.waypoints = pts
        self.corner_radius = float(corner_radius)
        self._pieces = self._build_pieces(pts, float(corner_radius))
        lengths = np.array([p.length for p in self._pieces])
        self._cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self.total_length = float(self._cum[-1])
        if self.total_length <= 0.0:
            raise ValueError("path has zero length")

    @staticmethod
    def _build_pieces(pts, radius):
        k = len(pts)
        dirs = pts[1:] - pts[:-1]
        seg_len = np.linalg.norm(dirs, axis=1)
        dirs = dirs / seg_len[:, None]
        turns = np.zeros(k - 1)  # turn at the corner entering segment i
        for i in range(1, k - 1):
            d0, d1 = dirs[i - 1], dirs[i]
            turns[i] = np.arctan2(d0[0] * d1[1] - d0[1] * d1[0], d0 @ d1)
            if abs(abs(turns[i]) - np.pi) < 1e-9:
                raise ValueError(f"path reverses direction at waypoint {i}")
            if abs(turns[i]) > 1e-9 and radius <= 0.0:
                raise ValueError("corner_radius must be positive for turning corners")
        trims = np.where(np.abs(turns) > 1e-9, radius * np.tan(np.abs(turns) / 2.0), 0.0)
        # room check: segment i loses trims[i] at its start and trims[i+1] at its end
        trim_end = np.concatenate([trims[1:], [0.0]])
        room = seg_len - trims - trim_end
        if np.any(room < -1e-12):
            bad = int(np.argmin(room))
            raise ValueError(
                f"corner_radius {radius} too large for segment {bad} "
                f"(length {seg_len[bad]:.6g})"
            )
        pieces = []
        heading = float(np.arctan2(dirs[0][1], dirs[0][0]))
        for i in range(k - 1):
            if abs(turns[i]) > 1e-9:
                # blend arc replacing corner i (between segments i-1 and i)
                sweep = turns[i]
                corner = pts[i]
                entry = corner - trims[i] * dirs[i - 1]
                left_normal = np.array([-dirs[i - 1][1], dirs[i - 1][0]])
                center = entry + radius * np.sign(sweep) * left_normal
                entry_angle = float(np.arctan2(entry[1] - center[1], entry[0] - center[0]))
                pieces.append(
                    _Piece(
                        kind="arc",
                        length=radius * abs(sweep),
                        heading0=heading,
                        point=center,
                        vector=np.array([entry_angle, np.sign(sweep) / radius]),
                        radius=radius,
                    )
                )
                heading += sweep
            start = pts[i] + trims[i] * dirs[i]
            length = seg_len[i] - trims[i] - trim_end[i]
            if length > 1e-12:
                pieces.append(
                    _Piece(kind="seg", length=length, heading0=heading, point=start, vector=dirs[i])
                )
        return pieces

    def eval(self, s):
        s = _check_domain(s)
        scalar = np.ndim(s) == 0
        sig = np.atleast_1d(s) * self.total_length
        idx = np.clip(np.searchsorted(self._cum[1:-1], sig, side="right"), 0, len(self._pieces) - 1)
        out = np.empty(sig.shape + (3,))
        for i, piece in enumerate(self._pieces):
            mask = idx == i
            if not mask.any():
                continue
            local = sig[mask] - self._cum[i]
            if piece.kind == "seg":
                out[mask, 0] = piece.point[0] + local * piece.vector[0]
                out[mask, 1] = piece.point[1] + local * piece.vector[1]
                out[mask, 2] = piece.heading0
            else:
                ang = piece.vector[0] + piece.vector[1] * local
                out[mask, 0] = piece.point[0] + piece.radius * np.cos(ang)
                out[mask, 1] = piece.point[1] + piece.radius * np.sin(ang)
                out[mask, 2] = piece.heading0 + piece.vector[1] * local
        return out[0] if scalar else out.reshape(np.shape(s) + (3,))

    def derivative(self, s):
        s = _check_domain(s)
        scalar = np.ndim(s) == 0
        sig = np.atleast_1d(s) * self.total_length
        idx = np.clip(np.searchsorted(self._cum[1:-1], sig, side="right"), 0, len(self._pieces) - 1)
        out = np.empty(sig.shape + (3,))
        for i, piece in enumerate(self._pieces):
            mask = idx == i
            if not mask.any():
                continue
            local = sig[mask] - self._cum[i]
            if piece.kind == "seg":
                out[mask, 0] = piece.vector[0]
                out[mask, 1] = piece.vector[1]
                out[mask, 2] = 0.0
            else:
                heading = piece.heading0 + piece.vector[1] * local
                out[mask, 0] = np.cos(heading)
                out[mask, 1] = np.sin(heading)
                out[mask, 2] = piece.vector[1]
        out *= self.total_length
        return out[0] if scalar else out.reshape(np.shape(s) + (3,))


def estimate_lipschitz_gp(path: ReferencePath, grid: int = 1000) -> float:
    """Numerical Lipschitz constant of the steady-state lift.

    Maximizes the difference quotient of lift(s).state over a uniform
    grid and inflates by a safety factor of 1.2 to cover the sampling
    error.  `grid` must be at least 100.
    """
    if grid < 100:
        raise ValueError("grid must be >= 100")
    s = np.linspace(0.0, 1.0, int(grid))
    states, _ = path.lift(s)
    quot = np.linalg.norm(np.diff(states, axis=0), axis=1) / np.diff(s)
    return float(quot.max() * 1.2)


@dataclass(frozen=True)
class ClearanceViolation:
    s: float
    kind: str     # "collision", "steady", "input"
    value: float  # offending margin / residual
    detail: str = ""


@dataclass
class ClearanceReport:
    violations: list = field(default_factory=list)
    samples: int = 0
    min_margin: float = float("inf")

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary_lines(self):
        lines = [
            f"clearance samples = {self.samples}",
            f"min obstacle margin = {self.min_margin:.6g}",
            f"violations = {len(self.violations)}",
        ]
        for v in self.violations[:20]:
            lines.append(f"  s={v.s:.6f} {v.kind}: {v.value:.6g} {v.detail}".rstrip())
        if len(self.violations) > 20:
            lines.append(f"  ... {len(self.violations) - 20} more")
        return lines


def check_path_clearance(
    path: ReferencePath,
    obstacles,
    samples: int = 1000,
    *,
    model: DynamicsModel | None = None,
    input_bounds: InputBounds | None = None,
    delta_sep: float = 1e-3,
) -> ClearanceReport:
    """Sampled check that the lifted path is a valid anchor set.

    Each sampled lift(s) must be collision-free with margin >= delta_sep
    against every obstacle; when `model` / `input_bounds` are supplied the
    lifted pair must also be a discrete fixed point and lie strictly
    inside the input bounds.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    s_grid = np.linspace(0.0, 1.0, int(samples))
    states, inputs = path.lift(s_grid)
    report = ClearanceReport(samples=int(samples))
    positions = states[:, :2]
    for obs in obstacles:
        margins = obs.max_margin(positions)
        report.min_margin = min(report.min_margin, float(margins.min()))
        for i in np.nonzero(margins < delta_sep)[0]:
            report.violations.append(
                ClearanceViolation(
                    s=float(s_grid[i]),
                    kind="collision",
                    value=float(margins[i]),
                    detail=f"margin below {delta_sep}",
                )
            )
    if model is not None:
        nxt = model.step(states, inputs)
        resid = np.linalg.norm(nxt - states, axis=1)
        for i in np.nonzero(resid > 1e-9)[0]:
            report.violations.append(
                ClearanceViolation(
                    s=float(s_grid[i]), kind="steady", value=float(resid[i]),
                    detail="lift is not a fixed point",
                )
            )
    if input_bounds is not None:
        lo = input_bounds.lower_array
        hi = input_bounds.upper_array
        interior = np.logical_and(inputs > lo, inputs < hi).all(axis=1)
        for i in np.nonzero(~interior)[0]:
            report.violations.append(
                ClearanceViolation(
                    s=float(s_grid[i]), kind="input", value=float(np.abs(inputs[i]).max()),
                    detail="steady input not strictly inside bounds",
                )
            )
    report.violations.sort(key=lambda v: v.s)
    return report
