"""Continuous-time robot models and their RK4 discretization.

The controller works with discrete-time models x+ = F(x, u) obtained by
integrating a kinematic ODE over one sampling period with zero-order-hold
inputs.  Everything here is vectorized over leading batch dimensions so a
whole prediction horizon can be stepped in one call.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np


class IntegrationError(RuntimeError):
    """Raised when an integration step produces non-finite values."""


@dataclass(frozen=True)
class RobotState:
    """Planar pose (position and heading) of a wheeled robot."""

    px: float
    py: float
    theta: float

    def __post_init__(self):
        for name in ("px", "py", "theta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite state component {name!r}")

    def to_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta], dtype=float)

    @classmethod
    def from_array(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float)
        if x.shape != (3,):
            raise ValueError(f"expected shape (3,), got {x.shape}")
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class RobotInput:
    """Forward velocity and yaw rate command."""

    v: float
    omega: float

    def __post_init__(self):
        if not (np.isfinite(self.v) and np.isfinite(self.omega)):
            raise ValueError("non-finite input component")

    def to_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)

    @classmethod
    def from_array(cls, u) -> "RobotInput":
        u = np.asarray(u, dtype=float)
        if u.shape != (2,):
            raise ValueError(f"expected shape (2,), got {u.shape}")
        return cls(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class InputBounds:
    """Box bounds on the input vector, lower < upper componentwise."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-d and of equal length")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("input bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError("require lower < upper componentwise")
        object.__setattr__(self, "lower", tuple(float(a) for a in lo))
        object.__setattr__(self, "upper", tuple(float(a) for a in hi))

    @property
    def lower_array(self) -> np.ndarray:
        return np.array(self.lower, dtype=float)

    @property
    def upper_array(self) -> np.ndarray:
        return np.array(self.upper, dtype=float)

    def contains(self, u, margin: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(
            np.all(u >= self.lower_array + margin)
            and np.all(u <= self.upper_array - margin)
        )

    def clip(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lower_array, self.upper_array)


def _coerce(value) -> np.ndarray:
    if isinstance(value, (RobotState, RobotInput)):
        return value.to_array()
    return np.asarray(value, dtype=float)


def diff_drive_ode(state, inp) -> np.ndarray:
    """Unicycle kinematics xdot = (v cos th, v sin th, omega).

    `state` has trailing dimension 3, `inp` trailing dimension 2; both may
    carry matching batch dimensions.
    """
    x = _coerce(state)
    u = _coerce(inp)
    theta = x[..., 2]
    v = u[..., 0]
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (3,))
    out[..., 0] = v * np.cos(theta)
    out[..., 1] = v * np.sin(theta)
    out[..., 2] = u[..., 1]
    return out


def diff_drive_jacobians(state, inp):
    """Continuous-time Jacobians (d xdot/dx, d xdot/du) of the unicycle ODE."""
    x = _coerce(state)
    u = _coerce(inp)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    theta = np.broadcast_to(x[..., 2], batch)
    v = np.broadcast_to(u[..., 0], batch)
    A = np.zeros(batch + (3, 3))
    A[..., 0, 2] = -v * np.sin(theta)
    A[..., 1, 2] = v * np.cos(theta)
    B = np.zeros(batch + (3, 2))
    B[..., 0, 0] = np.cos(theta)
    B[..., 1, 0] = np.sin(theta)
    B[..., 2, 1] = 1.0
    return A, B


def rk4_step(ode, state, inp, h: float, substeps: int = 1) -> np.ndarray:
    """One zero-order-hold step of the classical Runge-Kutta scheme.

    With ``substeps > 1`` the interval `h` is split into equal classical
    steps, which tightens the local truncation error without changing the
    call signature downstream.  Raises IntegrationError on non-finite
    results.
    """
    if h <= 0.0:
        raise ValueError("step size must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = _coerce(state)
    u = _coerce(inp)
    dt = h / substeps
    for _ in range(substeps):
        k1 = ode(x, u)
        k2 = ode(x + 0.5 * dt * k1, u)
        k3 = ode(x + 0.5 * dt * k2, u)
        k4 = ode(x + dt * k3, u)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite value in RK4 step")
    return x


def rk4_jacobians(ode, ode_jacobians, state, inp, h: float, substeps: int = 1):
    """Exact Jacobians of `rk4_step` by chain rule through the stages.

    Returns (Jx, Ju) with shapes (..., n, n) and (..., n, m).  The chain
    rule is applied stage by stage, so these match the discrete map to
    machine precision instead of truncating at the ODE Jacobians.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = _coerce(state)
    u = _coerce(inp)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    n = x.shape[-1]
    m = u.shape[-1]
    eye = np.broadcast_to(np.eye(n), batch + (n, n))
    Jx = np.broadcast_to(np.eye(n), batch + (n, n)).copy()
    Ju = np.zeros(batch + (n, m))
    dt = h / substeps
    for _ in range(substeps):
        k1 = ode(x, u)
        x2 = x + 0.5 * dt * k1
        k2 = ode(x2, u)
        x3 = x + 0.5 * dt * k2
        k3 = ode(x3, u)
        x4 = x + dt * k3
        k4 = ode(x4, u)

        A1, B1 = ode_jacobians(x, u)
        A2, B2 = ode_jacobians(x2, u)
        A3, B3 = ode_jacobians(x3, u)
        A4, B4 = ode_jacobians(x4, u)

        dk1x = A1
        dk2x = A2 @ (eye + 0.5 * dt * dk1x)
        dk3x = A3 @ (eye + 0.5 * dt * dk2x)
        dk4x = A4 @ (eye + dt * dk3x)
        Sx = eye + (dt / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)

        dk1u = B1
        dk2u = B2 + 0.5 * dt * (A2 @ dk1u)
        dk3u = B3 + 0.5 * dt * (A3 @ dk2u)
        dk4u = B4 + dt * (A4 @ dk3u)
        Su = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)

        Jx = Sx @ Jx
        Ju = Sx @ Ju + Su
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Jx, Ju


class DynamicsModel(abc.ABC):
    """Discrete-time model interface used by the optimal control layer."""

    n: int
    m: int

    @abc.abstractmethod
    def step(self, x, u) -> np.ndarray:
        """Discrete map x+ = F(x, u), batched over leading dimensions."""

    @abc.abstractmethod
    def jacobians(self, x, u):
        """Jacobians (dF/dx, dF/du) of `step`, batched."""


class DiffDriveModel(DynamicsModel):
    """RK4-discretized differential-drive robot.

    Attributes
    ----------
    step_size : float
        Sampling period of the zero-order hold.
    substeps : int
        Internal RK4 substeps per sampling period.  The default keeps the
        local truncation error of one period below 1e-8 for inputs within
        typical ground-robot bounds.
    """

    n = 3
    m = 2

    def __init__(self, step_size: float, substeps: int = 4):
        if step_size <= 0.0:
            raise ValueError("step size must be positive")
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.step_size = float(step_size)
        self.substeps = int(substeps)

    def step(self, x, u) -> np.ndarray:
        return rk4_step(diff_drive_ode, x, u, self.step_size, self.substeps)

    def jacobians(self, x, u):
        return rk4_jacobians(
            diff_drive_ode, diff_drive_jacobians, x, u, self.step_size, self.substeps
        )

    def __repr__(self):
        return f"DiffDriveModel(step_size={self.step_size}, substeps={self.substeps})"
