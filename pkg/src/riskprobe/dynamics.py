"""Kinematic bicycle model with Euler discretization.

State is ``[x, y, theta, v]`` and input is ``[a, omega]``. The scalar
API (:func:`step`, :func:`rollout`) works on small value types; the array
API (:func:`rollout_array`) is what the planner and the agent policies use,
since they roll out whole batches of candidate control sequences at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DT = 0.1
HORIZON = 25
V_MAX = 15.0
A_BOUNDS = (-5.0, 3.0)
OMEGA_BOUNDS = (-0.5, 0.5)


class InvalidStateError(ValueError):
    """Raised when a state or input carries non-finite values."""


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "AgentState":
        x, y, theta, v = (float(c) for c in arr)
        return cls(x, y, theta, v)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.omega], dtype=float)


@dataclass(frozen=True)
class ControlBounds:
    """Box bounds on the inputs plus the speed cap used for clamping."""

    a_min: float = A_BOUNDS[0]
    a_max: float = A_BOUNDS[1]
    omega_min: float = OMEGA_BOUNDS[0]
    omega_max: float = OMEGA_BOUNDS[1]
    v_max: float = V_MAX

    def __post_init__(self):
        if not (self.a_min < self.a_max and self.omega_min < self.omega_max):
            raise ValueError("control bounds must satisfy min < max")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.a_min, self.omega_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.a_max, self.omega_max])

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


DEFAULT_BOUNDS = ControlBounds()


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, 4)
    dt: float = DT
    inputs: np.ndarray | None = field(default=None, repr=False)  # (T, 2)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[-1] != 4:
            raise ValueError(f"states must have 4 columns, got {self.states.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, idx: int) -> AgentState:
        return AgentState.from_array(self.states[idx])

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def horizon(self) -> int:
        return len(self) - 1


def _check_finite(*values: float) -> None:
    for val in values:
        if not math.isfinite(val):
            raise InvalidStateError(f"non-finite value {val!r}")


def step(state: AgentState, u: ControlInput, dt: float = DT,
         bounds: ControlBounds = DEFAULT_BOUNDS) -> AgentState:
    """Advance one Euler step of the kinematic bicycle model.

    Speed is clamped to ``[0, bounds.v_max]``. Inputs outside the box are
    rejected rather than silently clipped.
    """
    _check_finite(state.x, state.y, state.theta, state.v, u.a, u.omega)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not bounds.contains(u.as_array()):
        raise ValueError(f"input {u} outside bounds {bounds}")
    return AgentState(
        x=state.x + state.v * math.cos(state.theta) * dt,
        y=state.y + state.v * math.sin(state.theta) * dt,
        theta=state.theta + u.omega * dt,
        v=min(max(state.v + u.a * dt, 0.0), bounds.v_max),
    )


def rollout(state0: AgentState, inputs: Sequence[ControlInput], dt: float = DT,
            bounds: ControlBounds = DEFAULT_BOUNDS) -> Trajectory:
    states = [state0]
    for u in inputs:
        states.append(step(states[-1], u, dt, bounds))
    arr = np.array([s.as_array() for s in states])
    u_arr = np.array([u.as_array() for u in inputs]).reshape(-1, 2)
    return Trajectory(arr, dt, u_arr)


def rollout_array(state0: np.ndarray, inputs: np.ndarray, dt: float = DT,
                  v_max: float = V_MAX) -> np.ndarray:
    """Vectorized rollout.

    Args:
        state0: ``(..., 4)`` initial states.
        inputs: ``(..., T, 2)`` control sequences; leading dims broadcast
            against ``state0``.

    Returns:
        ``(..., T+1, 4)`` state trajectories including ``state0``.
    """
    state0 = np.asarray(state0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    T = inputs.shape[-2]
    lead = np.broadcast_shapes(state0.shape[:-1], inputs.shape[:-2])
    out = np.empty(lead + (T + 1, 4))
    out[..., 0, :] = state0
    for t in range(T):
        th = out[..., t, 2]
        v = out[..., t, 3]
        out[..., t + 1, 0] = out[..., t, 0] + v * np.cos(th) * dt
        out[..., t + 1, 1] = out[..., t, 1] + v * np.sin(th) * dt
        out[..., t + 1, 2] = th + inputs[..., t, 1] * dt
        out[..., t + 1, 3] = np.minimum(np.maximum(v + inputs[..., t, 0] * dt, 0.0), v_max)
    return out
