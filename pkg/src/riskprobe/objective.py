"""Tracking utility and the soft-barrier safety penalty."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .risk import ALPHA_RISK


def _spd(m: np.ndarray) -> bool:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
        return False
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass
class ObjectiveWeights:
    """Objective weights. Defaults for the alphas, L, beta and tau follow the
    published simulation table; Q and R are engineering choices."""

    alpha1: float = 0.9
    alpha2: float = 0.9
    alpha3: float = 0.1
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.1, 0.5]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.5]))
    L: float = 4.0
    beta: float = 0.02
    alpha_risk: float = ALPHA_RISK
    tau: float = 5.0

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.Q.shape != (4, 4) or not _spd(self.Q):
            raise ValueError("Q must be a 4x4 SPD matrix")
        if self.R.shape != (2, 2) or not _spd(self.R):
            raise ValueError("R must be a 2x2 SPD matrix")
        for name in ("L", "beta", "tau", "alpha_risk"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alpha1", "alpha2", "alpha3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def replace(self, **changes) -> "ObjectiveWeights":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ObjectiveWeights(**kw)


def state_error(states: np.ndarray, reference: np.ndarray) -> np.ndarray:
    err = states - reference
    err[..., 2] = (err[..., 2] + np.pi) % (2 * np.pi) - np.pi
    return err


def utility_array(states: np.ndarray, inputs: np.ndarray, ref_states: np.ndarray,
                  Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Batched utility. ``states``/``ref_states`` are ``(..., T+1, 4)``,
    ``inputs`` ``(..., T, 2)``; the initial state is excluded."""
    err = state_error(states[..., 1:, :], ref_states[..., 1:, :])
    track = np.einsum("...ti,ij,...tj->...", err, Q, err)
    effort = np.einsum("...ti,ij,...tj->...", inputs, R, inputs)
    return -(track + effort)


def utility(traj: Trajectory, inputs, reference: Trajectory, Q, R) -> float:
    """Negative sum of quadratic tracking error and input effort."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
    if len(traj) != len(reference) or len(inputs) != len(traj) - 1:
        raise ValueError(f"shape mismatch: traj {len(traj)}, reference {len(reference)}, inputs {len(inputs)}")
    return float(utility_array(traj.states, inputs, reference.states, np.asarray(Q), np.asarray(R)))


def mahalanobis(offset, cov) -> np.ndarray:
    """sqrt(offset^T cov^{-1} offset) for 2x2 covariances (broadcasts)."""
    offset = np.asarray(offset, dtype=float)
    cov = np.asarray(cov, dtype=float)
    a, b, c, d = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 0], cov[..., 1, 1]
    det = a * d - b * c
    dx, dy = offset[..., 0], offset[..., 1]
    quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det
    return np.sqrt(np.maximum(quad, 0.0))


def safety_gap(ego_pos, pred_mean, pred_cov, L: float, risk) -> float:
    """Mahalanobis distance to a predicted mean minus ``L * risk``."""
    cov = np.asarray(pred_cov, dtype=float)
    if np.any(np.linalg.eigvalsh(cov) <= 0):
        raise np.linalg.LinAlgError("singular or indefinite prediction covariance")
    off = np.asarray(ego_pos, dtype=float) - np.asarray(pred_mean, dtype=float)
    return float(mahalanobis(off, cov) - L * np.asarray(risk))


def softplus_barrier(gaps, beta: float) -> np.ndarray:
    """Elementwise ``log(1 + exp(-beta * q))`` without overflow."""
    return np.logaddexp(0.0, -beta * np.asarray(gaps, dtype=float))


def safety_penalty(gaps, beta: float) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    return float(np.sum(softplus_barrier(gaps, beta)))
