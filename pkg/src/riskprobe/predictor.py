"""Three-mode Gaussian-mixture predictor built from lane geometry.

A lightweight lane-keeping predictor: each agent gets a constant-velocity
mode, a snap-to-current-lane mode and a snap-to-adjacent-lane mode (or an
in-lane braking mode when the lane has no neighbour). Mode likelihoods come
from replaying each hypothesis over the last few observations and scoring the
residuals under a Gaussian noise model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dynamics import DT, AgentState, Trajectory
from .lanes import Lane, LaneMap

N_MODES = 3


class InsufficientHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    cov0: float = 0.1            # m^2, isotropic covariance at t = 0
    cov_growth: float = 0.3      # m^2/s
    window: int = 5              # observations used for likelihood scoring
    sigma_obs: float = 0.3       # m
    tau_keep: float = 1.0        # s, lateral relaxation toward lane center
    lane_change_speed: float = 0.7  # m/s lateral speed of the adjacent-lane mode
    brake_decel: float = 2.0     # m/s^2 for the in-lane braking mode
    ego_sigma0: float = 0.25     # m
    ego_sigma_rate: float = 0.1  # m/s

    def __post_init__(self):
        if self.cov0 <= 0 or self.cov_growth < 0:
            raise ValueError("covariance parameters must satisfy cov0 > 0, cov_growth >= 0")
        if self.window < 1 or self.sigma_obs <= 0:
            raise ValueError("window >= 1 and sigma_obs > 0 required")
        if self.ego_sigma0 <= 0 or self.ego_sigma_rate < 0:
            raise ValueError("ego_sigma0 > 0 and ego_sigma_rate >= 0 required")


@dataclass
class ModePrediction:
    mean: np.ndarray          # (T, 2) positions for t = 1..T
    covariances: np.ndarray   # (T, 2, 2)
    likelihood: float
    label: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.mean.ndim != 2 or self.mean.shape[1] != 2:
            raise ValueError("mean must be (T, 2)")
        if self.covariances.shape != (len(self.mean), 2, 2):
            raise ValueError("covariances must be (T, 2, 2)")
        if not 0.0 <= self.likelihood <= 1.0:
            raise ValueError(f"likelihood {self.likelihood} outside [0, 1]")

    @property
    def horizon(self) -> int:
        return len(self.mean)


@dataclass
class PredictionSet:
    """Per-agent mode predictions with stacked array views."""

    modes: dict[str, list[ModePrediction]] = field(default_factory=dict)

    def __post_init__(self):
        horizons = set()
        for aid, mps in self.modes.items():
            if len(mps) == 0:
                raise ValueError(f"agent {aid}: no modes")
            total = sum(m.likelihood for m in mps)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"agent {aid}: likelihoods sum to {total}")
            horizons.update(m.horizon for m in mps)
        if len(horizons) > 1:
            raise ValueError(f"inconsistent horizons {sorted(horizons)}")
        if len({len(m) for m in self.modes.values()}) > 1:
            raise ValueError("every agent must have the same number of modes")

    @property
    def agent_ids(self) -> list[str]:
        return list(self.modes)

    @property
    def horizon(self) -> int:
        return next(iter(self.modes.values()))[0].horizon if self.modes else 0

    @property
    def n_modes(self) -> int:
        return len(next(iter(self.modes.values()))) if self.modes else 0

    def __len__(self) -> int:
        return len(self.modes)

    def arrays(self):
        """``(means (N,K,T,2), covs (N,K,T,2,2), probs (N,K))``."""
        if not self.modes:
            return np.zeros((0, 0, 0, 2)), np.zeros((0, 0, 0, 2, 2)), np.zeros((0, 0))
        means = np.array([[m.mean for m in mps] for mps in self.modes.values()])
        covs = np.array([[m.covariances for m in mps] for mps in self.modes.values()])
        probs = np.array([[m.likelihood for m in mps] for mps in self.modes.values()])
        return means, covs, probs


def covariance_schedule(T: int, dt: float = DT, cfg: PredictorConfig = PredictorConfig()) -> np.ndarray:
    t = np.arange(1, T + 1) * dt
    return (cfg.cov0 + cfg.cov_growth * t)[:, None, None] * np.eye(2)


def _lane_path(lane: Lane, s0: float, d0: float, speed: float, d_target: float,
               n: int, dt: float, cfg: PredictorConfig, decel: float = 0.0) -> np.ndarray:
    """Positions for steps 1..n moving along ``lane`` while the lateral offset
    relaxes toward ``d_target``."""
    k = np.arange(1, n + 1)
    # speed used on step i is the speed before that step's deceleration
    v = np.maximum(speed - decel * dt * (k - 1), 0.0)
    s = s0 + np.cumsum(v) * dt
    if d_target == 0.0:
        d = d0 * np.exp(-dt / cfg.tau_keep) ** k
    else:
        gap = d_target - d0
        d = d0 + np.sign(gap) * np.minimum(abs(gap), cfg.lane_change_speed * dt * k)
    return lane.centerline.point_at(s, d)


def _cv_path(state: AgentState, n: int, dt: float) -> np.ndarray:
    vel = state.v * np.array([np.cos(state.theta), np.sin(state.theta)])
    return state.position + np.arange(1, n + 1)[:, None] * dt * vel


def _hypotheses(state: AgentState, lane_map: LaneMap, n: int, dt: float,
                cfg: PredictorConfig):
    """Mode paths (n, 2) for the three hypotheses from ``state``, or None off-lane."""
    hit = lane_map.nearest_lane(state.position, state.theta)
    if hit is None:
        return None
    lane, s0, d0 = hit
    speed = state.v * np.cos(state.theta - float(lane.centerline.heading_at(s0)))
    speed = max(speed, 0.0)
    cv = _cv_path(state, n, dt)
    keep = _lane_path(lane, s0, d0, speed, 0.0, n, dt, cfg)
    adj = lane_map.adjacent_lanes(lane, state.position)
    if adj:
        # neighbour on the side the agent already leans toward wins ties
        adj.sort(key=lambda item: (abs(item[2]), -np.sign(d0) * np.sign(-item[2])))
        other, _, d_other = adj[0]
        # target lane centre expressed as an offset in the current lane frame
        target = d0 - d_other
        third = _lane_path(lane, s0, d0, speed, target, n, dt, cfg)
        label3 = f"adjacent:{other.lane_id}"
    else:
        third = _lane_path(lane, s0, d0, speed, 0.0, n, dt, cfg, decel=cfg.brake_decel)
        label3 = "brake"
    return [cv, keep, third], ["constant_velocity", f"lane:{lane.lane_id}", label3]


def mode_likelihoods(history: Sequence[AgentState], lane_map: LaneMap, dt: float = DT,
                     cfg: PredictorConfig = PredictorConfig()) -> np.ndarray | None:
    """Softmax of negative residual energy for each hypothesis replayed over the window."""
    H = min(cfg.window, len(history) - 1)
    start = history[-H - 1]
    # velocity at the window start from finite differences when available
    if len(history) >= H + 2:
        prev = history[-H - 2]
        vx = (start.x - prev.x) / dt
        vy = (start.y - prev.y) / dt
        start = AgentState(start.x, start.y, float(np.arctan2(vy, vx)) if np.hypot(vx, vy) > 1e-6 else start.theta,
                           float(np.hypot(vx, vy)))
    hyp = _hypotheses(start, lane_map, H, dt, cfg)
    if hyp is None:
        return None
    observed = np.array([[s.x, s.y] for s in history[-H:]])
    energy = np.array([np.sum((path - observed) ** 2) for path in hyp[0]]) / (2 * cfg.sigma_obs ** 2)
    logits = -energy
    w = np.exp(logits - logits.max())
    return w / w.sum()


def predict(agent_history: Sequence[AgentState], lane_map: LaneMap, T: int,
            dt: float = DT, cfg: PredictorConfig = PredictorConfig()) -> list[ModePrediction]:
    """Predict three Gaussian modes for one agent from its observed history."""
    if len(agent_history) < 2:
        raise InsufficientHistoryError("predictor needs at least two observed states")
    state = agent_history[-1]
    covs = covariance_schedule(T, dt, cfg)
    hyp = _hypotheses(state, lane_map, T, dt, cfg)
    probs = mode_likelihoods(agent_history, lane_map, dt, cfg) if hyp is not None else None
    if hyp is None or probs is None:
        cv = _cv_path(state, T, dt)
        return [ModePrediction(cv, covs, 1.0, "constant_velocity"),
                ModePrediction(cv.copy(), covs.copy(), 0.0, "constant_velocity"),
                ModePrediction(cv.copy(), covs.copy(), 0.0, "constant_velocity")]
    paths, labels = hyp
    probs = probs / probs.sum()
    return [ModePrediction(p, covs.copy(), float(w), lab) for p, w, lab in zip(paths, probs, labels)]


def predict_all(histories: Mapping[str, Sequence[AgentState]], lane_map: LaneMap, T: int,
                dt: float = DT, cfg: PredictorConfig = PredictorConfig()) -> PredictionSet:
    return PredictionSet({aid: predict(h, lane_map, T, dt, cfg) for aid, h in histories.items()})


def ego_distribution(reference: Trajectory, cfg: PredictorConfig = PredictorConfig()):
    """Gaussian position marginals centred on the reference.

    Returns ``(means (n, 2), covs (n, 2, 2))`` for every reference state, the
    standard deviation growing linearly from ``ego_sigma0``.
    """
    if len(reference) == 0:
        raise ValueError("empty reference")
    t = np.arange(len(reference)) * reference.dt
    sigma = cfg.ego_sigma0 + cfg.ego_sigma_rate * t
    covs = (sigma ** 2)[:, None, None] * np.eye(2)
    return reference.positions.copy(), covs
