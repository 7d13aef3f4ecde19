"""Behavior inference: reward features, Boltzmann mode likelihoods, particle
beliefs over behavior weights, and KL information gain."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .dynamics import DT, V_MAX, AgentState
from .lanes import Lane, LaneMap
from .predictor import ModePrediction

logger = logging.getLogger(__name__)

AGGRESSIVE = (0.5, 0.25, 0.25)
DEFENSIVE = (0.2, 0.6, 0.2)
PRIOR_GUESS = (0.33, 0.33, 0.33)
PRIOR_VAR = 0.05
N_PARTICLES = 2000
D_SAT = 10.0


class DegeneratePriorError(ValueError):
    pass


@dataclass(frozen=True)
class BehaviorParams:
    """Weights on (velocity matching, distance to others, lane keeping)."""

    phi: tuple[float, float, float]

    def __post_init__(self):
        phi = tuple(float(p) for p in self.phi)
        if len(phi) != 3:
            raise ValueError("phi must have three components")
        if not all(np.isfinite(phi)) or min(phi) < 0:
            raise ValueError(f"phi must be finite and non-negative, got {phi}")
        object.__setattr__(self, "phi", phi)

    def as_array(self) -> np.ndarray:
        return np.array(self.phi)


@dataclass(frozen=True)
class FeatureModel:
    """What the ego assumes about an agent's reward features."""

    v_desired: float = 8.0
    d_sat: float = D_SAT
    dt: float = DT


@dataclass
class FeatureTrace:
    """Per-step feature rows, already scaled by the step length."""

    values: np.ndarray  # (T, 3)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[-1] != 3:
            raise ValueError("features must have 3 columns")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features must be finite")

    def total(self) -> np.ndarray:
        return self.values.sum(axis=0)


def path_speeds(start, positions: np.ndarray, dt: float) -> np.ndarray:
    """Speeds implied by consecutive positions, first step measured from ``start``."""
    pts = np.concatenate([np.asarray(start, dtype=float)[None], positions], axis=0)
    step = np.diff(pts, axis=0)
    return np.hypot(step[:, 0], step[:, 1]) / dt


def lane_offsets(lane: Lane | None, positions: np.ndarray) -> np.ndarray:
    if lane is None:
        return np.zeros(positions.shape[:-1])
    _, d, _ = lane.centerline.project(positions)
    return np.abs(d)


def feature_trace(positions: np.ndarray, start, ego_positions: np.ndarray,
                  lane: Lane | None, model: FeatureModel = FeatureModel()) -> FeatureTrace:
    """Features of one candidate agent path against one ego path."""
    positions = np.asarray(positions, dtype=float)
    ego_positions = np.asarray(ego_positions, dtype=float)
    v = path_speeds(start, positions, model.dt)
    dist = np.minimum(np.linalg.norm(positions - ego_positions, axis=-1), model.d_sat)
    off = lane_offsets(lane, positions)
    return FeatureTrace(model.dt * np.stack([-np.abs(v - model.v_desired), dist, -off], axis=-1))


def agent_reward(features: FeatureTrace, phi) -> float:
    phi = phi.as_array() if isinstance(phi, BehaviorParams) else np.asarray(phi, dtype=float)
    return float(np.sum(features.values @ phi))


def boltzmann_likelihoods(rewards, prior_p) -> np.ndarray:
    """Prior-anchored Boltzmann weights ``p_k exp(R_k) / sum_j p_j exp(R_j)``."""
    rewards = np.asarray(rewards, dtype=float)
    prior_p = np.asarray(prior_p, dtype=float)
    if prior_p.shape[-1] < 1:
        raise ValueError("need at least one mode")
    if np.any(prior_p < 0) or np.any(np.sum(prior_p, axis=-1) <= 0):
        raise DegeneratePriorError("prior likelihoods must be non-negative with positive mass")
    w = prior_p * np.exp(rewards - np.max(rewards, axis=-1, keepdims=True))
    total = np.sum(w, axis=-1, keepdims=True)
    if np.all(total > 0):
        out = w / total
    else:
        with np.errstate(divide="ignore"):
            out = np.exp(log_boltzmann(rewards, np.log(prior_p)))
    # uniform rewards leave a normalized prior untouched; skip the division round-off
    keep = np.all(rewards == rewards[..., :1], axis=-1, keepdims=True) & \
        (np.abs(np.sum(prior_p, axis=-1, keepdims=True) - 1.0) <= 1e-12)
    return np.where(keep, prior_p, out) if np.any(keep) else out


def log_boltzmann(rewards: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """Log of :func:`boltzmann_likelihoods` along the last axis."""
    logits = log_prior + rewards
    return logits - logsumexp(logits, axis=-1, keepdims=True)


@dataclass
class BeliefParticles:
    particles: np.ndarray  # (M, 3)
    weights: np.ndarray    # (M,)
    prior_mean: np.ndarray = field(default_factory=lambda: np.array(PRIOR_GUESS))
    prior_cov: np.ndarray = field(default_factory=lambda: PRIOR_VAR * np.eye(3))
    degenerate: bool = False

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[1] != 3:
            raise ValueError("particles must be (M, 3)")
        if len(self.weights) != len(self.particles):
            raise ValueError("one weight per particle required")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    @classmethod
    def from_prior(cls, mean=PRIOR_GUESS, cov=None, n: int = N_PARTICLES,
                   rng: np.random.Generator | None = None) -> "BeliefParticles":
        rng = np.random.default_rng() if rng is None else rng
        mean = np.asarray(mean, dtype=float)
        cov = PRIOR_VAR * np.eye(3) if cov is None else np.asarray(cov, dtype=float)
        # reflect at zero to keep weights non-negative
        pts = np.abs(rng.multivariate_normal(mean, cov, size=n))
        return cls(pts, np.full(n, 1.0 / n), mean, cov)

    def __len__(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def with_weights(self, weights: np.ndarray, degenerate: bool = False) -> "BeliefParticles":
        return BeliefParticles(self.particles, weights, self.prior_mean, self.prior_cov, degenerate)

    def reweighted(self, log_lik: np.ndarray) -> "BeliefParticles":
        """Multiply weights by ``exp(log_lik)`` and renormalize, resetting to
        uniform (flagged) when the product underflows."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights) + log_lik
        if not np.any(np.isfinite(logw)):
            logger.warning("belief weights underflowed; resetting to uniform")
            return self.with_weights(np.full(len(self), 1.0 / len(self)), degenerate=True)
        logw = logw - np.max(logw)
        w = np.exp(logw)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            return self.with_weights(np.full(len(self), 1.0 / len(self)), degenerate=True)
        return self.with_weights(w / total)

    def subsample(self, n: int) -> "BeliefParticles":
        """Deterministic systematic subsample with equal weights."""
        if n >= len(self):
            return self
        idx = systematic_indices(self.weights, n, offset=0.5)
        return BeliefParticles(self.particles[idx], np.full(n, 1.0 / n), self.prior_mean, self.prior_cov)


def systematic_indices(weights: np.ndarray, n: int, offset: float) -> np.ndarray:
    positions = (np.arange(n) + offset) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions)


# ---------------------------------------------------------------------------
# mode features against ego candidates


@dataclass
class AgentModeFeatures:
    """Ego-independent parts of the per-mode features for one agent.

    The distance-to-ego column is the only one that depends on the ego plan,
    so it is evaluated separately by :meth:`distance_feature`.
    """

    means: np.ndarray       # (K, T, 2)
    probs: np.ndarray       # (K,)
    velocity: np.ndarray    # (K,) dt-scaled sums
    lane: np.ndarray        # (K,) dt-scaled sums
    model: FeatureModel

    @classmethod
    def build(cls, modes: Sequence[ModePrediction], start, lane: Lane | None,
              model: FeatureModel = FeatureModel()) -> "AgentModeFeatures":
        means = np.array([m.mean for m in modes])
        probs = np.array([m.likelihood for m in modes])
        vel = np.array([-np.abs(path_speeds(start, m, model.dt) - model.v_desired).sum() for m in means])
        lane_f = np.array([-lane_offsets(lane, m).sum() for m in means])
        return cls(means, probs, model.dt * vel, model.dt * lane_f, model)

    def distance_feature(self, ego_positions: np.ndarray) -> np.ndarray:
        """``(..., K)`` dt-scaled saturated distance sums for ego paths ``(..., T, 2)``."""
        ego = np.asarray(ego_positions, dtype=float)[..., None, :, :]
        d = np.sqrt(np.sum((self.means - ego) ** 2, axis=-1))
        return self.model.dt * np.minimum(d, self.model.d_sat).sum(axis=-1)

    def features(self, ego_positions: np.ndarray) -> np.ndarray:
        """Full ``(..., K, 3)`` feature totals."""
        dist = self.distance_feature(ego_positions)
        vel = np.broadcast_to(self.velocity, dist.shape)
        lane = np.broadcast_to(self.lane, dist.shape)
        return np.stack([vel, dist, lane], axis=-1)


def particle_log_likelihoods(particles: np.ndarray, feats: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Log Boltzmann likelihood of each mode for each particle.

    ``particles`` is ``(M, 3)``, ``feats`` ``(..., K, 3)``; returns ``(..., M, K)``.
    """
    rewards = np.einsum("mi,...ki->...mk", particles, feats)
    with np.errstate(divide="ignore"):
        log_prior = np.log(probs)
    return log_boltzmann(rewards, log_prior)


def hypothetical_posterior(belief: BeliefParticles, mode_k: int, ego_candidate,
                           predictions: Sequence[ModePrediction], lane_map: LaneMap | None = None,
                           *, start=None, model: FeatureModel = FeatureModel(),
                           lane: Lane | None = None) -> BeliefParticles:
    """Belief after conditioning on the agent taking mode ``mode_k``.

    ``ego_candidate`` is a :class:`Trajectory` or a ``(T[+1], 2+)`` array of ego
    states/positions aligned with the prediction steps.
    """
    ego = _ego_positions(ego_candidate, predictions[0].horizon)
    if start is None:
        start = 2 * predictions[0].mean[0] - predictions[0].mean[1] if predictions[0].horizon > 1 \
            else predictions[0].mean[0]
    if lane is None and lane_map is not None:
        hit = lane_map.nearest_lane(predictions[0].mean[0])
        lane = hit[0] if hit else None
    amf = AgentModeFeatures.build(predictions, start, lane, model)
    logp = particle_log_likelihoods(belief.particles, amf.features(ego), amf.probs)
    return belief.reweighted(logp[:, mode_k])


def _ego_positions(ego, T: int) -> np.ndarray:
    arr = ego.states if hasattr(ego, "states") else np.asarray(ego, dtype=float)
    arr = arr[..., :2]
    if arr.shape[-2] == T + 1:
        arr = arr[..., 1:, :]
    if arr.shape[-2] != T:
        raise ValueError(f"ego path has {arr.shape[-2]} steps, predictions {T}")
    return arr


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Discrete KL(p || q) over a shared support; zero-mass terms of p are skipped."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(max(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))), 0.0))


def info_gain(belief: BeliefParticles, posterior_k: BeliefParticles, risk_profile, agent: str,
              mode_k: int, tau: float) -> float:
    """Risk-gated KL(prior || hypothetical posterior) in nats."""
    if np.max(risk_profile[(agent, mode_k)]) > tau:
        return 0.0
    if len(belief) != len(posterior_k):
        raise ValueError("beliefs must share particle support")
    return kl_divergence(belief.weights, posterior_k.weights)


def total_info(gains) -> float:
    gains = np.asarray(gains, dtype=float)
    if gains.size < 1:
        raise ValueError("need at least one mode gain")
    return float(np.mean(gains))


def stacked_info(weights: np.ndarray, particles: np.ndarray, features: Sequence[AgentModeFeatures],
                 ego_positions: np.ndarray, gated: np.ndarray) -> np.ndarray:
    """Per-agent mean over modes of gated KL(b || b'_k) for a batch of ego paths.

    ``weights`` is ``(N, M)``, ``particles`` ``(N, M, 3)``, ``gated`` ``(N, K)``
    and ``features`` holds one :class:`AgentModeFeatures` per agent, all with
    the same horizon and mode count. Uses ``KL = log Z_k - sum_m w_m log p_hat_mk``
    with ``Z_k = sum_m w_m p_hat_mk``, equivalent to the per-particle ratio
    form. Returns shape ``ego_positions.shape[:-2] + (N,)``.
    """
    model = features[0].model
    means = np.stack([f.means for f in features])                # (N, K, T, 2)
    probs = np.stack([f.probs for f in features])                # (N, K)
    ego = np.asarray(ego_positions, dtype=float)[..., None, None, :, :]
    d = np.sqrt(np.sum((means - ego) ** 2, axis=-1))
    dist = model.dt * np.minimum(d, model.d_sat).sum(axis=-1)    # (..., N, K)
    # only the distance feature depends on the ego path
    static = np.stack([np.stack([f.velocity, np.zeros_like(f.velocity), f.lane], axis=-1) for f in features])
    base = np.matmul(particles, np.swapaxes(static, -1, -2)) + np.log(np.maximum(probs, 1e-300))[:, None, :]
    logits = base + particles[..., 1:2] * dist[..., None, :]     # (..., N, M, K)
    top = logits[..., 0]
    for k in range(1, logits.shape[-1]):
        top = np.maximum(top, logits[..., k])
    logits -= top[..., None]
    e = np.exp(logits)
    norm = e.sum(axis=-1, keepdims=True)
    p_hat = e / norm
    log_p_hat = logits - np.log(norm)
    w = weights[..., None, :]                                    # (N, 1, M)
    z = np.matmul(w, p_hat)[..., 0, :]                           # (..., N, K)
    cross = np.matmul(w, log_p_hat)[..., 0, :]
    kl = np.maximum(np.log(z) - cross, 0.0)
    usable = (~np.asarray(gated, dtype=bool)) & (probs > 0)
    kl = np.where(usable, kl, 0.0)
    return kl.mean(axis=-1)


def batched_info(weights: np.ndarray, particles: np.ndarray, amf: AgentModeFeatures,
                 ego_positions: np.ndarray, gated: np.ndarray) -> np.ndarray:
    """Mean over modes of gated KL(b || b'_k) for one agent and a batch of
    ego paths; returns shape ``ego_positions.shape[:-2]``."""
    out = stacked_info(np.asarray(weights)[None], np.asarray(particles)[None], [amf],
                       ego_positions, np.asarray(gated)[None])
    return out[..., 0]


# ---------------------------------------------------------------------------
# assimilation of observed motion


@dataclass(frozen=True)
class ObservationModel:
    """Longitudinal response hypotheses used when assimilating an observed step."""

    accelerations: tuple[float, ...] = (-2.0, 0.0, 1.5)
    sigma_accel: float = 1.0     # m/s^2
    horizon: int = 20            # steps of each hypothesis scored by the reward model
    resample_ratio: float = 0.5
    jitter_var: float = 1e-4
    forgetting: float = 0.95     # weights are raised to this power before each update
    rejuvenation: float = 0.05   # fraction of particles redrawn from the prior on resampling


def _retime(path: np.ndarray, start: np.ndarray, v0: float, accel: float, n: int, dt: float) -> np.ndarray:
    """Positions along ``path`` (prefixed by ``start``) under a constant-acceleration speed profile."""
    pts = np.concatenate([start[None], path], axis=0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s_knots = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.arange(1, n + 1) * dt
    v = np.clip(v0 + accel * t, 0.0, V_MAX)
    s = np.cumsum(v * dt)
    # extend linearly past the end of the mode path
    if s_knots[-1] <= 0:
        return np.repeat(start[None], n, axis=0)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(s, s_knots, pts[:, 0])
    out[:, 1] = np.interp(s, s_knots, pts[:, 1])
    over = s > s_knots[-1]
    if np.any(over):
        tail = pts[-1] - pts[-2]
        tail = tail / max(np.linalg.norm(tail), 1e-9)
        out[over] = pts[-1] + (s[over] - s_knots[-1])[:, None] * tail
    return out


def observation_log_likelihood(particles: np.ndarray, previous: AgentState, observed: AgentState,
                               modes: Sequence[ModePrediction], ego_prev: np.ndarray,
                               lane: Lane | None, model: FeatureModel = FeatureModel(),
                               obs: ObservationModel = ObservationModel()) -> np.ndarray:
    """Per-particle log-likelihood of one observed transition.

    Each predicted mode is split into longitudinal variants (brake / hold /
    speed up). The observation is softly associated to the variants by
    position Mahalanobis distance and observed speed change, and each particle
    scores the variants through the prior-anchored Boltzmann model.
    """
    dt = model.dt
    n = min(obs.horizon, modes[0].horizon)
    start = previous.position
    ego = np.asarray(ego_prev, dtype=float)[:n, :2]
    feats, log_prior, log_assoc = [], [], []
    for mp in modes:
        lane_f = -lane_offsets(lane, mp.mean[:n]).sum() * dt
        cov1 = mp.covariances[0]
        icov = np.linalg.inv(cov1)
        for a in obs.accelerations:
            path = _retime(mp.mean, start, previous.v, a, n, dt)
            v = path_speeds(start, path, dt)
            vel_f = -np.abs(v - model.v_desired).sum() * dt
            dist_f = np.minimum(np.linalg.norm(path - ego, axis=1), model.d_sat).sum() * dt
            feats.append((vel_f, dist_f, lane_f))
            log_prior.append(np.log(mp.likelihood / len(obs.accelerations)) if mp.likelihood > 0 else -np.inf)
            off = observed.position - path[0]
            v_pred = np.clip(previous.v + a * dt, 0.0, V_MAX)
            dv = (observed.v - v_pred) / (obs.sigma_accel * dt)
            log_assoc.append(-0.5 * (off @ icov @ off) - 0.5 * dv * dv)
    feats = np.array(feats)
    log_prior = np.array(log_prior)
    log_assoc = np.array(log_assoc)
    logp = log_boltzmann(particles @ feats.T, log_prior)   # (M, H)
    return logsumexp(logp + log_assoc, axis=1)


def resample(belief: BeliefParticles, rng: np.random.Generator, jitter_var: float,
             rejuvenation: float = 0.0) -> BeliefParticles:
    """Systematic resampling with Gaussian jitter; optionally replaces a
    fraction of the particles with fresh prior draws."""
    n = len(belief)
    idx = systematic_indices(belief.weights, n, offset=rng.random())
    pts = belief.particles[idx] + rng.normal(0.0, np.sqrt(jitter_var), size=(n, 3))
    n_new = int(round(rejuvenation * n))
    if n_new:
        pick = rng.choice(n, size=n_new, replace=False)
        pts[pick] = rng.multivariate_normal(belief.prior_mean, belief.prior_cov, size=n_new)
    return BeliefParticles(np.abs(pts), np.full(n, 1.0 / n), belief.prior_mean, belief.prior_cov)


def belief_update_observed(belief: BeliefParticles, observed_step: AgentState,
                           predictions_prev: Sequence[ModePrediction], ego_prev,
                           *, previous: AgentState, lane: Lane | None = None,
                           model: FeatureModel = FeatureModel(),
                           obs: ObservationModel = ObservationModel(),
                           rng: np.random.Generator | None = None) -> BeliefParticles:
    """Assimilate one observed agent step into the particle belief.

    ``ego_prev`` holds the ego positions the agent was reacting to, aligned
    with the prediction steps. Resamples (systematic, with jitter) when the
    effective sample size drops below ``obs.resample_ratio * M``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    ego = _ego_positions(ego_prev, predictions_prev[0].horizon) if np.ndim(ego_prev) >= 2 else ego_prev
    log_lik = observation_log_likelihood(belief.particles, previous, observed_step, predictions_prev,
                                         ego, lane, model, obs)
    if obs.forgetting < 1.0:
        # exponential forgetting lets the belief follow behavior that changes over time
        with np.errstate(divide="ignore"):
            log_lik = log_lik + (obs.forgetting - 1.0) * np.log(belief.weights)
        log_lik = np.where(np.isfinite(log_lik), log_lik, -np.inf)
    post = belief.reweighted(log_lik)
    if post.ess() < obs.resample_ratio * len(post):
        post = resample(post, rng, obs.jitter_var, obs.rejuvenation)
    return post
