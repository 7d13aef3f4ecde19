"""Receding-horizon planner: risk, information gating and gradient ascent
over the ego control sequence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dynamics import DT, HORIZON, AgentState, ControlBounds, ControlInput, Trajectory, rollout_array
from .inference import (
    AgentModeFeatures,
    BeliefParticles,
    FeatureModel,
    ObservationModel,
    batched_info,
    stacked_info,
    belief_update_observed,
)
from .lanes import Lane, LaneMap
from .objective import ObjectiveWeights, softplus_barrier, utility_array
from .predictor import PredictionSet, PredictorConfig, ego_distribution, predict_all
from .risk import RiskProfile, build_risk_profile

logger = logging.getLogger(__name__)

VARIANTS = ("probing", "no_probing", "conservative")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = HORIZON
    dt: float = DT
    max_iter: int = 50
    tol: float = 1e-4
    fd_step: float = 1e-4
    step0: float = 0.1
    min_step: float = 1e-6
    max_step: float = 10.0
    plan_particles: int = 32
    lateral_tau: float = 1.5   # s, lateral relaxation of the reference onto the target lane
    risk_squared: bool = False
    sense_range: float | None = None   # m, agents farther than this are ignored for the step

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")
        if self.max_iter < 0 or self.plan_particles < 1:
            raise ValueError("max_iter must be non-negative and plan_particles positive")
        if self.sense_range is not None and self.sense_range <= 0:
            raise ValueError("sense_range must be positive")


def variant_weights(weights: ObjectiveWeights, variant: str) -> ObjectiveWeights:
    """Objective weights for a named planner variant.

    ``no_probing`` drops the information term; ``conservative`` additionally
    sharpens the barrier fourfold.
    """
    if variant == "probing":
        return weights
    if variant == "no_probing":
        return weights.replace(alpha3=0.0)
    if variant == "conservative":
        return weights.replace(alpha3=0.0, beta=4.0 * weights.beta)
    raise ValueError(f"unknown planner variant {variant!r}")


def reference_trajectory(state: AgentState, lane: Lane, v_ref: float, T: int = HORIZON,
                         dt: float = DT, lateral_tau: float = 1.5) -> Trajectory:
    """Target-lane reference starting level with the ego, lateral offset
    decaying exponentially onto the centerline."""
    s0, d0, _ = lane.centerline.project(state.position)
    t = np.arange(T + 1) * dt
    s = float(s0) + v_ref * t
    d = float(d0) * np.exp(-t / lateral_tau)
    pos = lane.centerline.point_at(s, d)
    hdg = lane.centerline.heading_at(s)
    states = np.column_stack([pos, hdg, np.full(T + 1, v_ref)])
    states[0] = state.as_array()
    return Trajectory(states, dt)


@dataclass
class InfoTerm:
    agent_id: str
    weights: np.ndarray
    particles: np.ndarray
    features: AgentModeFeatures
    gated: np.ndarray  # (K,) bool


@dataclass
class PlanContext:
    state0: np.ndarray
    reference: np.ndarray              # (T+1, 4)
    weights: ObjectiveWeights
    pred_means: np.ndarray             # (N, K, T, 2)
    pred_covs: np.ndarray              # (N, K, T, 2, 2)
    risk: np.ndarray                   # (N, K, T)
    info_terms: list[InfoTerm] = field(default_factory=list)
    bounds: ControlBounds = field(default_factory=ControlBounds)
    dt: float = DT

    def __post_init__(self):
        self.state0 = np.asarray(self.state0, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        T = self.reference.shape[0] - 1
        if self.pred_means.size and self.pred_means.shape[2] != T:
            raise ValueError("prediction horizon does not match reference")
        if self.risk.shape != self.pred_means.shape[:3]:
            raise ValueError("risk profile shape does not match predictions")
        covs = self.pred_covs
        det = covs[..., 0, 0] * covs[..., 1, 1] - covs[..., 0, 1] * covs[..., 1, 0]
        self._icov = np.stack([
            np.stack([covs[..., 1, 1], -covs[..., 0, 1]], -1),
            np.stack([-covs[..., 1, 0], covs[..., 0, 0]], -1),
        ], -2) / det[..., None, None] if covs.size else covs
        self._info_stack = None

    @property
    def horizon(self) -> int:
        return self.reference.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.pred_means.shape[0]


@dataclass
class PlanResult:
    inputs: np.ndarray
    trajectory: Trajectory
    objective_value: float
    objective_breakdown: tuple[float, float, float]
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def evaluate_batch(inputs: np.ndarray, ctx: PlanContext) -> tuple[np.ndarray, np.ndarray]:
    """Objective values ``(B,)`` and ``(B, 3)`` breakdowns (utility, safety
    penalty, information) for control sequences ``(B, T, 2)``."""
    inputs = np.asarray(inputs, dtype=float)
    w = ctx.weights
    states = rollout_array(ctx.state0, inputs, ctx.dt, ctx.bounds.v_max)
    util = utility_array(states, inputs, ctx.reference, w.Q, w.R)
    pos = states[..., 1:, :2]
    batch = inputs.shape[:-2]
    if ctx.n_agents:
        off = pos[..., None, None, :, :] - ctx.pred_means                 # (B, N, K, T, 2)
        ox, oy = off[..., 0], off[..., 1]
        ic = ctx._icov
        quad = ox * (ic[..., 0, 0] * ox + ic[..., 0, 1] * oy) + oy * (ic[..., 1, 0] * ox + ic[..., 1, 1] * oy)
        gaps = np.sqrt(np.maximum(quad, 0.0)) - w.L * ctx.risk
        safety = softplus_barrier(gaps, w.beta).sum(axis=(-3, -2, -1))
    else:
        safety = np.zeros(batch)
    info = np.zeros(batch)
    if w.alpha3 > 0 and ctx.info_terms:
        terms = ctx.info_terms
        if ctx._info_stack is None:
            ctx._info_stack = (np.stack([t.weights for t in terms]), np.stack([t.particles for t in terms]),
                               [t.features for t in terms], np.stack([t.gated for t in terms]))
        sw, sp, sf, sg = ctx._info_stack
        info = stacked_info(sw, sp, sf, pos, sg).sum(axis=-1)
    value = w.alpha1 * util - w.alpha2 * safety + w.alpha3 * info
    return value, np.stack([util, safety, info], axis=-1)


def evaluate_objective(inputs, ctx: PlanContext) -> tuple[float, tuple[float, float, float]]:
    value, parts = evaluate_batch(np.asarray(inputs, dtype=float)[None], ctx)
    return float(value[0]), tuple(float(p) for p in parts[0])


def fd_gradient(u: np.ndarray, ctx: PlanContext, h: float) -> np.ndarray:
    """Central finite-difference gradient of the objective w.r.t. ``u`` (T, 2)."""
    n = u.size
    eye = np.eye(n).reshape(n, *u.shape) * h
    batch = np.concatenate([u + eye, u - eye], axis=0)
    vals, _ = evaluate_batch(batch, ctx)
    return ((vals[:n] - vals[n:]) / (2 * h)).reshape(u.shape)


def plan(ctx: PlanContext, warm_start: np.ndarray | None = None,
         cfg: PlannerConfig = PlannerConfig()) -> PlanResult:
    """Projected gradient ascent with a backtracking line search.

    The step is accepted only if the objective does not decrease; candidate
    step lengths (halving from the current trial step down to
    ``cfg.min_step``) are evaluated as one batch.
    """
    T = ctx.horizon
    bounds = ctx.bounds
    u = np.zeros((T, 2)) if warm_start is None else bounds.clip(np.asarray(warm_start, dtype=float))
    f, _ = evaluate_objective(u, ctx)
    if not np.isfinite(f):
        logger.warning("non-finite objective at warm start; resetting to zero controls")
        u = np.zeros((T, 2))
        f, _ = evaluate_objective(u, ctx)
    history = [f]
    trial = cfg.step0
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        g = fd_gradient(u, ctx, cfg.fd_step)
        if not np.any(g):
            converged = True
            break
        n_trials = max(1, int(np.floor(np.log2(trial / cfg.min_step))) + 1)
        steps = trial * 0.5 ** np.arange(n_trials)
        cands = bounds.clip(u[None] + steps[:, None, None] * g[None])
        vals, _ = evaluate_batch(cands, ctx)
        ok = np.flatnonzero(vals >= f)
        if ok.size == 0:
            converged = True
            break
        j = ok[0]
        delta = vals[j] - f
        u, f = cands[j], float(vals[j])
        history.append(f)
        trial = min(2.0 * steps[j], cfg.max_step)
        if abs(delta) < cfg.tol:
            converged = True
            break
    value, parts = evaluate_objective(u, ctx)
    states = rollout_array(ctx.state0, u, ctx.dt, bounds.v_max)
    return PlanResult(u, Trajectory(states, ctx.dt, u), value, parts, it, converged, history)


# ---------------------------------------------------------------------------
# receding-horizon wrapper


@dataclass
class WorldState:
    """Everything the ego observes at one instant."""

    time: float
    ego: AgentState
    histories: Mapping[str, Sequence[AgentState]]
    lane_map: LaneMap
    target_lane: str
    target_speed: float
    static_obstacles: Sequence[np.ndarray] = ()


@dataclass
class AgentTrack:
    belief: BeliefParticles
    modes: list | None = None
    lane: Lane | None = None
    state: AgentState | None = None


class MPCPlanner:
    """Ego planner state carried across MPC steps (warm start, beliefs)."""

    def __init__(self, weights: ObjectiveWeights | None = None, variant: str = "probing",
                 cfg: PlannerConfig = PlannerConfig(), predictor_cfg: PredictorConfig = PredictorConfig(),
                 feature_model: FeatureModel = FeatureModel(), obs_model: ObservationModel = ObservationModel(),
                 bounds: ControlBounds = ControlBounds(), n_particles: int = 2000,
                 prior_mean=(0.33, 0.33, 0.33), prior_var: float = 0.05, seed: int = 0):
        self.base_weights = weights or ObjectiveWeights()
        self.variant = variant
        self.weights = variant_weights(self.base_weights, variant)
        self.cfg = cfg
        self.predictor_cfg = predictor_cfg
        self.feature_model = feature_model
        self.obs_model = obs_model
        self.bounds = bounds
        self.n_particles = n_particles
        self.prior_mean = np.asarray(prior_mean, dtype=float)
        self.prior_var = prior_var
        self.rng = np.random.default_rng(seed)
        self.tracks: dict[str, AgentTrack] = {}
        self.last_plan: PlanResult | None = None
        self.last_diagnostics: dict = {}

    # -- beliefs ---------------------------------------------------------
    def _track(self, agent_id: str) -> AgentTrack:
        if agent_id not in self.tracks:
            belief = BeliefParticles.from_prior(self.prior_mean, self.prior_var * np.eye(3),
                                                self.n_particles, self.rng)
            self.tracks[agent_id] = AgentTrack(belief)
        return self.tracks[agent_id]

    def belief_means(self) -> dict[str, list[float]]:
        return {aid: tr.belief.mean().tolist() for aid, tr in self.tracks.items()}

    def observe(self, agent_id: str, new_state: AgentState) -> None:
        """Fold the agent's latest observed step into its belief."""
        tr = self.tracks.get(agent_id)
        if tr is None or tr.modes is None or tr.state is None or self.last_plan is None:
            return
        tr.belief = belief_update_observed(
            tr.belief, new_state, tr.modes, self.last_plan.trajectory.states[1:, :2],
            previous=tr.state, lane=tr.lane, model=self.feature_model, obs=self.obs_model, rng=self.rng)

    # -- planning --------------------------------------------------------
    def build_context(self, world: WorldState) -> tuple[PlanContext, PredictionSet, RiskProfile]:
        T, dt = self.cfg.horizon, self.cfg.dt
        lane = world.lane_map[world.target_lane]
        ref = reference_trajectory(world.ego, lane, world.target_speed, T, dt, self.cfg.lateral_tau)
        histories = world.histories
        if self.cfg.sense_range is not None:
            histories = {aid: h for aid, h in histories.items()
                         if np.hypot(*(h[-1].position - world.ego.position)) <= self.cfg.sense_range}
            for aid, tr in self.tracks.items():
                if aid not in histories:
                    tr.modes = None   # out of range: skip belief updates until seen again
        preds = predict_all(histories, world.lane_map, T, dt, self.predictor_cfg)
        ego_dist = ego_distribution(ref, self.predictor_cfg)
        risk = build_risk_profile(ego_dist, preds, self.weights.alpha_risk, self.cfg.risk_squared)
        means, covs, _ = preds.arrays()
        risk_vals = risk.values
        if len(world.static_obstacles):
            # static obstacles enter the barrier only, as certain single-mode agents
            K = means.shape[1] if means.size else 1
            obs_means = np.array([np.broadcast_to(np.asarray(o, float), (K, T, 2)) for o in world.static_obstacles])
            obs_covs = np.broadcast_to(self.predictor_cfg.cov0 * np.eye(2), obs_means.shape[:3] + (2, 2))
            obs_risk = np.full(obs_means.shape[:3], 2.0 / K)
            if means.size:
                means = np.concatenate([means, obs_means])
                covs = np.concatenate([covs, obs_covs])
                risk_vals = np.concatenate([risk_vals, obs_risk])
            else:
                means, covs, risk_vals = obs_means, np.array(obs_covs), obs_risk
        if not means.size:
            means = np.zeros((0, 0, T, 2))
            covs = np.zeros((0, 0, T, 2, 2))
            risk_vals = np.zeros((0, 0, T))
        info_terms = []
        gate = risk.max_over_time() > self.weights.tau if len(preds) else np.zeros((0, 0), bool)
        for i, aid in enumerate(preds.agent_ids):
            tr = self._track(aid)
            hist = world.histories[aid]
            cur = hist[-1]
            tr.modes = preds.modes[aid]
            tr.state = cur
            hit = world.lane_map.nearest_lane(cur.position, cur.theta)
            tr.lane = hit[0] if hit else None
            if self.weights.alpha3 > 0:
                sub = tr.belief.subsample(self.cfg.plan_particles)
                amf = AgentModeFeatures.build(tr.modes, cur.position, tr.lane, self.feature_model)
                info_terms.append(InfoTerm(aid, sub.weights, sub.particles, amf, gate[i]))
        ctx = PlanContext(world.ego.as_array(), ref.states, self.weights, means, covs, risk_vals,
                          info_terms, self.bounds, dt)
        return ctx, preds, risk

    def warm_start(self) -> np.ndarray | None:
        if self.last_plan is None:
            return None
        u = self.last_plan.inputs
        return np.concatenate([u[1:], u[-1:]], axis=0)

    def step(self, world: WorldState) -> tuple[ControlInput, PlanResult]:
        ctx, preds, risk = self.build_context(world)
        result = plan(ctx, self.warm_start(), self.cfg)
        self.last_plan = result
        per_agent_info = {}
        if ctx.info_terms:
            pos = result.trajectory.states[1:, :2]
            for term in ctx.info_terms:
                per_agent_info[term.agent_id] = float(batched_info(term.weights, term.particles,
                                                                   term.features, pos, term.gated))
        self.last_diagnostics = {
            "t": round(world.time, 6),
            "objective": result.objective_value,
            "utility": result.objective_breakdown[0],
            "safety": result.objective_breakdown[1],
            "info": result.objective_breakdown[2],
            "iterations": result.iterations,
            "risk_max": {aid: risk.max_over_time()[i].tolist() for i, aid in enumerate(risk.agent_ids)},
            "info_gain": per_agent_info,
            "belief_mean": self.belief_means(),
        }
        a, w = result.inputs[0]
        return ControlInput(float(a), float(w)), result


def mpc_step(world_state: WorldState, planner_state: MPCPlanner) -> tuple[ControlInput, PlanResult]:
    """One receding-horizon step: predict, assess risk, gate probing, optimize."""
    return planner_state.step(world_state)
