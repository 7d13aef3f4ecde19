"""Scripted traffic agents that maximize a weighted feature reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import DT, V_MAX, AgentState, ControlInput, rollout_array
from ..lanes import VEHICLE_LENGTH, Lane


@dataclass(frozen=True)
class AgentPolicyConfig:
    horizon: int = 10
    plan_dt: float = 0.2       # s, coarser step for the agent's own lookahead
    blocks: int = 2            # piecewise-constant acceleration blocks over the horizon
    iters: int = 6
    fd_step: float = 1e-3
    step0: float = 1.0
    min_step: float = 1e-4
    d_sat: float = 10.0
    a_min: float = -4.0        # emergency braking, only when the safeguard is active
    a_yield: float = -1.0      # strongest deceleration chosen for reward reasons alone
    a_max: float = 2.0
    omega_max: float = 0.4
    comfort: float = 0.02      # weight on squared acceleration
    # route-following steering: omega = k_heading * (heading error - atan(k_offset * d / v))
    k_heading: float = 2.0
    k_offset: float = 1.0
    # non-adversarial safeguard: keep a headway gap to anything ahead in-lane
    gap_min: float = 1.0
    headway: float = 0.5
    safeguard: float = 5.0
    overlap_width: float = 2.0   # lateral offset below which a vehicle counts as in-path
    guard_steps: int = 4         # lookahead steps (of plan_dt) the safeguard reacts to
    emergency: float = 1.0       # shortfall (m^2) that unlocks emergency braking
    follow_cos: float = 0.5      # only vehicles heading within 60 degrees count for the safeguard


@dataclass
class Snapshot:
    """What an agent sees when choosing its control."""

    others: np.ndarray    # (J, 4) states of every other vehicle; row 0 is the ego
    route: Lane
    v_desired: float


def _expand(params: np.ndarray, cfg: AgentPolicyConfig) -> np.ndarray:
    reps = int(np.ceil(cfg.horizon / cfg.blocks))
    return np.repeat(params, reps, axis=-1)[..., : cfg.horizon]


def steering(states: np.ndarray, route: Lane, cfg: AgentPolicyConfig) -> np.ndarray:
    """Route-following yaw rate for states ``(..., 4)``."""
    _, d, hdg = route.centerline.project(states[..., :2])
    herr = (hdg - states[..., 2] + np.pi) % (2 * np.pi) - np.pi
    omega = cfg.k_heading * (herr - np.arctan(cfg.k_offset * d / np.maximum(states[..., 3], 1.0)))
    return np.minimum(np.maximum(omega, -cfg.omega_max), cfg.omega_max)


def closed_loop_rollout(state: np.ndarray, accel: np.ndarray, route: Lane, cfg: AgentPolicyConfig,
                        dt: float = DT) -> tuple[np.ndarray, np.ndarray]:
    """States ``(B, n, 4)`` for steps 1..n under acceleration plans ``(B, n)``
    with steering from :func:`steering`; also returns the yaw rates used."""
    B, n = accel.shape
    x = np.broadcast_to(state, (B, 4))
    out = np.empty((B, n, 4))
    omegas = np.empty((B, n))
    for k in range(n):
        w = steering(x, route, cfg)
        omegas[:, k] = w
        th, v = x[:, 2], x[:, 3]
        out[:, k, 0] = x[:, 0] + v * np.cos(th) * dt
        out[:, k, 1] = x[:, 1] + v * np.sin(th) * dt
        out[:, k, 2] = th + w * dt
        out[:, k, 3] = np.minimum(np.maximum(v + accel[:, k] * dt, 0.0), V_MAX)
        x = out[:, k]
    return out, omegas


def constant_velocity(states: np.ndarray, n: int, dt: float) -> np.ndarray:
    """(J, n, 2) constant-velocity positions for steps 1..n."""
    vel = states[:, 3:4] * np.column_stack([np.cos(states[:, 2]), np.sin(states[:, 2])])
    t = np.arange(1, n + 1)[None, :, None] * dt
    return states[:, None, :2] + vel[:, None, :] * t


def headway_shortfall(traj: np.ndarray, others: np.ndarray, cfg: AgentPolicyConfig) -> np.ndarray:
    """Squared headway shortfall ``(B,)`` to in-path vehicles over the
    safeguard lookahead; ``others`` holds their predicted positions (J, n, 2)."""
    k = cfg.guard_steps
    rel = others[None, :, :k] - traj[:, None, :k, :2]
    c, s = np.cos(traj[:, :k, 2]), np.sin(traj[:, :k, 2])
    ahead = rel[..., 0] * c[:, None] + rel[..., 1] * s[:, None]
    lateral = -rel[..., 0] * s[:, None] + rel[..., 1] * c[:, None]
    overlap = 1.0 / (1.0 + np.exp((np.abs(lateral) - cfg.overlap_width) / 0.15))
    need = cfg.gap_min + VEHICLE_LENGTH + cfg.headway * traj[:, None, :k, 3]
    short = np.maximum(need - ahead, 0.0) * (ahead > 0) * overlap
    return np.sum(short ** 2, axis=(1, 2))


def followed(state: np.ndarray, others: np.ndarray, cfg: AgentPolicyConfig) -> np.ndarray:
    """Rows of ``others`` travelling roughly the same way as ``state``; only
    these are subject to the headway safeguard (car following, not crossing)."""
    return others[np.cos(others[:, 2] - state[2]) > cfg.follow_cos]


def policy_reward(params: np.ndarray, state: np.ndarray, phi: np.ndarray, snap: Snapshot,
                  cfg: AgentPolicyConfig, dt: float = DT) -> np.ndarray:
    """Reward of candidate acceleration blocks ``(B, blocks)``."""
    accel = _expand(params, cfg)
    traj, _ = closed_loop_rollout(state, accel, snap.route, cfg, dt)   # (B, n, 4)
    pos = traj[..., :2]
    v = traj[..., 3]
    f_vel = -np.abs(v - snap.v_desired)
    if len(snap.others):
        others = constant_velocity(snap.others, cfg.horizon, dt)    # (J, n, 2)
        f_dist = np.minimum(np.linalg.norm(others[0][None] - pos, axis=-1), cfg.d_sat)  # ego only
        ahead = followed(state, snap.others, cfg)
        guard = (cfg.safeguard * headway_shortfall(traj, constant_velocity(ahead, cfg.horizon, dt), cfg)
                 if len(ahead) else 0.0)
    else:
        f_dist = np.zeros_like(v)
        guard = 0.0
    _, d, _ = snap.route.centerline.project(pos)
    f_lane = -np.abs(d)
    reward = dt * (phi[0] * f_vel.sum(-1) + phi[1] * f_dist.sum(-1) + phi[2] * f_lane.sum(-1))
    reward -= dt * cfg.comfort * np.sum(accel ** 2, axis=-1)
    return reward - dt * guard


class AgentController:
    """Short-horizon gradient ascent on the agent's reward over its
    acceleration, warm-started; steering follows the route."""

    def __init__(self, cfg: AgentPolicyConfig = AgentPolicyConfig(), dt: float = DT):
        self.cfg = cfg
        self.dt = dt
        self.params = np.zeros(cfg.blocks)
        self._hi = cfg.a_max

    def act(self, state: AgentState, phi, snap: Snapshot) -> ControlInput:
        cfg = self.cfg
        phi = np.asarray(phi, dtype=float)
        x0 = state.as_array()
        dt = cfg.plan_dt
        lo = cfg.a_yield
        ahead = followed(x0, snap.others, cfg)
        if len(ahead):
            cruise, _ = closed_loop_rollout(x0, np.zeros((1, cfg.horizon)), snap.route, cfg, dt)
            if headway_shortfall(cruise, constant_velocity(ahead, cfg.horizon, dt), cfg)[0] > cfg.emergency:
                lo = cfg.a_min
        p = np.clip(self.params, lo, self._hi)
        f = policy_reward(p[None], x0, phi, snap, cfg, dt)[0]
        n = p.size
        eye = np.eye(n) * cfg.fd_step
        trial = cfg.step0
        for _ in range(cfg.iters):
            vals = policy_reward(np.concatenate([p + eye, p - eye]), x0, phi, snap, cfg, dt)
            g = (vals[:n] - vals[n:]) / (2 * cfg.fd_step)
            if not np.any(g):
                break
            k = max(1, int(np.log2(trial / cfg.min_step)) + 1)
            steps = trial * 0.5 ** np.arange(k)
            cands = np.clip(p[None] + steps[:, None] * g[None], lo, self._hi)
            cv = policy_reward(cands, x0, phi, snap, cfg, dt)
            ok = np.flatnonzero(cv > f)
            if ok.size == 0:
                break
            p, f = cands[ok[0]], cv[ok[0]]
            trial = min(4.0 * steps[ok[0]], 8.0)
        self.params = p
        omega = float(steering(x0, snap.route, cfg))
        return ControlInput(float(p[0]), omega)


def agent_policy(agent_state: AgentState, phi, world_snapshot: Snapshot, lane_map=None,
                 controller: AgentController | None = None) -> ControlInput:
    """Control for one agent maximizing its feature reward over a short horizon."""
    controller = AgentController() if controller is None else controller
    return controller.act(agent_state, phi, world_snapshot)
