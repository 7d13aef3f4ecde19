"""Closed-loop episodes: ego planner against reward-driven traffic."""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import DEFAULT_BOUNDS, V_MAX, AgentState, rollout_array
from ..planner import MPCPlanner, WorldState
from .agents import AgentController, Snapshot
from .collision import footprint, vehicles_collide
from .scenarios import ScenarioConfig

EGO_ID = "ego"


@dataclass
class EpisodeTrace:
    """Per-step vehicle records plus the episode outcome.

    ``records`` holds one dict per vehicle per step with keys
    ``t, id, x, y, theta, v, a, omega``; the state is at time ``t`` and
    ``a, omega`` is the control applied from ``t`` to ``t + dt``.
    """

    scenario: str
    variant: str
    dt: float
    records: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    outcome: str = "timeout"                 # success | collision | timeout
    completion_time: float | None = None
    collision_with: str | None = None
    wall_time: float = 0.0

    def vehicle(self, vid: str) -> dict[str, np.ndarray]:
        rows = [r for r in self.records if r["id"] == vid]
        return {k: np.array([r[k] for r in rows]) for k in ("t", "x", "y", "theta", "v", "a", "omega")}

    @property
    def vehicle_ids(self) -> list[str]:
        return list(dict.fromkeys(r["id"] for r in self.records))

    def summary(self) -> dict:
        return {"scenario": self.scenario, "variant": self.variant, "outcome": self.outcome,
                "completion_time": self.completion_time, "collision_with": self.collision_with,
                "wall_time": self.wall_time}

    def write_jsonl(self, path) -> None:
        """One JSON object per line: vehicle records, then diagnostics, then a summary."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in self.records:
                fh.write(json.dumps({"type": "state", **r}) + "\n")
            for d in self.diagnostics:
                fh.write(json.dumps({"type": "planner", **d}) + "\n")
            fh.write(json.dumps({"type": "summary", **self.summary()}) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "EpisodeTrace":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        summ = next(r for r in rows if r["type"] == "summary")
        states = [{k: v for k, v in r.items() if k != "type"} for r in rows if r["type"] == "state"]
        diags = [{k: v for k, v in r.items() if k != "type"} for r in rows if r["type"] == "planner"]
        ts = sorted({r["t"] for r in states})
        dt = ts[1] - ts[0] if len(ts) > 1 else 0.1
        return cls(summ["scenario"], summ["variant"], round(dt, 9), states, diags, summ["outcome"],
                   summ["completion_time"], summ.get("collision_with"), summ.get("wall_time", 0.0))


def merge_complete(ego: np.ndarray, lane) -> bool:
    """True once the ego footprint lies entirely inside ``lane``."""
    corners = footprint(ego[0], ego[1], ego[2])
    _, d, hdg = lane.centerline.project(corners)
    return bool(np.all(np.abs(d) <= lane.width / 2))


def intersection_complete(ego: np.ndarray, lane, exit_s: float) -> bool:
    s, d, _ = lane.centerline.project(ego[:2])
    return bool(s >= exit_s and abs(d) <= lane.width / 2)


def _record(t, vid, state, u) -> dict:
    return {"t": round(t, 6), "id": vid, "x": float(state[0]), "y": float(state[1]),
            "theta": float(state[2]), "v": float(state[3]), "a": float(u[0]), "omega": float(u[1])}


def run_episode(config: ScenarioConfig, variant: str = "probing", *, seed: int | None = None,
                run_to_end: bool | None = None, record_diagnostics: bool = True) -> EpisodeTrace:
    """Simulate one episode and return its trace.

    Args:
        config: Scenario to run.
        variant: ``probing``, ``no_probing`` or ``conservative``.
        seed: Overrides ``config.rng_seed`` for the planner's particle RNG.
        run_to_end: Keep simulating after success until ``episode_length``
            (defaults to ``not config.stop_on_success``). A collision always
            ends the episode.
        record_diagnostics: Store the planner's per-step diagnostics.
    """
    t_start = _time.perf_counter()
    dt = config.planner.dt
    seed = config.rng_seed if seed is None else seed
    run_to_end = (not config.stop_on_success) if run_to_end is None else run_to_end
    lane_map = config.lane_map
    bs = config.belief
    planner = MPCPlanner(config.weights, variant, config.planner, config.predictor, config.feature_model,
                         config.observation, DEFAULT_BOUNDS, bs.particles, bs.prior_mean, bs.prior_var, seed)
    ego = config.ego_spawn.as_array()
    agents = {a.agent_id: a.spawn.as_array() for a in config.agents}
    specs = {a.agent_id: a for a in config.agents}
    controllers = {aid: AgentController(config.agent_policy, dt) for aid in agents}
    # seed histories with one back-extrapolated constant-velocity state
    histories: dict[str, list[AgentState]] = {}
    for aid, s in agents.items():
        prev = s.copy()
        prev[:2] -= s[3] * dt * np.array([np.cos(s[2]), np.sin(s[2])])
        histories[aid] = [AgentState.from_array(prev), AgentState.from_array(s)]
    window = max(config.predictor.window + 1, 2)
    target = lane_map[config.ego_lane]
    trace = EpisodeTrace(config.name, variant, dt)
    n_steps = int(round(config.episode_length / dt))
    pol = config.agent_policy

    for k in range(n_steps):
        t = k * dt
        world = WorldState(t, AgentState.from_array(ego), {a: h[-window:] for a, h in histories.items()},
                           lane_map, config.ego_lane, config.ego_speed)
        u_ego, _ = planner.step(world)
        if record_diagnostics:
            trace.diagnostics.append(dict(planner.last_diagnostics))
        u_agents = {}
        for aid, s in agents.items():
            spec = specs[aid]
            others = np.array([ego] + [agents[o] for o in agents if o != aid])
            snap = Snapshot(others, lane_map[spec.route], spec.v_desired)
            u_agents[aid] = controllers[aid].act(AgentState.from_array(s), spec.phi_at(t), snap)
        trace.records.append(_record(t, EGO_ID, ego, (u_ego.a, u_ego.omega)))
        for aid, s in agents.items():
            trace.records.append(_record(t, aid, s, (u_agents[aid].a, u_agents[aid].omega)))

        ego = rollout_array(ego, np.array([[u_ego.a, u_ego.omega]]), dt, V_MAX)[-1]
        for aid in agents:
            u = u_agents[aid]
            u = np.clip([u.a, u.omega], [pol.a_min, -pol.omega_max], [pol.a_max, pol.omega_max])
            agents[aid] = rollout_array(agents[aid], u[None], dt, V_MAX)[-1]
            histories[aid].append(AgentState.from_array(agents[aid]))
            del histories[aid][:-window]
            planner.observe(aid, histories[aid][-1])

        t_next = (k + 1) * dt
        hit = next((aid for aid, s in agents.items() if vehicles_collide(ego, s)), None)
        if hit is not None:
            trace.outcome, trace.collision_with = "collision", hit
            trace.completion_time = None
            break
        if trace.outcome != "success":
            done = (merge_complete(ego, target) if config.kind == "merge"
                    else intersection_complete(ego, target, config.exit_s))
            if done:
                trace.outcome, trace.completion_time = "success", round(t_next, 6)
                if not run_to_end:
                    break
    else:
        t_next = n_steps * dt
    # final states with zero control so gaps at completion are available
    trace.records.append(_record(t_next, EGO_ID, ego, (0.0, 0.0)))
    for aid, s in agents.items():
        trace.records.append(_record(t_next, aid, s, (0.0, 0.0)))
    trace.wall_time = _time.perf_counter() - t_start
    return trace
