"""Monte Carlo campaigns with randomized spawns and behavior draws shared
across planner variants."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dynamics import AgentState
from ..planner import VARIANTS
from .collision import vehicles_collide
from .episode import EpisodeTrace, run_episode
from .metrics import EpisodeMetrics, compute_metrics
from .scenarios import ScenarioConfig

MC_AGGRESSIVE = (0.5, 0.3, 0.3)
MC_DEFENSIVE = (0.2, 0.6, 0.2)
MC_PHI_VAR = 0.05
SPAWN_JITTER = 2.0   # m, uniform along the heading

MERGE_COLUMNS = ("variant", "episodes", "success_rate", "time_to_merge", "gap_to_vehicle_2",
                 "gap_to_vehicle_1", "velocity", "longitudinal_jerk", "angular_jerk")
INTERSECTION_COLUMNS = ("variant", "episodes", "success_rate", "collision_rate", "time_to_cross",
                        "gap_to_other_vehicle", "velocity", "longitudinal_jerk", "angular_jerk")
EPISODE_COLUMNS = ("episode", "variant", "seed", "outcome", "success", "collision", "time_to_complete",
                   "gap_to_vehicle_1", "gap_to_vehicle_2", "gap_to_nearest", "mean_velocity",
                   "longitudinal_jerk", "angular_jerk", "wall_time")


@dataclass
class EpisodeDraw:
    """Randomized quantities for one episode, reused by every variant."""

    index: int
    seed: int
    shifts: np.ndarray           # (1 + n_agents,) longitudinal spawn shifts, ego first
    phis: list[tuple[float, float, float]]
    aggressive: list[bool]


@dataclass
class EpisodeResult:
    index: int
    variant: str
    seed: int
    metrics: EpisodeMetrics
    trace: EpisodeTrace


@dataclass
class CampaignResult:
    kind: str
    episodes: int
    results: list[EpisodeResult] = field(default_factory=list)

    def by_variant(self) -> dict[str, list[EpisodeResult]]:
        out: dict[str, list[EpisodeResult]] = {}
        for r in self.results:
            out.setdefault(r.variant, []).append(r)
        return out

    def table(self) -> list[dict]:
        return [aggregate(self.kind, v, [r.metrics for r in rs]) for v, rs in self.by_variant().items()]


def _shift(state: AgentState, ds: float) -> AgentState:
    return replace(state, x=state.x + ds * math.cos(state.theta), y=state.y + ds * math.sin(state.theta))


def draw_episode(base: ScenarioConfig, index: int, seed: int, max_tries: int = 100) -> EpisodeDraw:
    """Spawn shifts and behavior weights for episode ``index``.

    The stream depends only on ``(seed, index)``, so draws are identical
    across variants and independent of worker scheduling.
    """
    rng = np.random.default_rng([seed, index])
    n = len(base.agents)
    aggressive = [bool(b) for b in rng.random(n) < 0.5]
    phis = []
    for agg in aggressive:
        mean = np.array(MC_AGGRESSIVE if agg else MC_DEFENSIVE)
        phi = np.maximum(rng.multivariate_normal(mean, MC_PHI_VAR * np.eye(3)), 0.0)
        phis.append(tuple(float(p) for p in phi))
    states = [base.ego_spawn] + [a.spawn for a in base.agents]
    for _ in range(max_tries):
        shifts = rng.uniform(-SPAWN_JITTER, SPAWN_JITTER, size=n + 1)
        moved = [_shift(s, d).as_array() for s, d in zip(states, shifts)]
        if not any(vehicles_collide(moved[i], moved[j]) for i in range(n + 1) for j in range(i + 1, n + 1)):
            break
    else:
        shifts = np.zeros(n + 1)
    ep_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    return EpisodeDraw(index, ep_seed, shifts, phis, aggressive)


def apply_draw(base: ScenarioConfig, draw: EpisodeDraw) -> ScenarioConfig:
    agents = [replace(a, spawn=_shift(a.spawn, ds), phi=phi, switch_time=None, switch_phi=None)
              for a, ds, phi in zip(base.agents, draw.shifts[1:], draw.phis)]
    return replace(base, name=f"{base.name}#{draw.index}", ego_spawn=_shift(base.ego_spawn, draw.shifts[0]),
                   agents=agents, rng_seed=draw.seed)


def run_episode_result(args, record_diagnostics: bool = False) -> EpisodeResult:
    """Run one ``(config, variant, index, seed)`` job and score it."""
    cfg, variant, index, seed = args
    trace = run_episode(cfg, variant, seed=seed, record_diagnostics=record_diagnostics)
    return EpisodeResult(index, variant, seed, compute_metrics(trace), trace)


def _mean(values) -> float:
    vals = np.array([v for v in values if not math.isnan(v)], dtype=float)
    return float(vals.mean()) if vals.size else float("nan")


def aggregate(kind: str, variant: str, metrics: Sequence[EpisodeMetrics]) -> dict:
    """Table-shaped row for one variant.

    Rates are fractions of all episodes. Completion times and gaps average
    over successful episodes. Velocity and jerks average over all episodes.
    """
    n = len(metrics)
    ok = [m for m in metrics if m.success]
    row = {"variant": variant, "episodes": n, "success_rate": len(ok) / n}
    if kind == "intersection":
        row["collision_rate"] = sum(m.collision for m in metrics) / n
        row["time_to_cross"] = _mean(m.time_to_complete for m in ok)
        row["gap_to_other_vehicle"] = _mean(m.gap_to_nearest for m in ok)
    else:
        row["time_to_merge"] = _mean(m.time_to_complete for m in ok)
        row["gap_to_vehicle_2"] = _mean(m.gap_to_vehicle_2 for m in ok)
        row["gap_to_vehicle_1"] = _mean(m.gap_to_vehicle_1 for m in ok)
    row["velocity"] = _mean(m.mean_velocity for m in metrics)
    row["longitudinal_jerk"] = _mean(m.longitudinal_jerk for m in metrics)
    row["angular_jerk"] = _mean(m.angular_jerk for m in metrics)
    cols = INTERSECTION_COLUMNS if kind == "intersection" else MERGE_COLUMNS
    return {c: row[c] for c in cols}


def run_monte_carlo(base_config: ScenarioConfig, episodes: int, variants: Sequence[str] = VARIANTS,
                    seed: int = 0, workers: int = 1) -> CampaignResult:
    """Run ``episodes`` randomized episodes for each variant.

    Spawns are shifted by up to two metres along each vehicle's heading and
    every agent is aggressive or defensive with equal odds, its weights drawn
    from a Gaussian around the type mean (clipped at zero). The same draws
    are used for every variant.

    Args:
        base_config: Scenario supplying the road, spawns and planner settings.
        episodes: Number of randomized episodes per variant.
        variants: Planner variants to compare.
        seed: Campaign seed.
        workers: Worker processes; 1 runs in-process.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown planner variant {v!r}")
    draws = [draw_episode(base_config, i, seed) for i in range(episodes)]
    jobs = [(apply_draw(base_config, d), v, d.index, d.seed) for v in variants for d in draws]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_episode_result, jobs))
    else:
        results = [run_episode_result(j) for j in jobs]
    return CampaignResult(base_config.kind, episodes, results)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def write_table_csv(rows: Sequence[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def episode_rows(results: Sequence[EpisodeResult]) -> list[dict]:
    rows = []
    for r in results:
        m = r.metrics.as_dict()
        rows.append({"episode": r.index, "variant": r.variant, "seed": r.seed, "outcome": r.trace.outcome,
                     **{k: m[k] for k in EPISODE_COLUMNS if k in m}, "wall_time": r.trace.wall_time})
    return [{k: row[k] for k in EPISODE_COLUMNS} for row in rows]
