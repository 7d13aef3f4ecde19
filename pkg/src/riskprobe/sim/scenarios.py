"""Scenario definitions: road layouts and the bundled merge / intersection scenes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import AgentState
from ..inference import AGGRESSIVE, DEFENSIVE, FeatureModel, ObservationModel
from ..lanes import LANE_WIDTH, Lane, LaneMap, Polyline, arc_points
from ..objective import ObjectiveWeights
from ..planner import PlannerConfig
from ..predictor import PredictorConfig
from .agents import AgentPolicyConfig

MERGE_LANES = {"bottom": 0.0, "middle": LANE_WIDTH, "top": 2 * LANE_WIDTH}
MERGE_X = (-30.0, 220.0)


@dataclass
class LaneSpec:
    lane_id: str
    points: list[tuple[float, float]]
    width: float = LANE_WIDTH
    connector: bool = False

    def build(self) -> Lane:
        return Lane(self.lane_id, Polyline(self.points), self.width, self.connector)


@dataclass
class AgentSpec:
    agent_id: str
    spawn: AgentState
    phi: tuple[float, float, float]
    route: str
    v_desired: float = 8.0
    switch_time: float | None = None
    switch_phi: tuple[float, float, float] | None = None

    def phi_at(self, t: float) -> tuple[float, float, float]:
        if self.switch_time is not None and self.switch_phi is not None and t >= self.switch_time - 1e-9:
            return self.switch_phi
        return self.phi


@dataclass
class BeliefSettings:
    particles: int = 2000
    prior_mean: tuple[float, float, float] = (0.33, 0.33, 0.33)
    prior_var: float = 0.05


@dataclass
class ScenarioConfig:
    name: str
    kind: str                      # "merge" or "intersection"
    lanes: list[LaneSpec]
    ego_spawn: AgentState
    ego_lane: str                  # target lane (merge) or route (intersection)
    ego_speed: float
    agents: list[AgentSpec] = field(default_factory=list)
    episode_length: float = 20.0
    rng_seed: int = 0
    exit_s: float | None = None    # arc length along ego_lane that counts as exiting
    stop_on_success: bool = True
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    agent_policy: AgentPolicyConfig = field(default_factory=AgentPolicyConfig)
    feature_model: FeatureModel = field(default_factory=FeatureModel)
    observation: ObservationModel = field(default_factory=ObservationModel)
    belief: BeliefSettings = field(default_factory=BeliefSettings)

    def __post_init__(self):
        self.validate()

    @property
    def lane_map(self) -> LaneMap:
        if getattr(self, "_lane_map", None) is None:
            self._lane_map = LaneMap([ls.build() for ls in self.lanes])
        return self._lane_map

    def validate(self) -> None:
        from .collision import vehicles_collide

        if self.kind not in ("merge", "intersection"):
            raise ValueError(f"scenario.kind: unknown kind {self.kind!r}")
        if self.episode_length <= 0:
            raise ValueError("scenario.episode_length: must be positive")
        self._lane_map = None
        lanes = self.lane_map
        if self.ego_lane not in lanes:
            raise ValueError(f"ego.target_lane: unknown lane {self.ego_lane!r}")
        if self.kind == "intersection" and self.exit_s is None:
            raise ValueError("ego.exit_s: required for intersection scenarios")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agents: duplicate agent ids")
        states = [self.ego_spawn] + [a.spawn for a in self.agents]
        names = ["ego"] + [f"agent.{a.agent_id}" for a in self.agents]
        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                si, sj = states[i].as_array(), states[j].as_array()
                if vehicles_collide(si, sj):
                    raise ValueError(f"{names[j]}.spawn: overlaps {names[i]}")
        for a in self.agents:
            if a.route not in lanes:
                raise ValueError(f"agent.{a.agent_id}.route: unknown lane {a.route!r}")
            if min(a.phi) < 0 or (a.switch_phi is not None and min(a.switch_phi) < 0):
                raise ValueError(f"agent.{a.agent_id}.phi: weights must be non-negative")
            if a.switch_time is not None and not 0 <= a.switch_time <= self.episode_length:
                raise ValueError(f"agent.{a.agent_id}.switch_time: outside the episode")


# ---------------------------------------------------------------------------
# road layouts


def merge_lanes() -> list[LaneSpec]:
    x0, x1 = MERGE_X
    return [LaneSpec(name, [(x0, y), (x1, y)]) for name, y in MERGE_LANES.items()]


def intersection_lanes(half: float = 60.0, radius: float = 6.0) -> list[LaneSpec]:
    """Two perpendicular two-lane roads plus four right-turn connectors.

    Right-hand traffic: eastbound at y = -w/2, westbound at y = +w/2,
    northbound at x = +w/2, southbound at x = -w/2.
    """
    o = LANE_WIDTH / 2
    lanes = [
        LaneSpec("eb", [(-half, -o), (half, -o)]),
        LaneSpec("wb", [(half, o), (-half, o)]),
        LaneSpec("nb", [(o, -half), (o, half)]),
        LaneSpec("sb", [(-o, half), (-o, -half)]),
    ]
    r = radius
    # each connector: approach straight, quarter arc, departure straight
    turns = {
        "eb_sb": ((-half, -o), (-o - r, -o - r), np.pi / 2, 0.0, (-o, -half)),
        "wb_nb": ((half, o), (o + r, o + r), -np.pi / 2, -np.pi, (o, half)),
        "nb_eb": ((o, -half), (o + r, -o - r), np.pi, np.pi / 2, (half, -o)),
        "sb_wb": ((-o, half), (-o - r, o + r), 0.0, -np.pi / 2, (-half, o)),
    }
    for name, (start, center, a0, a1, end) in turns.items():
        arc = arc_points(center, r, a0, a1, 10)
        pts = [start] + [tuple(p) for p in arc] + [end]
        lanes.append(LaneSpec(name, pts, connector=True))
    return lanes


# ---------------------------------------------------------------------------
# bundled scenes

MERGE_V = 8.0
EGO_V = 6.0
# Scene tuning: an initial position covariance of about a vehicle extent and
# a barrier sharp enough to bite at the metre scale (see README).
SCENE_BETA = 1.0
SCENE_L = 8.0
SCENE_COV0 = 0.1
SCENE_Q = (0.2, 0.2, 0.1, 0.5)
SCENE_ITERS = 8
SCENE_LATERAL_TAU = 2.5
INTERSECTION_RANGE = 40.0   # m, planner sensing range at the intersection
INTERSECTION_L = 10.0       # crossing traffic needs a wider margin than car following


def scene_weights() -> ObjectiveWeights:
    return ObjectiveWeights(beta=SCENE_BETA, L=SCENE_L, Q=np.diag(SCENE_Q))


def scene_planner() -> PlannerConfig:
    return PlannerConfig(max_iter=SCENE_ITERS, lateral_tau=SCENE_LATERAL_TAU)


def scene_predictor() -> PredictorConfig:
    return PredictorConfig(cov0=SCENE_COV0)


def _merge_agent(aid: str, x: float, phi, **kw) -> AgentSpec:
    return AgentSpec(aid, AgentState(x, MERGE_LANES["middle"], 0.0, MERGE_V), tuple(phi), "middle", MERGE_V, **kw)


def merge_scene(name: str, phis, xs=(0.0, 10.0, 24.0), ego_x: float = 15.0, **kw) -> ScenarioConfig:
    """Ego in the top lane merging into the middle lane past ``len(phis)`` agents.

    Agent ``"1"`` is the trailing vehicle; ids increase toward the front.
    """
    agents = [_merge_agent(str(i + 1), x, phi) for i, (x, phi) in enumerate(zip(xs, phis))]
    base = dict(name=name, kind="merge", lanes=merge_lanes(),
                ego_spawn=AgentState(ego_x, MERGE_LANES["top"], 0.0, EGO_V), ego_lane="middle",
                ego_speed=EGO_V, agents=agents, episode_length=20.0,
                feature_model=FeatureModel(v_desired=MERGE_V), weights=scene_weights(),
                predictor=scene_predictor(), planner=scene_planner())
    base.update(kw)
    return ScenarioConfig(**base)


def scene_a1() -> ScenarioConfig:
    return merge_scene("merge_a1", [DEFENSIVE, AGGRESSIVE, AGGRESSIVE])


def scene_a2() -> ScenarioConfig:
    return merge_scene("merge_a2", [AGGRESSIVE, DEFENSIVE, AGGRESSIVE])


def scene_a3() -> ScenarioConfig:
    return merge_scene("merge_a3", [AGGRESSIVE, AGGRESSIVE, AGGRESSIVE])


def switch_scene(name: str, switch_time: float) -> ScenarioConfig:
    cfg = merge_scene(name, [DEFENSIVE, AGGRESSIVE], xs=(10.0, 24.0), ego_x=15.0,
                      episode_length=12.0, stop_on_success=False)
    cfg.agents[0].switch_time = switch_time
    cfg.agents[0].switch_phi = AGGRESSIVE
    cfg.validate()
    return cfg


def scene_b1() -> ScenarioConfig:
    return switch_scene("switch_b1", 2.0)


def scene_b2() -> ScenarioConfig:
    return switch_scene("switch_b2", 7.0)


def intersection_scene(name: str = "intersection", phis=None) -> ScenarioConfig:
    o = LANE_WIDTH / 2
    half = 60.0
    if phis is None:
        phis = [AGGRESSIVE, DEFENSIVE, AGGRESSIVE, DEFENSIVE, AGGRESSIVE, DEFENSIVE, AGGRESSIVE]
    v = 7.0
    # (id, route, arc length along route, speed)
    layout = [
        ("1", "nb", half - 30.0), ("2", "nb", half - 48.0),
        ("3", "sb", half - 22.0), ("4", "sb", half - 40.0),
        ("5", "wb", half - 18.0), ("6", "wb", half - 34.0),
        ("7", "eb", half - 12.0),
    ]
    lanes = intersection_lanes(half)
    lm = LaneMap([ls.build() for ls in lanes])
    agents = []
    for (aid, route, s), phi in zip(layout, phis):
        cl = lm[route].centerline
        p = cl.point_at(s)
        agents.append(AgentSpec(aid, AgentState(float(p[0]), float(p[1]), float(cl.heading_at(s)), v),
                                tuple(phi), route, v))
    ego_s = half - 30.0
    ego = AgentState(-half + ego_s, -o, 0.0, EGO_V)
    return ScenarioConfig(name=name, kind="intersection", lanes=lanes, ego_spawn=ego, ego_lane="eb",
                          ego_speed=EGO_V, agents=agents, episode_length=20.0, exit_s=half + 15.0,
                          feature_model=FeatureModel(v_desired=v),
                          weights=scene_weights().replace(L=INTERSECTION_L), predictor=scene_predictor(),
                          planner=replace(scene_planner(), sense_range=INTERSECTION_RANGE))


BUNDLED = {
    "merge_a1": scene_a1,
    "merge_a2": scene_a2,
    "merge_a3": scene_a3,
    "switch_b1": scene_b1,
    "switch_b2": scene_b2,
    "intersection": intersection_scene,
}
