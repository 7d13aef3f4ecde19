"""Closed-loop simulation: traffic agents, scenarios, episodes and campaigns."""

from .agents import AgentController, AgentPolicyConfig, Snapshot, agent_policy
from .campaign import CampaignResult, EpisodeResult, aggregate, run_monte_carlo
from .collision import boxes_overlap, footprint, vehicles_collide
from .episode import EpisodeTrace, run_episode
from .metrics import EmptyTraceError, EpisodeMetrics, compute_metrics
from .scenarios import BUNDLED, AgentSpec, LaneSpec, ScenarioConfig

__all__ = [
    "AgentController", "AgentPolicyConfig", "Snapshot", "agent_policy",
    "CampaignResult", "EpisodeResult", "aggregate", "run_monte_carlo",
    "boxes_overlap", "footprint", "vehicles_collide",
    "EpisodeTrace", "run_episode",
    "EmptyTraceError", "EpisodeMetrics", "compute_metrics",
    "BUNDLED", "AgentSpec", "LaneSpec", "ScenarioConfig",
]
