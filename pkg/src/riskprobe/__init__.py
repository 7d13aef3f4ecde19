"""Risk-aware interactive planning with gated active information gathering."""

from .dynamics import AgentState, ControlBounds, ControlInput, Trajectory, rollout, step
from .objective import ObjectiveWeights
from .planner import MPCPlanner, PlannerConfig, WorldState, mpc_step, plan
from .predictor import PredictionSet, PredictorConfig, predict
from .risk import build_risk_profile, mode_risk, wasserstein2_gaussian

__version__ = "0.1.0"

__all__ = [
    "AgentState", "ControlBounds", "ControlInput", "Trajectory", "rollout", "step",
    "ObjectiveWeights", "MPCPlanner", "PlannerConfig", "WorldState", "mpc_step", "plan",
    "PredictionSet", "PredictorConfig", "predict",
    "build_risk_profile", "mode_risk", "wasserstein2_gaussian",
]
