"""Two-agent risk illustration: a crossing agent with three modes and a
neighbouring agent with a parallel and a diverging mode."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DT
from .predictor import ModePrediction, PredictionSet
from .risk import ALPHA_RISK, build_risk_profile

DEMO_T = 25
CROSS_STEP = 10          # agent 1 mode 1 meets the ego path at this step
DIVERGE_STEP = 5         # agent 2 mode 2 starts drifting away after this step
EGO_SPEED = 5.0          # m/s
AGENT1_PROBS = (0.4, 0.3, 0.3)
AGENT2_PROBS = (0.5, 0.5)


@dataclass
class RiskDemo:
    steps: np.ndarray                       # (T,) prediction steps 1..T
    curves: dict[str, np.ndarray]           # column name -> (T,) risk values
    crossing_step: int = CROSS_STEP
    diverge_step: int = DIVERGE_STEP


def _covs(T: int, c0: float = 0.1, growth: float = 0.05) -> np.ndarray:
    return (c0 + growth * np.arange(1, T + 1))[:, None, None] * np.eye(2)


def demo_geometry(T: int = DEMO_T, dt: float = DT):
    """Ego Gaussian marginals and per-agent predictions for the demo scene."""
    k = np.arange(1, T + 1)
    step = EGO_SPEED * dt
    ego_mean = np.column_stack([step * (k - CROSS_STEP), np.zeros(T)])
    sigma = 0.25 + 0.1 * k * dt
    ego_cov = (sigma ** 2)[:, None, None] * np.eye(2)
    # agent 1 moves down across the ego path at three different speeds
    y0 = step * CROSS_STEP
    agent1 = []
    for rate, p, label in zip((1.0, 0.6, 1.4), AGENT1_PROBS, ("on_time", "slow", "fast")):
        mean = np.column_stack([np.zeros(T), y0 - rate * step * k])
        agent1.append(ModePrediction(mean, _covs(T), p, label))
    # agent 2 drives alongside the ego; mode 2 drifts away after DIVERGE_STEP
    lateral = 3.0
    x2 = ego_mean[:, 0]
    parallel = np.column_stack([x2, np.full(T, lateral)])
    drift = lateral + 0.4 * np.maximum(k - DIVERGE_STEP, 0)
    diverging = np.column_stack([x2, drift])
    agent2 = [ModePrediction(parallel, _covs(T), AGENT2_PROBS[0], "parallel"),
              ModePrediction(diverging, _covs(T), AGENT2_PROBS[1], "diverging")]
    return (ego_mean, ego_cov), {"1": agent1, "2": agent2}


def risk_demo(T: int = DEMO_T, alpha_risk: float = ALPHA_RISK) -> RiskDemo:
    """Risk curves for all five modes of the demo scene."""
    ego, agents = demo_geometry(T)
    curves = {}
    for aid, modes in agents.items():
        profile = build_risk_profile(ego, PredictionSet({aid: modes}), alpha_risk)
        for k in range(len(modes)):
            curves[f"agent{aid}_mode{k + 1}"] = profile[aid, k]
    return RiskDemo(np.arange(1, T + 1), curves)


def write_risk_csv(demo: RiskDemo, path, dt: float = DT) -> Path:
    """Wide CSV: ``step, t`` then one column per agent mode."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(demo.curves)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t"] + names)
        for i, s in enumerate(demo.steps):
            w.writerow([int(s), repr(round(float(s * dt), 10))] + [repr(float(demo.curves[n][i])) for n in names])
    return path
