"""Per-episode metrics computed from an episode trace."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .episode import EGO_ID, EpisodeTrace


class EmptyTraceError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeMetrics:
    """Outcome and comfort measures for one episode.

    Gaps are centre-to-centre distances at the completion instant and are
    NaN when the episode did not succeed. Jerks are signed means of the
    finite differences of the applied ego controls.
    """

    success: bool
    collision: bool
    time_to_complete: float
    gap_to_vehicle_1: float
    gap_to_vehicle_2: float
    gap_to_nearest: float
    mean_velocity: float
    longitudinal_jerk: float
    angular_jerk: float

    def __post_init__(self):
        if self.success and self.collision:
            raise ValueError("an episode cannot both succeed and collide")

    def as_dict(self) -> dict:
        return asdict(self)


def _controls(ego: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times and applied controls; the terminal record carries no control."""
    n = max(len(ego["t"]) - 1, 1)
    return ego["t"][:n], ego["a"][:n], ego["omega"][:n]


def longitudinal_jerk(t: np.ndarray, a: np.ndarray) -> float:
    """Mean of ``da/dt`` over consecutive samples (0 for fewer than two)."""
    if len(t) < 2:
        return 0.0
    return float(np.mean(np.diff(a) / np.diff(t)))


def angular_jerk(t: np.ndarray, omega: np.ndarray) -> float:
    """Mean of the second difference of yaw rate over ``dt**2`` (0 for fewer than three samples)."""
    if len(t) < 3:
        return 0.0
    dt = np.diff(t)
    return float(np.mean(np.diff(omega, n=2) / (dt[1:] * dt[:-1])))


def _gap_at(trace: EpisodeTrace, t: float, vid: str) -> float:
    rows = {r["id"]: r for r in trace.records if abs(r["t"] - t) < 1e-6}
    if EGO_ID not in rows or vid not in rows:
        return float("nan")
    e, o = rows[EGO_ID], rows[vid]
    return float(np.hypot(e["x"] - o["x"], e["y"] - o["y"]))


def compute_metrics(trace: EpisodeTrace) -> EpisodeMetrics:
    """Summarize an episode trace.

    Raises:
        EmptyTraceError: If the trace holds no ego records.
    """
    ego = trace.vehicle(EGO_ID) if trace.records else {"t": np.array([])}
    if len(ego["t"]) == 0:
        raise EmptyTraceError("trace has no ego records")
    success = trace.outcome == "success"
    collision = trace.outcome == "collision"
    t, a, omega = _controls(ego)
    nan = float("nan")
    if success:
        tc = float(trace.completion_time)
        others = [v for v in trace.vehicle_ids if v != EGO_ID]
        gaps = [_gap_at(trace, tc, v) for v in others]
        nearest = float(np.nanmin(gaps)) if gaps and not np.all(np.isnan(gaps)) else nan
        g1, g2 = _gap_at(trace, tc, "1"), _gap_at(trace, tc, "2")
    else:
        tc = g1 = g2 = nearest = nan
    return EpisodeMetrics(
        success=success,
        collision=collision,
        time_to_complete=tc,
        gap_to_vehicle_1=g1,
        gap_to_vehicle_2=g2,
        gap_to_nearest=nearest,
        mean_velocity=float(np.mean(ego["v"])),
        longitudinal_jerk=longitudinal_jerk(t, a),
        angular_jerk=angular_jerk(t, omega),
    )
