"""Lane geometry: centerline polylines, projection, and adjacency queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LANE_WIDTH = 3.5
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8


class Polyline:
    """Piecewise-linear curve parameterized by arc length."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-9):
            raise ValueError("polyline has repeated points; arc length must be strictly monotone")
        self.points = pts
        self._seg = seg
        self._seg_len = seg_len
        self._unit = seg / seg_len[:, None]
        self.s = np.concatenate([[0.0], np.cumsum(seg_len)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def project(self, p):
        """Project points onto the curve.

        Returns ``(s, d, heading)`` with ``d`` the signed lateral offset
        (positive to the left of the travel direction). Points beyond either
        end are extrapolated along the end segments.
        """
        p = np.asarray(p, dtype=float)
        if len(self._seg_len) == 1:
            # single segment: plain line coordinates, extrapolated both ways
            u = self._unit[0]
            rel = p - self.points[0]
            s = rel[..., 0] * u[0] + rel[..., 1] * u[1]
            cross = u[0] * rel[..., 1] - u[1] * rel[..., 0]
            return s, cross, np.full(s.shape, np.arctan2(u[1], u[0]))
        flat = p.reshape(-1, 2)
        rel = flat[:, None, :] - self.points[None, :-1, :]
        along = np.einsum("nkj,kj->nk", rel, self._unit)
        clamped = np.clip(along, 0.0, self._seg_len)
        foot = self.points[None, :-1, :] + clamped[..., None] * self._unit[None]
        dist2 = np.sum((flat[:, None, :] - foot) ** 2, axis=-1)
        k = np.argmin(dist2, axis=1)
        n = np.arange(len(flat))
        # extrapolate past the ends so s stays monotone off the curve
        along_k = along[n, k]
        first = k == 0
        last = k == len(self._seg_len) - 1
        along_k = np.where(first & (along_k < 0), along_k, clamped[n, k])
        along_k = np.where(last & (along[n, k] > self._seg_len[k]), along[n, k], along_k)
        u = self._unit[k]
        cross = u[:, 0] * rel[n, k, 1] - u[:, 1] * rel[n, k, 0]
        s = self.s[k] + along_k
        heading = np.arctan2(u[:, 1], u[:, 0])
        shape = p.shape[:-1]
        return s.reshape(shape), cross.reshape(shape), heading.reshape(shape)

    def point_at(self, s, d=0.0):
        """Position at arc length ``s`` with lateral offset ``d`` (extrapolates)."""
        s = np.asarray(s, dtype=float)
        d = np.broadcast_to(np.asarray(d, dtype=float), s.shape)
        k = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self._seg_len) - 1)
        u = self._unit[k]
        base = self.points[k] + (s - self.s[k])[..., None] * u
        normal = np.stack([-u[..., 1], u[..., 0]], axis=-1)
        return base + d[..., None] * normal

    def heading_at(self, s):
        s = np.asarray(s, dtype=float)
        k = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self._seg_len) - 1)
        u = self._unit[k]
        return np.arctan2(u[..., 1], u[..., 0])


@dataclass
class Lane:
    lane_id: str
    centerline: Polyline
    width: float = LANE_WIDTH
    connector: bool = False

    def __post_init__(self):
        if self.width <= VEHICLE_WIDTH:
            raise ValueError(f"lane {self.lane_id}: width must exceed vehicle width")


@dataclass
class LaneMap:
    lanes: list[Lane] = field(default_factory=list)

    def __post_init__(self):
        ids = [ln.lane_id for ln in self.lanes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate lane ids")
        self._by_id = {ln.lane_id: ln for ln in self.lanes}

    def __getitem__(self, lane_id: str) -> Lane:
        return self._by_id[lane_id]

    def __contains__(self, lane_id: str) -> bool:
        return lane_id in self._by_id

    def nearest_lane(self, pos, heading: float | None = None, *,
                     include_connectors: bool = True, max_offset: float | None = None):
        """Return ``(lane, s, d)`` for the closest heading-compatible lane or ``None``.

        A lane counts as on-lane when ``|d| <= width/2`` unless ``max_offset``
        overrides that radius.
        """
        best = None
        for lane in self.lanes:
            if lane.connector and not include_connectors:
                continue
            s, d, hdg = lane.centerline.project(pos)
            s, d, hdg = float(s), float(d), float(hdg)
            if s < -1.0 or s > lane.centerline.length + 1.0:
                continue
            if heading is not None and np.cos(heading - hdg) < 0.5:
                continue
            limit = lane.width / 2 if max_offset is None else max_offset
            if abs(d) > limit:
                continue
            if best is None or abs(d) < abs(best[2]):
                best = (lane, s, d)
        return best

    def adjacent_lanes(self, lane: Lane, pos) -> list[tuple[Lane, float, float]]:
        """Parallel lanes whose centerline sits about one lane width away."""
        out = []
        _, _, hdg0 = lane.centerline.project(pos)
        for other in self.lanes:
            if other is lane or other.connector:
                continue
            s, d, hdg = (float(v) for v in other.centerline.project(pos))
            if s < 0 or s > other.centerline.length:
                continue
            if np.cos(hdg - float(hdg0)) < 0.95:
                continue
            if 0.5 * lane.width < abs(d) < 1.5 * lane.width:
                out.append((other, s, d))
        out.sort(key=lambda item: abs(item[2]))
        return out


def straight_lane(lane_id: str, start, end, width: float = LANE_WIDTH) -> Lane:
    return Lane(lane_id, Polyline([start, end]), width)


def arc_points(center, radius: float, a0: float, a1: float, n: int = 12) -> np.ndarray:
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)
