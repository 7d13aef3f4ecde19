"""Oriented-rectangle footprints and separating-axis overlap tests."""

from __future__ import annotations

import numpy as np

from ..lanes import VEHICLE_LENGTH, VEHICLE_WIDTH


def footprint(x: float, y: float, theta: float, length: float = VEHICLE_LENGTH,
              width: float = VEHICLE_WIDTH) -> np.ndarray:
    """Corners (4, 2) of a box centred at (x, y), counter-clockwise."""
    c, s = np.cos(theta), np.sin(theta)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def _axes(corners: np.ndarray) -> np.ndarray:
    edges = np.roll(corners, -1, axis=0) - corners
    normals = np.column_stack([-edges[:, 1], edges[:, 0]])
    return normals[:2] / np.linalg.norm(normals[:2], axis=1, keepdims=True)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """True when two convex quadrilaterals overlap (touching counts as overlap)."""
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def vehicles_collide(s1, s2, length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> bool:
    """Collision test for two states ``[x, y, theta, ...]``."""
    if np.hypot(s1[0] - s2[0], s1[1] - s2[1]) > np.hypot(length, width):
        return False
    return boxes_overlap(footprint(s1[0], s1[1], s1[2], length, width),
                         footprint(s2[0], s2[1], s2[2], length, width))
