"""Planar ring geometry: containment, signed area, centroid.

Coordinates are treated as planar (lon, lat) pairs; no projection is done.
"""

from __future__ import annotations

import numpy as np


def ring_array(ring) -> np.ndarray:
    return np.asarray(ring, dtype=float).reshape(-1, 2)


def signed_area(ring) -> float:
    """Shoelace area of a closed ring; positive when counter-clockwise."""
    r = ring_array(ring)
    x, y = r[:-1, 0], r[:-1, 1]
    x1, y1 = r[1:, 0], r[1:, 1]
    return 0.5 * float(np.sum(x * y1 - x1 * y))


def ring_centroid(ring) -> tuple[float, float]:
    """Area-weighted centroid of a closed ring (vertex mean if the area is zero)."""
    r = ring_array(ring)
    x, y = r[:-1, 0], r[:-1, 1]
    x1, y1 = r[1:, 0], r[1:, 1]
    cross = x * y1 - x1 * y
    a = 0.5 * cross.sum()
    if a == 0.0:
        return float(x.mean()), float(y.mean())
    cx = float(((x + x1) * cross).sum() / (6.0 * a))
    cy = float(((y + y1) * cross).sum() / (6.0 * a))
    return cx, cy


def ring_contains(ring, px, py) -> tuple[np.ndarray, np.ndarray]:
    """Crossing-number containment for many points against one closed ring.

    Returns
    -------
    inside : bool array
        Odd crossing parity (strict interior, boundary points undefined).
    on_edge : bool array
        Point lies exactly on an edge or vertex.
    """
    r = ring_array(ring)
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(r[:-1], r[1:]):
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        within = (
            (px >= min(x1, x2)) & (px <= max(x1, x2))
            & (py >= min(y1, y2)) & (py <= max(y1, y2))
        )
        on_edge |= (cross == 0.0) & within
        straddles = (y1 > py) != (y2 > py)
        if y2 != y1:
            with np.errstate(invalid="ignore", divide="ignore"):
                xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= straddles & (px < xint)
    return inside, on_edge


def polygon_contains(exterior, holes, px, py) -> np.ndarray:
    """Boundary-inclusive containment in a polygon with holes.

    A point on the exterior edge or on a hole edge counts as inside; a point
    strictly inside any hole does not.
    """
    inside, on_edge = ring_contains(exterior, px, py)
    result = inside | on_edge
    for hole in holes:
        h_in, h_edge = ring_contains(hole, px, py)
        result &= ~(h_in & ~h_edge)
    return result
