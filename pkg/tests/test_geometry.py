"""Containment checked against an independent winding-number oracle."""

import numpy as np

from urbandep import geometry
from urbandep.ingest import WardBoundary, point_in_polygon


def winding_number(px, py, ring):
    wn = 0
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        side = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)
        if y1 <= py:
            if y2 > py and side > 0:
                wn += 1
        elif y2 <= py and side < 0:
            wn -= 1
    return wn


def edge_distance(px, py, ring):
    best = np.inf
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        dx, dy = x2 - x1, y2 - y1
        t = np.clip(((px - x1) * dx + (py - y1) * dy) / (dx * dx + dy * dy), 0, 1)
        best = min(best, np.hypot(px - x1 - t * dx, py - y1 - t * dy))
    return best


def random_star_polygon(rng, n_vertices):
    """Simple polygon: vertices at sorted angles with random radii around a centre."""
    angles = np.sort(rng.uniform(0, 2 * np.pi, n_vertices))
    radii = rng.uniform(0.2, 1.0, n_vertices)
    pts = [(float(r * np.cos(a)), float(r * np.sin(a))) for a, r in zip(angles, radii)]
    if rng.random() < 0.5:
        pts = pts[::-1]
    return tuple(pts + [pts[0]])


def test_agrees_with_winding_number_oracle():
    rng = np.random.default_rng(12345)
    disagreements = checked = 0
    for _ in range(10_000):
        ring = random_star_polygon(rng, int(rng.integers(3, 12)))
        if geometry.signed_area(ring) == 0:
            continue
        ward = WardBoundary("W", "W", ring)
        px, py = rng.uniform(-1.1, 1.1, 2)
        if edge_distance(px, py, ring) < 1e-12:
            continue
        checked += 1
        disagreements += point_in_polygon((px, py), ward) != (winding_number(px, py, ring) != 0)
    assert checked > 9_900
    assert disagreements == 0


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(7)
    ring = random_star_polygon(rng, 9)
    ward = WardBoundary("W", "W", ring)
    xs, ys = rng.uniform(-1, 1, (2, 500))
    vec = ward.contains(xs, ys)
    assert vec.tolist() == [point_in_polygon((x, y), ward) for x, y in zip(xs, ys)]


def test_centroid_and_area_of_square():
    ring = ((0, 0), (2, 0), (2, 2), (0, 2), (0, 0))
    assert geometry.signed_area(ring) == 4.0
    assert geometry.signed_area(ring[::-1]) == -4.0
    assert geometry.ring_centroid(ring) == (1.0, 1.0)


def test_centroid_of_l_shape():
    # two unit-area pieces: [0,1]x[0,0.5] (centroid .5,.25) and [0,.5]x[.5,1] (.25,.75), areas .5 and .25
    ring = ((0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1), (0, 0))
    cx, cy = geometry.ring_centroid(ring)
    assert np.isclose(cx, (0.5 * 0.5 + 0.25 * 0.25) / 0.75)
    assert np.isclose(cy, (0.25 * 0.5 + 0.75 * 0.25) / 0.75)
