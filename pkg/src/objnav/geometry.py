"""Planar geometry helpers shared by the simulator and the map builder.

All routines are vectorised over numpy arrays where it matters (ray casts run
once per image column, point queries once per grid cell).  Angles are radians,
distances are metres, and polygons are simple (non self-intersecting) with
vertices listed in any winding order.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = (a + math.pi) % TWO_PI - math.pi
    if a == -math.pi:
        a = math.pi
    return a


def polygon_area(points: np.ndarray) -> float:
    """Signed shoelace area of a simple polygon given as an (N, 2) array."""
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Crossing-number inside test for arbitrary query points.

    Points exactly on an edge may land on either side; callers that care use a
    distance test instead.  Returns a boolean array shaped like ``px``.
    """
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        if not np.any(crosses):
            continue
        # x coordinate where the edge crosses the horizontal line through py
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (py - y0) / (y1 - y0)
            xi = x0 + t * (x1 - x0)
        inside ^= crosses & (px < xi)
    return inside


def point_in_polygon(x: float, y: float, poly: np.ndarray) -> bool:
    return bool(points_in_polygon(np.asarray([x]), np.asarray([y]), poly)[0])


def point_segment_distance(px: np.ndarray, py: np.ndarray,
                           ax: np.ndarray, ay: np.ndarray,
                           bx: np.ndarray, by: np.ndarray) -> np.ndarray:
    """Distance from points (px, py) to segments (a, b); all broadcastable."""
    dx = bx - ax
    dy = by - ay
    len2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / len2
    t = np.where(len2 > 0.0, np.clip(t, 0.0, 1.0), 0.0)
    cx = ax + t * dx
    cy = ay + t * dy
    return np.hypot(px - cx, py - cy)


def ray_segment_hits(ox: float, oy: float,
                     dx: np.ndarray, dy: np.ndarray,
                     ax: float, ay: float, bx: float, by: float) -> np.ndarray:
    """Ray/segment intersection distances for a bundle of ray directions.

    Returns an array of t >= 0 values (inf where the ray misses the segment).
    """
    ex = bx - ax
    ey = by - ay
    den = dx * ey - dy * ex
    wx = ax - ox
    wy = ay - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / den
        u = (wx * dy - wy * dx) / den
    eps = 1e-12
    good = (np.abs(den) > eps) & (t >= 0.0) & (u >= -eps) & (u <= 1.0 + eps)
    return np.where(good, t, np.inf)


def ray_polygon_hits(ox: float, oy: float, dx: np.ndarray, dy: np.ndarray,
                     poly: np.ndarray) -> np.ndarray:
    """Nearest boundary hit distance per ray for a simple polygon."""
    best = np.full(dx.shape, np.inf)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        best = np.minimum(best, ray_segment_hits(ox, oy, dx, dy, ax, ay, bx, by))
    return best


def ray_disc_hits(ox: float, oy: float, dx: np.ndarray, dy: np.ndarray,
                  cx: float, cy: float, radius: float) -> np.ndarray:
    """Nearest hit distance per ray against a disc boundary (inf on miss)."""
    fx = cx - ox
    fy = cy - oy
    b = dx * fx + dy * fy
    c = fx * fx + fy * fy - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t_near = b - root
    t_far = b + root
    t = np.where(t_near >= 0.0, t_near, t_far)
    return np.where(hit & (t >= 0.0), t, np.inf)
