"""2.5D world model and simulator.

A world is a bounded rectangle holding instance-labelled obstacles.  Each
obstacle has a planar footprint (polygon or disc) plus a vertical extent, which
is enough to render instance/depth images from any interior pose, answer
collision and clearance queries, and compute grid geodesics for evaluation.

Conventions: yaw is counter-clockwise radians with 0 along +x, and poses are
normalized to (-pi, pi].  "floor" / "ceiling" instances are rendered as
horizontal planes and are non-solid; everything else is solid for collisions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.ndimage
import scipy.sparse
import scipy.sparse.csgraph

from .geometry import (
    point_in_polygon,
    point_segment_distance,
    points_in_polygon,
    polygon_area,
    ray_disc_hits,
    ray_polygon_hits,
    wrap_angle,
)

PLANE_CATEGORIES = frozenset({"floor", "ceiling"})

DEFAULT_AGENT_RADIUS = 0.75
DEFAULT_RESOLUTION = 0.05

# Integer edge weights for the grid graph.  Sums of these stay exact in
# float64, which makes geodesic distances independent of summation order
# (and therefore exactly symmetric).  The straight/diagonal ratio matches
# sqrt(2) closely enough that optimal paths are the same as with exact
# sqrt(2) weights for any path short of ~30k diagonal steps.
_STRAIGHT_W = 10 ** 9
_DIAG_W = 1414213562  # round(sqrt(2) * 1e9)
_HALF_MOD = 500_000_000
_DIAG_INV = pow(_DIAG_W // 2 % _HALF_MOD, -1, _HALF_MOD)


@dataclass(frozen=True)
class Disc:
    center: Tuple[float, float]
    radius: float


@dataclass(frozen=True)
class Polygon:
    points: Tuple[Tuple[float, float], ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)


Footprint = Any  # Disc | Polygon


@dataclass(frozen=True)
class ObjectInstance:
    """One labelled obstacle: planar footprint plus a height interval."""

    instance_id: int
    footprint: Any
    z_min: float
    z_max: float
    category: str

    def __post_init__(self) -> None:
        if self.instance_id < 1:
            raise ValueError("instance_id must be >= 1 (0 is background)")
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be < z_max")
        if isinstance(self.footprint, Disc):
            if self.footprint.radius <= 0.0:
                raise ValueError("disc radius must be positive")
        elif isinstance(self.footprint, Polygon):
            if len(self.footprint.points) < 3:
                raise ValueError("polygon needs >= 3 points")
            if abs(polygon_area(self.footprint.as_array())) <= 0.0:
                raise ValueError("degenerate polygon footprint")
        else:
            raise TypeError("footprint must be Disc or Polygon")

    @property
    def solid(self) -> bool:
        return self.category not in PLANE_CATEGORIES


@dataclass(frozen=True)
class CameraParams:
    """Panoramic-column camera: equiangular columns, pinhole rows."""

    fov_deg: float = 120.0
    width: int = 85
    height: int = 64
    sensor_height: float = 1.3
    max_range: float = 10.0

    @property
    def fov_rad(self) -> float:
        return math.radians(self.fov_deg)

    @property
    def focal_px(self) -> float:
        """Square-pixel focal length implied by the horizontal field of view."""
        return (self.width / 2.0) / math.tan(self.fov_rad / 2.0)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def xy(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass
class Frame:
    """Rendered observation: per-pixel instance ids and depth."""

    frame_index: int
    ids: np.ndarray      # (H, W) int32, 0 = background
    depth: np.ndarray    # (H, W) float64, inf where ids == 0
    pose: Pose
    cam: CameraParams
    categories: Dict[int, str] = field(default_factory=dict)

    def instance_list(self) -> List[int]:
        present = np.unique(self.ids)
        return [int(i) for i in present if i != 0]

    def mask(self, instance_id: int) -> np.ndarray:
        return self.ids == instance_id


class World:
    """Immutable obstacle layout; all queries are pure functions of it."""

    def __init__(self, obstacles: Sequence[ObjectInstance],
                 bounds: Tuple[float, float, float, float],
                 resolution: float = DEFAULT_RESOLUTION) -> None:
        x0, y0, x1, y1 = (float(v) for v in bounds)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("bounds must span a positive area")
        if resolution <= 0.0:
            raise ValueError("resolution must be positive")
        self.bounds = (x0, y0, x1, y1)
        self.resolution = float(resolution)
        self.obstacles: List[ObjectInstance] = list(obstacles)
        seen = set()
        for obs in self.obstacles:
            if obs.instance_id in seen:
                raise ValueError(f"duplicate instance_id {obs.instance_id}")
            seen.add(obs.instance_id)
            self._check_within_bounds(obs)
        self.solids = [o for o in self.obstacles if o.solid]
        self.planes = [o for o in self.obstacles if not o.solid]
        self._by_id = {o.instance_id: o for o in self.obstacles}
        self._build_solid_arrays()
        self._grids: Dict[float, "OccupancyGrid"] = {}

    # -- construction helpers -------------------------------------------------

    def _check_within_bounds(self, obs: ObjectInstance) -> None:
        x0, y0, x1, y1 = self.bounds
        eps = 1e-9
        if isinstance(obs.footprint, Disc):
            (cx, cy), r = obs.footprint.center, obs.footprint.radius
            ok = (cx - r >= x0 - eps and cx + r <= x1 + eps
                  and cy - r >= y0 - eps and cy + r <= y1 + eps)
        else:
            pts = obs.footprint.as_array()
            ok = (pts[:, 0].min() >= x0 - eps and pts[:, 0].max() <= x1 + eps
                  and pts[:, 1].min() >= y0 - eps and pts[:, 1].max() <= y1 + eps)
        if not ok:
            raise ValueError(f"instance {obs.instance_id} footprint exceeds bounds")

    def _build_solid_arrays(self) -> None:
        segs = []
        discs = []
        self._solid_polys: List[np.ndarray] = []
        for obs in self.solids:
            if isinstance(obs.footprint, Disc):
                (cx, cy), r = obs.footprint.center, obs.footprint.radius
                discs.append((cx, cy, r))
            else:
                pts = obs.footprint.as_array()
                self._solid_polys.append(pts)
                n = len(pts)
                for i in range(n):
                    ax, ay = pts[i]
                    bx, by = pts[(i + 1) % n]
                    segs.append((ax, ay, bx, by))
        self._solid_segs = np.asarray(segs, dtype=float).reshape(-1, 4)
        self._solid_discs = np.asarray(discs, dtype=float).reshape(-1, 3)

    # -- basic queries --------------------------------------------------------

    def instance(self, instance_id: int) -> ObjectInstance:
        return self._by_id[instance_id]

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def point_in_solid(self, x: float, y: float) -> bool:
        for cx, cy, r in self._solid_discs:
            if (x - cx) ** 2 + (y - cy) ** 2 < r * r:
                return True
        for pts in self._solid_polys:
            if point_in_polygon(x, y, pts):
                return True
        return False

    def clearance(self, x: float, y: float) -> float:
        """Distance to the nearest solid footprint or world edge (0 inside)."""
        x0, y0, x1, y1 = self.bounds
        best = min(x - x0, x1 - x, y - y0, y1 - y)
        if best < 0.0:
            return 0.0
        if len(self._solid_segs):
            s = self._solid_segs
            d = point_segment_distance(x, y, s[:, 0], s[:, 1], s[:, 2], s[:, 3])
            best = min(best, float(d.min()))
        if len(self._solid_discs):
            c = self._solid_discs
            d = np.hypot(x - c[:, 0], y - c[:, 1]) - c[:, 2]
            best = min(best, float(d.min()))
        if best > 0.0 and self.point_in_solid(x, y):
            return 0.0
        return max(best, 0.0)

    def grid(self, agent_radius: float = DEFAULT_AGENT_RADIUS) -> "OccupancyGrid":
        key = round(float(agent_radius), 9)
        if key not in self._grids:
            self._grids[key] = OccupancyGrid(self, agent_radius)
        return self._grids[key]

    def __getstate__(self) -> Dict[str, Any]:
        state = self.__dict__.copy()
        state["_grids"] = {}  # caches are per-process; rebuilt on demand
        return state

    # -- serialization --------------------------------------------------------

    def to_json_dict(self) -> Dict[str, Any]:
        obstacles = []
        for obs in self.obstacles:
            if isinstance(obs.footprint, Disc):
                shape = {"type": "disc",
                         "center": list(obs.footprint.center),
                         "radius": obs.footprint.radius}
            else:
                shape = {"type": "polygon",
                         "points": [list(p) for p in obs.footprint.points]}
            obstacles.append({"id": obs.instance_id,
                              "category": obs.category,
                              "z": [obs.z_min, obs.z_max],
                              "shape": shape})
        return {"version": 1,
                "bounds": list(self.bounds),
                "resolution": self.resolution,
                "obstacles": obstacles}

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "World":
        if data.get("version") != 1:
            raise ValueError(f"unsupported world version {data.get('version')!r}")
        obstacles = []
        for rec in data["obstacles"]:
            shape = rec["shape"]
            if shape["type"] == "disc":
                fp: Any = Disc(tuple(shape["center"]), float(shape["radius"]))
            elif shape["type"] == "polygon":
                fp = Polygon(tuple(tuple(p) for p in shape["points"]))
            else:
                raise ValueError(f"unknown shape type {shape['type']!r}")
            obstacles.append(ObjectInstance(
                instance_id=int(rec["id"]), footprint=fp,
                z_min=float(rec["z"][0]), z_max=float(rec["z"][1]),
                category=rec["category"]))
        return cls(obstacles, tuple(data["bounds"]), float(data["resolution"]))


def save_world(world: World, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(world.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_world(path: str) -> World:
    with open(path) as fh:
        return World.from_json_dict(json.load(fh))


# -- rendering ----------------------------------------------------------------

def render(world: World, pose: Pose, cam: CameraParams,
           frame_index: int = 0) -> Frame:
    """Render instance-id and depth images from a pose.

    Columns are cast as equiangular rays across the horizontal field of view;
    each solid obstacle covers the rows whose view tangents fall inside its
    projected height interval at the hit distance.  Floor/ceiling instances
    are intersected as horizontal planes.  Per pixel, the nearest cover wins.
    """
    if not world.contains(pose.x, pose.y):
        raise ValueError("camera pose outside world bounds")
    if world.point_in_solid(pose.x, pose.y):
        raise ValueError("camera pose inside a solid obstacle")

    W, H = cam.width, cam.height
    fov = cam.fov_rad
    cols = np.arange(W)
    bearing = pose.yaw + fov * (0.5 - (cols + 0.5) / W)
    dx = np.cos(bearing)
    dy = np.sin(bearing)
    tan_v = ((H / 2.0) - (np.arange(H) + 0.5)) / cam.focal_px  # (H,), top > 0
    h = cam.sensor_height

    best_d = np.full((W, H), np.inf)
    best_id = np.zeros((W, H), dtype=np.int32)

    for obs in world.solids:
        if isinstance(obs.footprint, Disc):
            (cx, cy), r = obs.footprint.center, obs.footprint.radius
            t = ray_disc_hits(pose.x, pose.y, dx, dy, cx, cy, r)
        else:
            t = ray_polygon_hits(pose.x, pose.y, dx, dy, obs.footprint.as_array())
        t = np.where(t <= cam.max_range, t, np.inf)
        hit = np.isfinite(t)
        if not hit.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = (obs.z_min - h) / t
            hi = (obs.z_max - h) / t
        cover = (hit[:, None]
                 & (tan_v[None, :] >= lo[:, None])
                 & (tan_v[None, :] <= hi[:, None]))
        d = np.where(cover, t[:, None], np.inf)
        closer = d < best_d
        best_d = np.where(closer, d, best_d)
        best_id = np.where(closer, obs.instance_id, best_id)

    for obs in world.planes:
        z_surf = obs.z_max if obs.category == "floor" else obs.z_min
        delta = z_surf - h
        with np.errstate(divide="ignore", invalid="ignore"):
            d_row = delta / tan_v  # (H,)
        valid = np.isfinite(d_row) & (d_row > 0.0) & (d_row <= cam.max_range)
        if not valid.any():
            continue
        d_row = np.where(valid, d_row, np.inf)
        with np.errstate(invalid="ignore"):
            px = pose.x + d_row[None, :] * dx[:, None]
            py = pose.y + d_row[None, :] * dy[:, None]
        if isinstance(obs.footprint, Disc):
            (cx, cy), r = obs.footprint.center, obs.footprint.radius
            inside = (px - cx) ** 2 + (py - cy) ** 2 <= r * r
        else:
            inside = points_in_polygon(px, py, obs.footprint.as_array())
        d = np.where(inside & valid[None, :], d_row[None, :], np.inf)
        closer = d < best_d
        best_d = np.where(closer, d, best_d)
        best_id = np.where(closer, obs.instance_id, best_id)

    ids = best_id.T.astype(np.int32)
    depth = best_d.T.copy()
    categories = {int(iid): world.instance(int(iid)).category
                  for iid in np.unique(ids) if iid != 0}
    return Frame(frame_index=frame_index, ids=ids, depth=depth,
                 pose=pose, cam=cam, categories=categories)


# -- occupancy grid and geodesics ---------------------------------------------

class OccupancyGrid:
    """Inflated free-space grid over a world, with cached distance fields.

    Distances use 8-connected moves costed ``resolution`` straight and
    ``sqrt(2) * resolution`` diagonal; diagonal steps are allowed between any
    two free cells sharing a corner.
    """

    _MAX_CACHED_FIELDS = 16

    def __init__(self, world: World, agent_radius: float) -> None:
        if agent_radius < 0.0:
            raise ValueError("agent_radius must be >= 0")
        self.world = world
        self.agent_radius = float(agent_radius)
        self.res = world.resolution
        x0, y0, x1, y1 = world.bounds
        self.x0, self.y0 = x0, y0
        self.nx = max(1, int(round((x1 - x0) / self.res)))
        self.ny = max(1, int(round((y1 - y0) / self.res)))
        if self.nx * self.ny * _DIAG_W * 2 > 2 ** 53:
            raise ValueError("grid too large for exact integer distances")
        self._build_free_mask()
        self._build_graph()
        self._fields: Dict[Tuple[int, int], np.ndarray] = {}
        self._int_fields: Dict[Tuple[int, int], np.ndarray] = {}

    def _build_free_mask(self) -> None:
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.res
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.res
        X, Y = np.meshgrid(xs, ys)  # (ny, nx)
        solid = np.zeros((self.ny, self.nx), dtype=bool)
        for obs in self.world.solids:
            if isinstance(obs.footprint, Disc):
                (cx, cy), r = obs.footprint.center, obs.footprint.radius
                solid |= (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
            else:
                solid |= points_in_polygon(X, Y, obs.footprint.as_array())
        dist_to_solid = scipy.ndimage.distance_transform_edt(~solid) * self.res
        x1, y1 = self.world.bounds[2], self.world.bounds[3]
        edge = np.minimum(np.minimum(X - self.x0, x1 - X),
                          np.minimum(Y - self.y0, y1 - Y))
        # The transform measures to occupied cell *centres*; a solid can extend
        # almost a cell diagonal past the nearest marked centre, so inflate by
        # that much extra to guarantee true clearance >= agent_radius on every
        # free cell.
        safety = math.sqrt(2.0) * self.res
        self.free = ((dist_to_solid >= self.agent_radius + safety)
                     & (edge >= self.agent_radius))
        self.cell_xy = (xs, ys)

    def _build_graph(self) -> None:
        idx = np.full((self.ny, self.nx), -1, dtype=np.int64)
        free_cells = np.argwhere(self.free)
        idx[self.free] = np.arange(len(free_cells))
        self._idx = idx
        self._free_cells = free_cells
        rows: List[np.ndarray] = []
        cols_: List[np.ndarray] = []
        data: List[np.ndarray] = []
        offsets = [((0, 1), _STRAIGHT_W), ((1, 0), _STRAIGHT_W),
                   ((1, 1), _DIAG_W), ((1, -1), _DIAG_W)]
        for (oy, ox), w in offsets:
            sy0, sy1 = (0, self.ny - oy) if oy >= 0 else (-oy, self.ny)
            sx0, sx1 = (0, self.nx - ox) if ox >= 0 else (-ox, self.nx)
            a = idx[sy0:sy1, sx0:sx1]
            b = idx[sy0 + oy:sy1 + oy, sx0 + ox:sx1 + ox]
            ok = (a >= 0) & (b >= 0)
            ra, rb = a[ok], b[ok]
            rows.append(ra)
            cols_.append(rb)
            data.append(np.full(len(ra), float(w)))
            rows.append(rb)
            cols_.append(ra)
            data.append(np.full(len(ra), float(w)))
        n = len(free_cells)
        if rows:
            self._graph = scipy.sparse.csr_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols_))),
                shape=(n, n))
        else:
            self._graph = scipy.sparse.csr_matrix((n, n))

    # -- cell addressing ------------------------------------------------------

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        if not self.world.contains(x, y):
            raise ValueError(f"point ({x:.3f}, {y:.3f}) outside world bounds")
        ix = min(int((x - self.x0) / self.res), self.nx - 1)
        iy = min(int((y - self.y0) / self.res), self.ny - 1)
        return iy, ix

    def cell_center(self, iy: int, ix: int) -> Tuple[float, float]:
        return (self.x0 + (ix + 0.5) * self.res, self.y0 + (iy + 0.5) * self.res)

    def is_free(self, x: float, y: float) -> bool:
        iy, ix = self.cell_of(x, y)
        return bool(self.free[iy, ix])

    def snap_free(self, x: float, y: float, max_radius: float = 2.0) -> Tuple[float, float]:
        """Center of the nearest free cell, searching outward in rings."""
        iy, ix = self.cell_of(x, y)
        if self.free[iy, ix]:
            return self.cell_center(iy, ix)
        max_r = int(math.ceil(max_radius / self.res))
        best = None
        best_d2 = None
        for r in range(1, max_r + 1):
            y_lo, y_hi = max(iy - r, 0), min(iy + r, self.ny - 1)
            x_lo, x_hi = max(ix - r, 0), min(ix + r, self.nx - 1)
            sub = self.free[y_lo:y_hi + 1, x_lo:x_hi + 1]
            if sub.any():
                cand = np.argwhere(sub)
                d2 = (cand[:, 0] + y_lo - iy) ** 2 + (cand[:, 1] + x_lo - ix) ** 2
                k = int(np.argmin(d2))
                if best is None or d2[k] < best_d2:
                    best = (cand[k, 0] + y_lo, cand[k, 1] + x_lo)
                    best_d2 = int(d2[k])
                if best_d2 <= r * r:
                    break
        if best is None:
            raise ValueError("no free cell within snap radius")
        return self.cell_center(*best)

    # -- distances ------------------------------------------------------------

    def _require_free(self, x: float, y: float) -> Tuple[int, int]:
        iy, ix = self.cell_of(x, y)
        if not self.free[iy, ix]:
            raise ValueError(
                f"point ({x:.3f}, {y:.3f}) lies inside an inflated obstacle")
        return iy, ix

    def _int_field(self, src: Tuple[int, int]) -> np.ndarray:
        if src not in self._int_fields:
            if len(self._int_fields) >= self._MAX_CACHED_FIELDS:
                self._int_fields.pop(next(iter(self._int_fields)))
                self._fields.pop(next(iter(self._fields)))
            node = self._idx[src]
            dist = scipy.sparse.csgraph.dijkstra(self._graph, indices=[node])[0]
            self._int_fields[src] = dist
            self._fields[src] = _decode_int_distance(dist, self.res)
        return self._int_fields[src]

    def field_meters(self, src_xy: Tuple[float, float]) -> "DistanceField":
        src = self._require_free(*src_xy)
        self._int_field(src)
        return DistanceField(self, src, self._fields[src])

    def distance(self, a_xy: Tuple[float, float], b_xy: Tuple[float, float]) -> float:
        field = self.field_meters(a_xy)
        return field.lookup(*b_xy)

    def shortest_path_cells(self, a_xy: Tuple[float, float],
                            b_xy: Tuple[float, float]) -> List[Tuple[float, float]]:
        """Cell-center polyline of a grid-shortest path from a to b."""
        a = self._require_free(*a_xy)
        b = self._require_free(*b_xy)
        na, nb = int(self._idx[a]), int(self._idx[b])
        dist, pred = scipy.sparse.csgraph.dijkstra(
            self._graph, indices=[na], return_predecessors=True)
        if not np.isfinite(dist[0, nb]):
            raise ValueError("goal not reachable from start on the grid")
        chain = [nb]
        while chain[-1] != na:
            chain.append(int(pred[0, chain[-1]]))
        chain.reverse()
        cells = self._free_cells[chain]
        return [self.cell_center(int(cy), int(cx)) for cy, cx in cells]

    def line_of_sight(self, a_xy: Tuple[float, float],
                      b_xy: Tuple[float, float]) -> bool:
        ax, ay = a_xy
        bx, by = b_xy
        length = math.hypot(bx - ax, by - ay)
        n = max(2, int(math.ceil(length / (self.res * 0.5))) + 1)
        ts = np.linspace(0.0, 1.0, n)
        xs = ax + ts * (bx - ax)
        ys = ay + ts * (by - ay)
        ixs = np.clip(((xs - self.x0) / self.res).astype(int), 0, self.nx - 1)
        iys = np.clip(((ys - self.y0) / self.res).astype(int), 0, self.ny - 1)
        return bool(self.free[iys, ixs].all())


def _decode_int_distance(dist: np.ndarray, res: float) -> np.ndarray:
    """Convert integer-weight path costs back to metres.

    The integer cost uniquely determines the straight/diagonal step counts,
    so the metric value can be formed in one expression per cell.
    """
    out = np.full(dist.shape, np.inf)
    finite = np.isfinite(dist)
    if not finite.any():
        return out
    c = np.rint(dist[finite]).astype(np.int64)
    g = (c // 2 % _HALF_MOD) * _DIAG_INV % _HALF_MOD
    s = (c - _DIAG_W * g) // _STRAIGHT_W
    if (s < 0).any() or ((_STRAIGHT_W * s + _DIAG_W * g) != c).any():
        raise ArithmeticError("integer distance decode failed")
    out[finite] = res * (s + math.sqrt(2.0) * g)
    return out


@dataclass
class DistanceField:
    """Geodesic distances from one source cell to everywhere, in metres."""

    grid: OccupancyGrid
    source: Tuple[int, int]
    meters: np.ndarray  # flat over free cells

    def lookup(self, x: float, y: float, snap_radius: float = 0.25) -> float:
        """Distance at the free cell containing (or nearest to) the point.

        The conservative inflation means an agent hugging an obstacle can
        stand just outside the free set, so queries snap within a small
        radius before giving up.
        """
        try:
            iy, ix = self.grid._require_free(x, y)
        except ValueError:
            fx, fy = self.grid.snap_free(x, y, max_radius=snap_radius)
            iy, ix = self.grid._require_free(fx, fy)
        return float(self.meters[self.grid._idx[iy, ix]])


def geodesic_distance(world: World, a: Tuple[float, float], b: Tuple[float, float],
                      agent_radius: float = DEFAULT_AGENT_RADIUS) -> float:
    """Grid geodesic between two free points (inf if disconnected)."""
    return world.grid(agent_radius).distance(a, b)


# -- trajectory construction --------------------------------------------------

TRANSLATION_STEP = 0.2
ROTATION_STEP = math.radians(15.0)


def _shortcut_polyline(grid: OccupancyGrid,
                       pts: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Greedy line-of-sight simplification; keeps first and last points."""
    if len(pts) <= 2:
        return list(pts)
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts) and grid.line_of_sight(pts[i], pts[j + 1]):
            j += 1
        out.append(pts[j])
        i = j
    return out


def discretize_polyline(start_pose: Pose, waypoints: Sequence[Tuple[float, float]],
                        step: float = TRANSLATION_STEP,
                        turn: float = ROTATION_STEP) -> List[Pose]:
    """Expand a polyline into alternating pure rotations and translations.

    Rotations snap each turn to the nearest multiple of ``turn``; translations
    advance ``step`` at a time along the exact segment with a shorter final
    step, so summed translation lengths equal the polyline length.  The start
    pose itself is not included in the returned list.
    """
    poses: List[Pose] = []
    x, y, yaw = start_pose.x, start_pose.y, start_pose.yaw
    for wx, wy in waypoints:
        seg_dx = wx - x
        seg_dy = wy - y
        length = math.hypot(seg_dx, seg_dy)
        if length <= 1e-12:
            continue
        heading = math.atan2(seg_dy, seg_dx)
        delta = wrap_angle(heading - yaw)
        n_rot = int(round(abs(delta) / turn))
        sign = 1.0 if delta >= 0.0 else -1.0
        for _ in range(n_rot):
            yaw = wrap_angle(yaw + sign * turn)
            poses.append(Pose(x, y, yaw))
        sx, sy = x, y
        ux, uy = seg_dx / length, seg_dy / length
        n_full = int(math.floor(length / step + 1e-9))
        rem = length - n_full * step
        n_steps = n_full + (1 if rem > 1e-9 else 0)
        for k in range(1, n_steps + 1):
            if k == n_steps:
                x, y = wx, wy
            else:
                x, y = sx + k * step * ux, sy + k * step * uy
            poses.append(Pose(x, y, yaw))
    return poses


def shortest_path_trajectory(world: World, start: Pose,
                             goal_xy: Tuple[float, float],
                             agent_radius: float = DEFAULT_AGENT_RADIUS,
                             step: float = TRANSLATION_STEP,
                             turn: float = ROTATION_STEP) -> List[Pose]:
    """Discretized shortest collision-free route from a pose to a point.

    The grid path is simplified by line-of-sight shortcutting first, so the
    result walks straight segments instead of grid staircases.  Returns an
    empty list when start and goal share a grid cell.
    """
    grid = world.grid(agent_radius)
    a = grid._require_free(start.x, start.y)
    b = grid._require_free(*goal_xy)
    if a == b:
        return []
    cells = grid.shortest_path_cells(start.xy, goal_xy)
    pts = [start.xy] + cells[1:-1] + [tuple(goal_xy)]
    pts = _shortcut_polyline(grid, pts)
    return discretize_polyline(start, pts[1:], step=step, turn=turn)


# -- agent stepping -----------------------------------------------------------

def step_agent(world: World, pose: Pose, cmd: Any, dt: float = 1.0,
               agent_radius: float = DEFAULT_AGENT_RADIUS) -> Tuple[Pose, bool]:
    """Advance a unicycle one control period with swept-disc collision.

    Yaw integrates first, then the position advances along the new heading.
    If the move would bring the agent disc into contact with a solid obstacle
    (or the world edge) the position is clamped at contact and the collision
    flag is set; the rotation is kept either way.
    """
    yaw = wrap_angle(pose.yaw + cmd.omega * dt)
    dist = cmd.v * dt
    if dist <= 0.0:
        return Pose(pose.x, pose.y, yaw), False
    ux, uy = math.cos(yaw), math.sin(yaw)
    eps = 1e-9

    def free(s: float) -> bool:
        return world.clearance(pose.x + s * ux, pose.y + s * uy) >= agent_radius - eps

    if free(dist):
        return Pose(pose.x + dist * ux, pose.y + dist * uy, yaw), False
    lo, hi = 0.0, dist
    if not free(0.0):
        lo = 0.0
        hi = 0.0
    for _ in range(40):
        if hi - lo <= 1e-12:
            break
        mid = 0.5 * (lo + hi)
        if free(mid):
            lo = mid
        else:
            hi = mid
    return Pose(pose.x + lo * ux, pose.y + lo * uy, yaw), True
