"""Procedural multi-room worlds for mapping and navigation runs.

Rooms sit on a small grid separated by walls with door gaps; every room gets
tiled floor and a ceiling plus a few wall-mounted "goalable" objects placed
clear of the door funnels, so room interiors stay open and the rooms remain
mutually reachable for a fat agent disc.
"""
from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np

from .geometry import point_segment_distance
from .world import (
    DEFAULT_AGENT_RADIUS,
    DEFAULT_RESOLUTION,
    Disc,
    ObjectInstance,
    Polygon,
    World,
)


def _rect(x0: float, y0: float, x1: float, y1: float) -> Polygon:
    return Polygon(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


def _segment_distance(px: float, py: float, a: Tuple[float, float],
                      b: Tuple[float, float]) -> float:
    return point_segment_distance(px, py, a[0], a[1], b[0], b[1])


class _IdSource:
    def __init__(self) -> None:
        self.next_id = 1

    def take(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i


def generate_world(seed: int,
                   rooms: int = 4,
                   objects_per_room: int = 7,
                   room_size: float = 6.0,
                   door_width: float = 2.4,
                   wall_thickness: float = 0.2,
                   wall_height: float = 2.6,
                   wall_piece_length: float = 1.2,
                   lane_clearance: float = 1.5,
                   with_ceiling: bool = True,
                   resolution: float = DEFAULT_RESOLUTION,
                   agent_radius: float = DEFAULT_AGENT_RADIUS) -> World:
    """Build a connected multi-room world; deterministic in ``seed``."""
    if rooms < 1:
        raise ValueError("rooms must be >= 1")
    if door_width <= 2.0 * agent_radius:
        raise ValueError("door_width too small for the agent radius")
    for attempt in range(24):
        rng = np.random.default_rng((max(seed, 0), attempt))
        world = _try_generate(rng, rooms, objects_per_room, room_size,
                              door_width, wall_thickness, wall_height,
                              wall_piece_length, lane_clearance,
                              with_ceiling, resolution)
        if _rooms_connected(world, agent_radius):
            return world
    raise RuntimeError(f"could not generate a connected world for seed {seed}")


def _try_generate(rng: np.random.Generator, rooms: int, objects_per_room: int,
                  S: float, door_w: float, T: float, wall_h: float,
                  piece_len: float, lane_clearance: float, with_ceiling: bool,
                  resolution: float) -> World:
    n_rows = 1 if rooms <= 3 else 2
    n_cols = int(math.ceil(rooms / n_rows))
    W = n_cols * S + (n_cols + 1) * T
    H = n_rows * S + (n_rows + 1) * T
    ids = _IdSource()
    obstacles: List[ObjectInstance] = []

    def add(footprint, z0, z1, cat) -> ObjectInstance:
        obs = ObjectInstance(ids.take(), footprint, z0, z1, cat)
        obstacles.append(obs)
        return obs

    def room_rect(r: int, c: int) -> Tuple[float, float, float, float]:
        x0 = T + c * (S + T)
        y0 = T + r * (S + T)
        return (x0, y0, x0 + S, y0 + S)

    used = {(r, c) for r in range(n_rows) for c in range(n_cols)
            if r * n_cols + c < rooms}

    def add_wall_run(x0: float, y0: float, x1: float, y1: float,
                     two_faced: bool = False) -> None:
        # Short pieces keep each wall instance's visible extent close to its
        # anchor point, which is what the bearing controller steers by.
        # Walls separating two walkable rooms get one instance per face so a
        # face's map cost reflects the walk around, not a through-wall hop.
        if x1 - x0 >= y1 - y0:
            n = max(1, int(math.ceil((x1 - x0) / piece_len)))
            cuts = np.linspace(x0, x1, n + 1)
            ym = (y0 + y1) / 2.0
            for a, b in zip(cuts, cuts[1:]):
                if two_faced:
                    add(_rect(float(a), y0, float(b), ym), 0.0, wall_h, "wall")
                    add(_rect(float(a), ym, float(b), y1), 0.0, wall_h, "wall")
                else:
                    add(_rect(float(a), y0, float(b), y1), 0.0, wall_h, "wall")
        else:
            n = max(1, int(math.ceil((y1 - y0) / piece_len)))
            cuts = np.linspace(y0, y1, n + 1)
            xm = (x0 + x1) / 2.0
            for a, b in zip(cuts, cuts[1:]):
                if two_faced:
                    add(_rect(x0, float(a), xm, float(b)), 0.0, wall_h, "wall")
                    add(_rect(xm, float(a), x1, float(b)), 0.0, wall_h, "wall")
                else:
                    add(_rect(x0, float(a), x1, float(b)), 0.0, wall_h, "wall")

    # outer shell
    add_wall_run(0.0, 0.0, W, T)
    add_wall_run(0.0, H - T, W, H)
    add_wall_run(0.0, T, T, H - T)
    add_wall_run(W - T, T, W, H - T)

    # unused grid cells: visible perimeter slabs plus one hidden filler block
    for r in range(n_rows):
        for c in range(n_cols):
            if (r, c) not in used:
                x0, y0, x1, y1 = room_rect(r, c)
                add_wall_run(x0 - T, y0 - T, x1 + T, y0)
                add_wall_run(x0 - T, y1, x1 + T, y1 + T)
                add_wall_run(x0 - T, y0, x0, y1)
                add_wall_run(x1, y0, x1 + T, y1)
                add(_rect(x0, y0, x1, y1), 0.0, wall_h, "wall")

    door_centers: List[Tuple[float, float]] = []
    door_records: List[Tuple[str, float, Tuple[int, int], Tuple[int, int]]] = []

    def wall_with_door(lo: float, hi: float, along_y: bool, fixed0: float,
                       fixed1: float, cell_a: Tuple[int, int],
                       cell_b: Tuple[int, int]) -> None:
        span = hi - lo
        center = lo + span * rng.uniform(0.45, 0.55)
        center = min(max(center, lo + door_w / 2 + 0.1), hi - door_w / 2 - 0.1)
        a, b = center - door_w / 2, center + door_w / 2
        for p0, p1 in ((lo, a), (b, hi)):
            if p1 - p0 > 0.05:
                if along_y:
                    add_wall_run(fixed0, p0, fixed1, p1, two_faced=True)
                else:
                    add_wall_run(p0, fixed0, p1, fixed1, two_faced=True)
        if along_y:
            door_centers.append(((fixed0 + fixed1) / 2, center))
            door_records.append(("v", center, cell_a, cell_b))
        else:
            door_centers.append((center, (fixed0 + fixed1) / 2))
            door_records.append(("h", center, cell_a, cell_b))

    for r in range(n_rows):
        for c in range(n_cols):
            if (r, c) not in used:
                continue
            x0, y0, x1, y1 = room_rect(r, c)
            if (r, c + 1) in used:  # wall to the right
                wall_with_door(y0, y1, True, x1, x1 + T, (r, c), (r, c + 1))
            if (r + 1, c) in used:  # wall above
                wall_with_door(x0, x1, False, y1, y1 + T, (r, c), (r + 1, c))

    # Floor segmentation is itself a guidance signal: steering follows
    # segment centroids.  Each room gets one large centre slab, a perimeter
    # ring cut into strip segments, and a "door mat" segment spanning
    # exactly each doorway.  Through a door the visible anchors are the far
    # room's mat and centre slab, both centred on the opening axis, so the
    # crossing aims mid-opening from any approach angle.  Inside a room the
    # ring segments give a fine gradient toward wall-mounted goals, while
    # the coarse centre slab avoids the lattice drift that a uniform tiling
    # induces (replay hops between tile centres and slides off the lane).
    # Seams never cross a doorway: a split through-door patch can lose one
    # half under the detection size and steer the crossing into the jamb.
    ring = 1.2
    room_list = sorted(used)

    def _strip_segments(lo: float, hi: float,
                        door_ctr: Optional[float]) -> List[Tuple[float, float]]:
        if door_ctr is None:
            mid = (lo + hi) / 2.0
            return [(lo, mid), (mid, hi)]
        a, b = door_ctr - door_w / 2.0, door_ctr + door_w / 2.0
        segs = []
        if a - lo > 0.35:
            segs.append((lo, a))
        else:
            a = lo
        if hi - b > 0.35:
            segs.append((b, hi))
        else:
            b = hi
        segs.append((a, b))
        return segs

    def _door_on(cell: Tuple[int, int], axis: str, far: bool) -> Optional[float]:
        for ax, ctr, ca, cb in door_records:
            if ax != axis:
                continue
            if (far and ca == cell) or (not far and cb == cell):
                return ctr
        return None

    for r, c in room_list:
        x0, y0, x1, y1 = room_rect(r, c)
        add(_rect(x0 + ring, y0 + ring, x1 - ring, y1 - ring),
            -0.05, 0.0, "floor")
        for lo, hi in _strip_segments(x0, x1, _door_on((r, c), "h", False)):
            add(_rect(lo, y0, hi, y0 + ring), -0.05, 0.0, "floor")
        for lo, hi in _strip_segments(x0, x1, _door_on((r, c), "h", True)):
            add(_rect(lo, y1 - ring, hi, y1), -0.05, 0.0, "floor")
        for lo, hi in _strip_segments(y0 + ring, y1 - ring,
                                      _door_on((r, c), "v", False)):
            add(_rect(x0, lo, x0 + ring, hi), -0.05, 0.0, "floor")
        for lo, hi in _strip_segments(y0 + ring, y1 - ring,
                                      _door_on((r, c), "v", True)):
            add(_rect(x1 - ring, lo, x1, hi), -0.05, 0.0, "floor")
    if with_ceiling:
        for r, c in room_list:
            x0, y0, x1, y1 = room_rect(r, c)
            add(_rect(x0, y0, x1, y1), wall_h, wall_h + 0.05, "ceiling")

    # Every door gets a full-height piece mounted on the destination room's
    # opposite wall, centered on the door axis.  Replays that steer by what
    # shows through a door slit cross the wall plane at the slit's near edge
    # when the approach is oblique and catch the jamb; steering at an
    # on-axis piece beyond the door scales the lateral error down by the
    # before/beyond distance ratio, so the crossing stays inside the
    # opening.  Skipped when the opposite wall has its own door nearby.
    beacon_hw, beacon_depth = 0.30, 0.25
    beacons_by_room: dict = {}

    def add_beacon(cell: Tuple[int, int], bx0: float, by0: float,
                   bx1: float, by1: float) -> None:
        px, py = (bx0 + bx1) / 2.0, (by0 + by1) / 2.0
        if any(math.hypot(px - qx, py - qy) < 0.9
               for qx, qy, _ in beacons_by_room.get(cell, [])):
            return
        add(_rect(bx0, by0, bx1, by1), 0.0, 1.8, "goalable")
        beacons_by_room.setdefault(cell, []).append(
            (px, py, math.hypot(beacon_hw, beacon_depth / 2.0)))

    for axis, ctr, cell_a, cell_b in door_records:
        for cell, far_side in ((cell_b, True), (cell_a, False)):
            rx0, ry0, rx1, ry1 = room_rect(*cell)
            if axis == "v":
                blocked = any(a == "v" and abs(c2 - ctr) < door_w / 2 + beacon_hw + 0.4
                              and ((far_side and ca == cell) or
                                   (not far_side and cb == cell))
                              for a, c2, ca, cb in door_records)
                if blocked:
                    continue
                if far_side:
                    add_beacon(cell, rx1 - beacon_depth, ctr - beacon_hw,
                               rx1, ctr + beacon_hw)
                else:
                    add_beacon(cell, rx0, ctr - beacon_hw,
                               rx0 + beacon_depth, ctr + beacon_hw)
            else:
                blocked = any(a == "h" and abs(c2 - ctr) < door_w / 2 + beacon_hw + 0.4
                              and ((far_side and ca == cell) or
                                   (not far_side and cb == cell))
                              for a, c2, ca, cb in door_records)
                if blocked:
                    continue
                if far_side:
                    add_beacon(cell, ctr - beacon_hw, ry1 - beacon_depth,
                               ctr + beacon_hw, ry1)
                else:
                    add_beacon(cell, ctr - beacon_hw, ry0,
                               ctr + beacon_hw, ry0 + beacon_depth)

    # Goal objects stand against the walls (wardrobes, shelves, fixtures).
    # Anything free-standing in the middle of a room ends up on some replay
    # pursuit line sooner or later, and a collision while matched content
    # sits dead ahead is a stable fixed point of the bearing controller:
    # the clamped pose freezes the view, the frozen view repeats the same
    # command, and the episode never recovers.  Wall-mounted pieces keep the
    # room interiors free while every room still offers goal candidates.
    for r, c in room_list:
        x0, y0, x1, y1 = room_rect(r, c)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        doors_here = [(dx, dy) for dx, dy in door_centers
                      if x0 - T <= dx <= x1 + T and y0 - T <= dy <= y1 + T]
        if len(doors_here) >= 2:
            chords = [(a, b) for i, a in enumerate(doors_here)
                      for b in doors_here[i + 1:]]
        else:
            chords = [((cx, cy), d) for d in doors_here]
        placed: List[Tuple[float, float, float]] = list(
            beacons_by_room.get((r, c), []))
        for _ in range(objects_per_room):
            for _attempt in range(80):
                side = int(rng.integers(4))
                is_disc = rng.random() < 0.5
                if is_disc:
                    size = rng.uniform(0.16, 0.26)
                    half_along, depth = size, 2.0 * size
                else:
                    half_along = rng.uniform(0.18, 0.30)
                    depth = rng.uniform(0.25, 0.40)
                    size = max(half_along, depth / 2.0)
                lo_a, hi_a = (y0, y1) if side < 2 else (x0, x1)
                apos = rng.uniform(lo_a + half_along + 0.35,
                                   hi_a - half_along - 0.35)
                if side == 0:
                    px, py = x0 + depth / 2.0, apos
                elif side == 1:
                    px, py = x1 - depth / 2.0, apos
                elif side == 2:
                    px, py = apos, y0 + depth / 2.0
                else:
                    px, py = apos, y1 - depth / 2.0
                # Door funnels stay clear so taught routes and their drifting
                # replays never brush furniture while lining up an opening.
                if any(math.hypot(px - dx, py - dy) < door_w / 2.0 + 1.0
                       for dx, dy in door_centers):
                    continue
                if any(_segment_distance(px, py, a, b) < lane_clearance + size
                       for a, b in chords):
                    continue
                if any(math.hypot(px - qx, py - qy) < size + qs + 1.0
                       for qx, qy, qs in placed):
                    continue
                # Full-height pieces: anything shorter than the sensor lets
                # the camera see live floor just past the top edge, and that
                # mass can hold a pressed agent in place indefinitely.
                z_top = rng.uniform(1.5, 1.8)
                if is_disc:
                    fp = Disc((px, py), size)
                else:
                    if side < 2:
                        fp = _rect(px - depth / 2.0, py - half_along,
                                   px + depth / 2.0, py + half_along)
                    else:
                        fp = _rect(px - half_along, py - depth / 2.0,
                                   px + half_along, py + depth / 2.0)
                add(fp, 0.0, z_top, "goalable")
                placed.append((px, py, size))
                break
    return World(obstacles, (0.0, 0.0, W, H), resolution)


def room_centers(world: World) -> List[Tuple[float, float]]:
    """Centers of the rooms, recovered by merging touching floor tiles."""
    boxes = []
    for obs in world.obstacles:
        if obs.category == "floor":
            pts = obs.footprint.as_array()
            boxes.append((pts[:, 0].min(), pts[:, 1].min(),
                          pts[:, 0].max(), pts[:, 1].max()))
    parent = list(range(len(boxes)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    eps = 0.02
    for i in range(len(boxes)):
        ax0, ay0, ax1, ay1 = boxes[i]
        for j in range(i + 1, len(boxes)):
            bx0, by0, bx1, by1 = boxes[j]
            if (ax0 <= bx1 + eps and bx0 <= ax1 + eps
                    and ay0 <= by1 + eps and by0 <= ay1 + eps):
                parent[find(i)] = find(j)
    groups: dict = {}
    for i, box in enumerate(boxes):
        g = groups.setdefault(find(i), list(box))
        g[0] = min(g[0], box[0])
        g[1] = min(g[1], box[1])
        g[2] = max(g[2], box[2])
        g[3] = max(g[3], box[3])
    return [((g[0] + g[2]) / 2.0, (g[1] + g[3]) / 2.0)
            for g in groups.values()]


def _rooms_connected(world: World, agent_radius: float) -> bool:
    centers = room_centers(world)
    if not centers:
        return False
    grid = world.grid(agent_radius)
    try:
        snapped = [grid.snap_free(x, y, max_radius=1.0) for x, y in centers]
        field = grid.field_meters(snapped[0])
        return all(math.isfinite(field.lookup(*p)) for p in snapped[1:])
    except ValueError:
        return False
