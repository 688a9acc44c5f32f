"""Episode construction, closed-loop execution, and batch evaluation.

An episode pairs a mapping trajectory (rendered at a fixed mapping height)
with a start pose and a goal instance.  Task variants reuse the same loop and
differ only in how the trajectory and goal relate: retrace it, divert to a
goal seen off the route, cut a deliberate detour short, or run it backwards.
"""
from __future__ import annotations

import csv
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .controller import (
    CommandLimits,
    CommandSmoother,
    ControllerParams,
    DEFAULT_LIMITS,
    control_step,
)
from .costmap import CostmapConfig, CostSegment, assemble, augment_outliers, rescale
from .planner import (
    GoalNotInMap,
    LocalizerConfig,
    assign_costs,
    compute_field,
    localize,
    select_goal_node,
    track_unlocalized,
)
from .scenegraph import (
    DEFAULT_LINK_HORIZON,
    EdgeMode,
    PerceptionNoise,
    SceneGraph,
    build_map,
)
from .world import (
    DEFAULT_AGENT_RADIUS,
    CameraParams,
    Disc,
    ObjectInstance,
    Pose,
    World,
    render,
    step_agent,
    shortest_path_trajectory,
    wrap_angle,
)


class Task(str, Enum):
    IMITATE = "imitate"
    ALT_GOAL = "alt_goal"
    SHORTCUT = "shortcut"
    REVERSE = "reverse"


_TASK_ORDINAL = {Task.IMITATE: 1, Task.ALT_GOAL: 2, Task.SHORTCUT: 3,
                 Task.REVERSE: 4}


class TaskInfeasible(Exception):
    """Raised when no valid episode exists for (world, task, seed)."""


@dataclass
class EvalConfig:
    edge_mode: EdgeMode = EdgeMode.ALL_PAIRS_3D
    map_noise: Optional[PerceptionNoise] = None
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    # A coarse rescale ceiling makes segments with similar costs share a
    # level; the decoder merges equal-level pixels, so steering weighs merged
    # groups by visible area.  Two levels split the view into a goal-ward
    # half and a trailing half.  The floor slabs flanking a doorway land in
    # the goal-ward half together, so their merged centroid sits mid-opening
    # even when the taught route hugs one side.  At the fine default (100)
    # every segment votes alone and a few-pixel sliver of far floor seen
    # through a door slit outpulls the whole near lane, steering into the
    # jamb.
    costmap: CostmapConfig = field(
        default_factory=lambda: CostmapConfig(level_max=2))
    controller: ControllerParams = field(default_factory=ControllerParams)
    limits: CommandLimits = DEFAULT_LIMITS
    # Maps carry objects and room floors.  Floor masses give the steering
    # large free-space targets whose costs fall off along the taught route,
    # so weighted centroids land in walkable space instead of on furniture.
    # Walls are excluded: they dominate close-range views and would hold the
    # steering equilibrium pressed against themselves, whereas an unmatched
    # wall-filling view decodes to all-outlier and trips the rotate-in-place
    # fallback, recovering the agent.
    map_filter_categories: Tuple[str, ...] = ("wall", "ceiling", "filler")
    # The execution disc is deliberately slimmer than the world default:
    # reactive replay drifts up to a metre off the taught route, and the
    # margin between generated door/lane widths and the disc must absorb it.
    agent_radius: float = 0.30
    # Taught routes are planned with a clearance just under the doorway
    # half-width, so the only corridor through a door is its centre and the
    # route cannot hug jambs; reactive replay drifts sideways and a centred
    # route keeps that drift clear of contact.  Entry/exit legs near
    # furniture use goal_plan_radius: goal objects stand against walls, so
    # only a near-agent clearance can reach a stop point by their face.
    map_plan_radius: float = 0.85
    goal_plan_radius: float = 0.45
    link_horizon: int = DEFAULT_LINK_HORIZON
    augment_fraction: float = 0.0
    augment_seed: int = 0
    max_steps: int = 300
    success_radius: float = 1.0
    min_start_goal: float = 5.0
    # Kept short enough that a route fits the step budget with slack for
    # turn overhead, replay drift, and one contact recovery.
    max_start_goal: float = 7.0
    shortcut_ratio: float = 1.5
    # Absolute ceiling on the taught detour length; a 300-step budget at
    # 0.05 m/s covers 15 m, and detours near that leave no recovery slack.
    # The direct cap keeps the [ratio * direct, max_detour] window wide
    # enough for the via-point sampler to hit.
    shortcut_max_detour: float = 11.0
    shortcut_max_direct: float = 6.0
    off_path_margin: float = 1.5
    map_height: float = 1.3
    # In-place scan frames at the route ends.  Off by default: a full spin
    # breaks frame-to-frame co-visibility for longer than the link horizon,
    # splitting instances into cost-inconsistent node clusters.
    scan_turns: int = 0


@dataclass
class Episode:
    world: World
    task: Task
    seed: int
    map_trajectory: List[Pose]
    start_pose: Pose
    goal_instance: int
    goal_position: Tuple[float, float]
    map_camera: CameraParams
    exec_camera: CameraParams


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path_length: float
    geodesic_shortest: float
    initial_goal_distance: float
    final_goal_distance: float
    collision_count: int


# -- episode construction -----------------------------------------------------

def _scan_poses(pose: Pose, turns: int) -> List[Pose]:
    step = math.radians(15.0)
    return [Pose(pose.x, pose.y, pose.yaw + k * step) for k in range(1, turns + 1)]


def _instance_center(obs: ObjectInstance) -> Tuple[float, float]:
    if isinstance(obs.footprint, Disc):
        return obs.footprint.center
    pts = obs.footprint.as_array()
    return (float(pts[:, 0].mean()), float(pts[:, 1].mean()))


def _goalables(world: World) -> List[ObjectInstance]:
    return [o for o in world.obstacles if o.category == "goalable"]


def _rooms(world: World) -> List[np.ndarray]:
    return [o.footprint.as_array() for o in world.obstacles
            if o.category == "floor"]


def _goal_point(world: World, obs: ObjectInstance,
                agent_radius: float) -> Optional[Tuple[float, float]]:
    """A reachable free point that stands a little off an instance.

    The stop test fires within a fixed radius of this point, and approaches
    home in on the instance mass, so the point is backed away from the
    footprint: the agent then crosses the stop ball on the way in rather
    than having to ring the object to one exact face.
    """
    cx, cy = _instance_center(obs)
    grid = world.grid(agent_radius)
    try:
        px, py = grid.snap_free(cx, cy, max_radius=2.0)
    except ValueError:
        return None
    if math.hypot(px - cx, py - cy) > 2.0:
        return None
    off = math.hypot(px - cx, py - cy)
    if off > 1e-9:
        bx = cx + (px - cx) / off * (off + 0.45)
        by = cy + (py - cy) / off * (off + 0.45)
        try:
            qx, qy = grid.snap_free(bx, by, max_radius=0.5)
        except ValueError:
            return (px, py)
        if math.hypot(qx - cx, qy - cy) <= 2.5:
            return (qx, qy)
    return (px, py)


def _approach_goal_point(world: World, obs: ObjectInstance,
                         from_xy: Tuple[float, float],
                         radius: float) -> Optional[Tuple[float, float]]:
    """Last free point walking from ``from_xy`` straight at the instance.

    Picking the goal point on the approach side keeps the final metre of an
    episode from wrapping around the goal object.
    """
    grid = world.grid(radius)
    cx, cy = _instance_center(obs)
    fx, fy = from_xy
    length = math.hypot(cx - fx, cy - fy)
    if length < 1e-9:
        return None
    n = max(1, int(math.ceil(length / (grid.res / 2.0))))
    best: Optional[Tuple[float, float]] = None
    for k in range(n + 1):
        t = k / n
        x, y = fx + t * (cx - fx), fy + t * (cy - fy)
        if grid.is_free(x, y):
            best = (x, y)
        else:
            break
    if best is None or math.hypot(best[0] - cx, best[1] - cy) > 2.0:
        return None
    # Stand the point off the footprint so the stop ball is crossed on the
    # way in (see _goal_point).
    walked = math.hypot(best[0] - fx, best[1] - fy)
    back = min(0.45, walked)
    if back > 1e-9:
        ux, uy = (cx - fx) / length, (cy - fy) / length
        best = (best[0] - ux * back, best[1] - uy * back)
    return best


def _sample_pose(rng: np.random.Generator, world: World, rooms: Sequence[np.ndarray],
                 agent_radius: float) -> Optional[Pose]:
    grid = world.grid(agent_radius)
    room = rooms[int(rng.integers(len(rooms)))]
    cx, cy = float(room[:, 0].mean()), float(room[:, 1].mean())
    x = cx + rng.uniform(-0.9, 0.9)
    y = cy + rng.uniform(-0.9, 0.9)
    yaw = rng.uniform(-math.pi, math.pi)
    try:
        fx, fy = grid.snap_free(x, y, max_radius=1.0)
    except ValueError:
        return None
    return Pose(fx, fy, yaw)


def _tiered_route(world: World, start: Pose, goal_xy: Tuple[float, float],
                  cfg: EvalConfig) -> Optional[List[Pose]]:
    """Plan a route whose main leg keeps the wide map clearance.

    At ``map_plan_radius`` the only corridor through a doorway is its centre,
    so taught routes thread door middles instead of hugging jambs.  Endpoints
    that sit closer to furniture than the wide clearance allows are joined by
    short legs planned at ``goal_plan_radius``.
    """
    grid = world.grid(cfg.map_plan_radius)
    out: List[Pose] = []
    pose = start

    def extend(target: Tuple[float, float], radius: float) -> None:
        nonlocal pose
        leg = shortest_path_trajectory(world, pose, target, radius)
        out.extend(leg)
        if leg:
            pose = leg[-1]

    try:
        if not grid.is_free(start.x, start.y):
            extend(grid.snap_free(start.x, start.y, max_radius=2.5),
                   cfg.goal_plan_radius)
        gx, gy = goal_xy
        if not grid.is_free(gx, gy):
            extend(grid.snap_free(gx, gy, max_radius=2.5),
                   cfg.map_plan_radius)
            extend(goal_xy, cfg.goal_plan_radius)
        else:
            extend(goal_xy, cfg.map_plan_radius)
    except ValueError:
        return None
    return out


def _aligned_route(world: World, start: Pose, goal_xy: Tuple[float, float],
                   cfg: EvalConfig) -> Optional[Tuple[Pose, List[Pose]]]:
    """Route to the goal with the start yaw re-aimed along its first leg."""
    traj = _tiered_route(world, start, goal_xy, cfg)
    if not traj:
        return None
    aim = next((p for p in traj
                if math.hypot(p.x - start.x, p.y - start.y) > 0.05), traj[-1])
    yaw = math.atan2(aim.y - start.y, aim.x - start.x)
    if abs(wrap_angle(yaw - start.yaw)) > 1e-9:
        start = Pose(start.x, start.y, yaw)
        traj = _tiered_route(world, start, goal_xy, cfg)
        if not traj:
            return None
    return start, traj


def _polyline_length(poses: Sequence[Pose]) -> float:
    total = 0.0
    for a, b in zip(poses, poses[1:]):
        total += math.hypot(b.x - a.x, b.y - a.y)
    return total


def _min_distance_to_path(point: Tuple[float, float],
                          poses: Sequence[Pose]) -> float:
    px, py = point
    return min(math.hypot(px - p.x, py - p.y) for p in poses)


def _distance(world: World, a: Tuple[float, float], b: Tuple[float, float],
              agent_radius: float) -> float:
    return world.grid(agent_radius).distance(a, b)


def _visible_instances(world: World, poses: Sequence[Pose], cam: CameraParams,
                       stride: int = 4) -> Dict[int, int]:
    """instance_id -> index of the first sampled pose that renders it."""
    seen: Dict[int, int] = {}
    for k in range(0, len(poses), max(1, stride)):
        frame = render(world, poses[k], cam, frame_index=k)
        for iid in frame.instance_list():
            seen.setdefault(iid, k)
    return seen


def _sighted_late(seen: Dict[int, int], iid: int, route_len: int) -> bool:
    """True when the instance first shows up well past the route start.

    The localizer only matches map nodes inside a sliding frame window, so a
    goal whose sightings all come late cannot capture the steering before the
    agent has replayed the early route; early-visible goals invite corner
    cuts straight into door jambs.  Used as a preference between otherwise
    valid candidates, never as a feasibility requirement.
    """
    first = seen.get(iid)
    if first is None:
        return False
    return first >= max(16, int(0.25 * route_len))


def make_episode(world: World, task: Task, seed: int,
                 cfg: Optional[EvalConfig] = None) -> Episode:
    """Construct a valid episode for the task, or raise TaskInfeasible.

    Mapping trajectories run at the fixed mapping height and include a full
    in-place scan at both ends so nearby instances are reliably mapped.
    Execution height defaults to the mapping height; batch runners override
    it per run.
    """
    cfg = cfg or EvalConfig()
    task = Task(task)
    rng = np.random.default_rng((max(seed, 0), _TASK_ORDINAL[task]))
    rooms = _rooms(world)
    goalables = _goalables(world)
    if len(rooms) < 2 or not goalables:
        raise TaskInfeasible("world needs >= 2 rooms and goalable instances")
    map_cam = CameraParams(sensor_height=cfg.map_height)
    exec_cam = map_cam

    builder = {Task.IMITATE: _make_imitate, Task.ALT_GOAL: _make_alt_goal,
               Task.SHORTCUT: _make_shortcut, Task.REVERSE: _make_reverse}[task]
    ep = builder(world, rng, rooms, goalables, cfg, map_cam)
    return replace(ep, task=task, seed=seed, exec_camera=exec_cam)


def _with_scans(start: Pose, traj: List[Pose], turns: int) -> List[Pose]:
    tail = traj[-1] if traj else start
    return [start] + _scan_poses(start, turns) + traj + _scan_poses(tail, turns)


def _base_episode(world: World, cfg: EvalConfig, map_cam: CameraParams,
                  start: Pose, map_traj: List[Pose], goal_instance: int,
                  goal_position: Tuple[float, float]) -> Episode:
    return Episode(world=world, task=Task.IMITATE, seed=0,
                   map_trajectory=map_traj, start_pose=start,
                   goal_instance=goal_instance, goal_position=goal_position,
                   map_camera=map_cam, exec_camera=map_cam)


def _make_imitate(world: World, rng: np.random.Generator,
                  rooms: Sequence[np.ndarray], goalables: Sequence[ObjectInstance],
                  cfg: EvalConfig, map_cam: CameraParams) -> Episode:
    fallback = None
    fallback_first = -1
    for _ in range(60):
        obs = goalables[int(rng.integers(len(goalables)))]
        gpos = _goal_point(world, obs, cfg.goal_plan_radius)
        if gpos is None:
            continue
        start = _sample_pose(rng, world, rooms, cfg.map_plan_radius)
        if start is None:
            continue
        try:
            d = _distance(world, start.xy, gpos, cfg.agent_radius)
        except ValueError:
            continue
        if not cfg.min_start_goal <= d <= cfg.max_start_goal:
            continue
        try:
            aligned = _aligned_route(world, start, gpos, cfg)
        except ValueError:
            continue
        if aligned is None:
            continue
        start, traj = aligned
        map_traj = _with_scans(start, traj, cfg.scan_turns)
        seen = _visible_instances(world, map_traj, map_cam)
        first = seen.get(obs.instance_id)
        if first is None:
            continue  # the teach run never saw the goal; unusable as a map
        if _sighted_late(seen, obs.instance_id, len(map_traj)):
            return _base_episode(world, cfg, map_cam, start, map_traj,
                                 obs.instance_id, gpos)
        if first > fallback_first:
            fallback_first = first
            fallback = _base_episode(world, cfg, map_cam, start, map_traj,
                                     obs.instance_id, gpos)
    if fallback is not None:
        return fallback
    raise TaskInfeasible("no start/goal pair satisfies the imitate constraints")


def _make_alt_goal(world: World, rng: np.random.Generator,
                   rooms: Sequence[np.ndarray], goalables: Sequence[ObjectInstance],
                   cfg: EvalConfig, map_cam: CameraParams) -> Episode:
    for _ in range(40):
        try:
            base = _make_imitate(world, rng, rooms, goalables, cfg, map_cam)
        except TaskInfeasible:
            break
        seen = _visible_instances(world, base.map_trajectory, map_cam)
        late_options = []
        options = []
        for obs in goalables:
            if obs.instance_id == base.goal_instance:
                continue
            if obs.instance_id not in seen:
                continue
            center = _instance_center(obs)
            if _min_distance_to_path(center, base.map_trajectory) < cfg.off_path_margin:
                continue
            route_pt = min(base.map_trajectory,
                           key=lambda p: math.hypot(p.x - center[0],
                                                    p.y - center[1]))
            gpos = _approach_goal_point(world, obs, route_pt.xy,
                                        cfg.goal_plan_radius)
            if gpos is None:
                continue
            try:
                d = _distance(world, base.start_pose.xy, gpos, cfg.agent_radius)
            except ValueError:
                continue
            if not cfg.min_start_goal <= d <= cfg.max_start_goal:
                continue
            bucket = (late_options
                      if _sighted_late(seen, obs.instance_id,
                                       len(base.map_trajectory))
                      else options)
            bucket.append((obs.instance_id, gpos))
        pool = late_options or options
        if pool:
            iid, gpos = pool[int(rng.integers(len(pool)))]
            return replace(base, goal_instance=iid, goal_position=gpos)
    raise TaskInfeasible("no off-path goal visible from the map trajectory")


def _make_shortcut(world: World, rng: np.random.Generator,
                   rooms: Sequence[np.ndarray], goalables: Sequence[ObjectInstance],
                   cfg: EvalConfig, map_cam: CameraParams) -> Episode:
    for _ in range(80):
        obs = goalables[int(rng.integers(len(goalables)))]
        gpos = _goal_point(world, obs, cfg.goal_plan_radius)
        if gpos is None:
            continue
        start = _sample_pose(rng, world, rooms, cfg.map_plan_radius)
        if start is None:
            continue
        try:
            direct = _distance(world, start.xy, gpos, cfg.agent_radius)
        except ValueError:
            continue
        if not cfg.min_start_goal <= direct <= cfg.shortcut_max_direct:
            continue
        via_pose = _sample_pose(rng, world, rooms, cfg.map_plan_radius)
        if via_pose is None:
            continue
        via = via_pose.xy
        try:
            aligned = _aligned_route(world, start, via, cfg)
        except ValueError:
            continue
        if aligned is None:
            continue
        start, leg1 = aligned
        leg2 = _tiered_route(world, leg1[-1], gpos, cfg)
        if not leg2:
            continue
        traj = leg1 + leg2
        detour = _polyline_length([start] + traj)
        if not cfg.shortcut_ratio * direct <= detour <= cfg.shortcut_max_detour:
            continue
        map_traj = _with_scans(start, traj, cfg.scan_turns)
        if obs.instance_id not in _visible_instances(world, map_traj, map_cam):
            continue
        return _base_episode(world, cfg, map_cam, start, map_traj,
                             obs.instance_id, gpos)
    raise TaskInfeasible("no via point yields a long enough detour")


def _make_reverse(world: World, rng: np.random.Generator,
                  rooms: Sequence[np.ndarray], goalables: Sequence[ObjectInstance],
                  cfg: EvalConfig, map_cam: CameraParams) -> Episode:
    grid = world.grid(cfg.goal_plan_radius)
    for _ in range(60):
        obs = goalables[int(rng.integers(len(goalables)))]
        gpos = _goal_point(world, obs, cfg.goal_plan_radius)
        if gpos is None:
            continue
        far = _sample_pose(rng, world, rooms, cfg.map_plan_radius)
        if far is None:
            continue
        # Start the taught route on the far side of the goal instance so the
        # instance sits ahead of the first frames and gets into the map.
        center = _instance_center(obs)
        ux, uy = center[0] - far.x, center[1] - far.y
        norm = math.hypot(ux, uy)
        if norm < 1e-9:
            continue
        back = float(rng.uniform(1.0, 1.6))
        try:
            bx, by = grid.snap_free(center[0] + ux / norm * back,
                                    center[1] + uy / norm * back,
                                    max_radius=1.8)
        except ValueError:
            continue
        try:
            d = _distance(world, (bx, by), far.xy, cfg.agent_radius)
        except ValueError:
            continue
        if not cfg.min_start_goal <= d <= cfg.max_start_goal:
            continue
        try:
            aligned = _aligned_route(world, Pose(bx, by, far.yaw),
                                     far.xy, cfg)
        except ValueError:
            continue
        if aligned is None:
            continue
        map_start, traj = aligned
        end = traj[-1]
        map_traj = _with_scans(map_start, traj, cfg.scan_turns)
        if obs.instance_id not in _visible_instances(
                world, map_traj[:12], map_cam):
            continue
        start = Pose(end.x, end.y, end.yaw + math.pi)
        # The distance bound above is for the taught route's endpoints; the
        # executed episode runs from the flipped end pose to the stand-off
        # goal point, which must satisfy the bounds in its own right.
        try:
            d_exec = _distance(world, start.xy, gpos, cfg.agent_radius)
        except ValueError:
            continue
        if not cfg.min_start_goal <= d_exec <= cfg.max_start_goal:
            continue
        return _base_episode(world, cfg, map_cam, start, map_traj,
                             obs.instance_id, gpos)
    raise TaskInfeasible("no reversible route satisfies the constraints")


# -- closed loop --------------------------------------------------------------

def build_episode_map(ep: Episode, cfg: EvalConfig) -> SceneGraph:
    return build_map(ep.world, ep.map_trajectory, ep.map_camera,
                     edge_mode=cfg.edge_mode, noise=cfg.map_noise,
                     link_horizon=cfg.link_horizon,
                     filter_categories=frozenset(cfg.map_filter_categories))


def run_episode(ep: Episode, graph: SceneGraph, cfg: EvalConfig,
                trace: Optional[List[Dict[str, float]]] = None) -> EpisodeResult:
    """Execute the closed loop until the goal or the step budget is reached.

    A missing goal instance in the map fails immediately with zero travel.
    Collisions clamp motion but never terminate the episode.
    """
    grid = ep.world.grid(cfg.agent_radius)
    goal_field = grid.field_meters(ep.goal_position)
    d_init = goal_field.lookup(*ep.start_pose.xy)
    l_geo = d_init
    if not math.isfinite(d_init) or d_init <= 0.0:
        raise ValueError("start pose has no positive geodesic to the goal")

    try:
        goal_node = select_goal_node(graph, ep.goal_instance)
    except GoalNotInMap:
        return EpisodeResult(success=False, steps=0, path_length=0.0,
                             geodesic_shortest=l_geo,
                             initial_goal_distance=d_init,
                             final_goal_distance=d_init, collision_count=0)
    field_ = compute_field(graph, goal_node)

    params = replace(cfg.controller, image_width=ep.exec_camera.width)
    smoother = CommandSmoother(params.smoothing_window)
    history: deque = deque(maxlen=cfg.localizer.history)
    map_xy = np.array([[p.x, p.y] for p in graph.frame_poses])
    cam = ep.exec_camera

    pose = ep.start_pose
    travelled = 0.0
    collisions = 0
    steps = 0
    success = False
    d_now = d_init
    for step in range(cfg.max_steps + 1):
        d_now = goal_field.lookup(*pose.xy)
        if d_now <= cfg.success_radius:
            success = True
            break
        if step == cfg.max_steps:
            break
        frame = render(ep.world, pose, cam, frame_index=step)
        ref = int(np.argmin(np.hypot(map_xy[:, 0] - pose.x,
                                     map_xy[:, 1] - pose.y)))
        matches = localize(frame, graph, ref, cfg.localizer)
        costs = assign_costs(matches, field_)
        costs = track_unlocalized(costs, history)
        history.append((frame, costs))
        ordered = sorted(costs.entries)
        raw = [costs.entries[i].cost for i in ordered]
        levels = rescale(raw, cfg.costmap)
        segments = [CostSegment(i, frame.mask(i), c, lv)
                    for i, c, lv in zip(ordered, raw, levels)]
        if cfg.augment_fraction > 0.0:
            segments = augment_outliers(segments, cfg.augment_fraction,
                                        cfg.augment_seed + step)
        cmap = assemble(segments, cfg.costmap, cam.height, cam.width)
        cmd = control_step(cmap, params, smoother, cfg.limits)
        new_pose, collided = step_agent(ep.world, pose, cmd,
                                        dt=params.control_period,
                                        agent_radius=cfg.agent_radius)
        moved = math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
        travelled += moved
        collisions += int(collided)
        if trace is not None:
            trace.append({"step": step, "x": pose.x, "y": pose.y,
                          "yaw": pose.yaw, "v": cmd.v, "omega": cmd.omega,
                          "goal_distance": d_now})
        pose = new_pose
        steps = step + 1
    return EpisodeResult(success=success, steps=steps, path_length=travelled,
                         geodesic_shortest=l_geo,
                         initial_goal_distance=d_init,
                         final_goal_distance=d_now,
                         collision_count=collisions)


# -- metrics ------------------------------------------------------------------

def spl(results: Sequence[EpisodeResult]) -> float:
    """Mean success weighted by shortest/executed path length."""
    if not results:
        raise ValueError("spl of an empty result set")
    total = 0.0
    for r in results:
        if r.geodesic_shortest <= 0.0:
            raise ValueError("spl needs geodesic_shortest > 0")
        if r.success:
            total += r.geodesic_shortest / max(r.path_length, r.geodesic_shortest)
    return total / len(results)


def sspl(results: Sequence[EpisodeResult]) -> float:
    """Soft variant: progress toward the goal replaces binary success."""
    if not results:
        raise ValueError("sspl of an empty result set")
    total = 0.0
    for r in results:
        if r.geodesic_shortest <= 0.0:
            raise ValueError("sspl needs geodesic_shortest > 0")
        if r.initial_goal_distance <= 0.0:
            raise ValueError("sspl needs initial_goal_distance > 0")
        progress = max(0.0, 1.0 - r.final_goal_distance / r.initial_goal_distance)
        total += progress * (r.geodesic_shortest
                             / max(r.path_length, r.geodesic_shortest))
    return total / len(results)


# -- batch runner -------------------------------------------------------------

def _run_job(args) -> Tuple[Tuple[str, int, int], List[Dict[str, object]],
                            Dict[float, List[Dict[str, float]]]]:
    ep, heights, cfg, world_index = args
    graph = build_episode_map(ep, cfg)
    rows = []
    traces: Dict[float, List[Dict[str, float]]] = {}
    for h in heights:
        run_ep = replace(ep, exec_camera=replace(ep.exec_camera, sensor_height=h))
        trace: List[Dict[str, float]] = []
        res = run_episode(run_ep, graph, cfg, trace=trace)
        traces[h] = trace
        rows.append({
            "task": ep.task.value, "world": world_index, "seed": ep.seed,
            "height": h, "success": int(res.success), "steps": res.steps,
            "path_length": res.path_length,
            "geodesic_shortest": res.geodesic_shortest,
            "initial_goal_distance": res.initial_goal_distance,
            "final_goal_distance": res.final_goal_distance,
            "collisions": res.collision_count,
        })
    return (ep.task.value, world_index, ep.seed), rows, traces


def run_suite(worlds: Sequence[World], tasks: Sequence[Task],
              heights: Sequence[float], seeds: Sequence[int],
              cfg: Optional[EvalConfig] = None, out_dir: Optional[str] = None,
              jobs: int = 1,
              write_svg: bool = True) -> Dict[str, object]:
    """Run every (world, task, seed) episode once per execution height.

    Episodes whose construction is infeasible are excluded from all heights
    and counted per task.  Returns the aggregated report; when ``out_dir``
    is given, also writes results.csv, summary.csv, manifest.json plus one
    trajectory CSV and SVG per run.
    """
    cfg = cfg or EvalConfig()
    tasks = [Task(t) for t in tasks]
    episodes: List[Tuple[Episode, int]] = []
    excluded: Dict[str, int] = {t.value: 0 for t in tasks}
    for wi, world in enumerate(worlds):
        for task in tasks:
            for seed in seeds:
                try:
                    ep = make_episode(world, task, seed, cfg)
                except TaskInfeasible:
                    excluded[task.value] += 1
                    continue
                episodes.append((ep, wi))

    job_args = [(ep, list(heights), cfg, wi) for ep, wi in episodes]
    results_rows: List[Dict[str, object]] = []
    all_traces: Dict[Tuple[str, int, int], Dict[float, List[Dict[str, float]]]] = {}
    if jobs > 1 and len(job_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, rows, traces in pool.map(_run_job, job_args):
                results_rows.extend(rows)
                all_traces[key] = traces
    else:
        for args in job_args:
            key, rows, traces = _run_job(args)
            results_rows.extend(rows)
            all_traces[key] = traces

    results_rows.sort(key=lambda r: (r["task"], r["world"], r["seed"], r["height"]))
    summary = []
    for task in tasks:
        for h in heights:
            sel = [r for r in results_rows
                   if r["task"] == task.value and r["height"] == h]
            if not sel:
                summary.append({"task": task.value, "height": h, "episodes": 0,
                                "success_rate": "", "spl": "", "sspl": ""})
                continue
            rs = [EpisodeResult(bool(r["success"]), int(r["steps"]),
                                float(r["path_length"]),
                                float(r["geodesic_shortest"]),
                                float(r["initial_goal_distance"]),
                                float(r["final_goal_distance"]),
                                int(r["collisions"])) for r in sel]
            summary.append({
                "task": task.value, "height": h, "episodes": len(rs),
                "success_rate": sum(r.success for r in rs) / len(rs),
                "spl": spl(rs), "sspl": sspl(rs),
            })
    report = {"results": results_rows, "summary": summary, "excluded": excluded}
    if out_dir is not None:
        _write_suite_outputs(report, episodes, all_traces, heights, cfg,
                             out_dir, write_svg)
    return report


def _write_suite_outputs(report, episodes, all_traces, heights, cfg, out_dir,
                         write_svg: bool) -> None:
    import json

    os.makedirs(out_dir, exist_ok=True)
    traj_dir = os.path.join(out_dir, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)
    svg_dir = os.path.join(out_dir, "svg")
    if write_svg:
        os.makedirs(svg_dir, exist_ok=True)

    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="") as fh:
        cols = ["task", "world", "seed", "height", "success", "steps",
                "path_length", "geodesic_shortest", "initial_goal_distance",
                "final_goal_distance", "collisions"]
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(report["results"])

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        cols = ["task", "height", "episodes", "success_rate", "spl", "sspl"]
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(report["summary"])

    files = [results_path, summary_path]
    ep_by_key = {(ep.task.value, wi, ep.seed): ep for ep, wi in episodes}
    for key, traces in sorted(all_traces.items()):
        task, wi, seed = key
        for h in heights:
            name = f"{task}_w{wi}_s{seed}_h{h:g}"
            tpath = os.path.join(traj_dir, name + ".csv")
            with open(tpath, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=[
                    "step", "x", "y", "yaw", "v", "omega", "goal_distance"])
                writer.writeheader()
                writer.writerows(traces.get(h, []))
            files.append(tpath)
            if write_svg:
                spath = os.path.join(svg_dir, name + ".svg")
                render_episode_svg(ep_by_key[key], traces.get(h, []), spath)
                files.append(spath)

    manifest = {
        "version": 1,
        "package_version": __version__,
        "heights": list(heights),
        "seeds": sorted({ep.seed for ep, _ in episodes}),
        "tasks": sorted({ep.task.value for ep, _ in episodes}),
        "excluded": report["excluded"],
        "config": {
            "edge_mode": cfg.edge_mode.value,
            "agent_radius": cfg.agent_radius,
            "max_steps": cfg.max_steps,
            "success_radius": cfg.success_radius,
            "augment_fraction": cfg.augment_fraction,
            "noise": {"p_drop": cfg.localizer.noise.p_drop,
                      "p_mismatch": cfg.localizer.noise.p_mismatch,
                      "seed": cfg.localizer.noise.seed},
        },
        "files": sorted(os.path.relpath(f, out_dir) for f in files),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- top-down rendering -------------------------------------------------------

def render_episode_svg(ep: Episode, trace: Sequence[Dict[str, float]],
                       path: str, scale: float = 60.0) -> None:
    """Top-down SVG: obstacles, map trajectory, executed path, start, goal."""
    x0, y0, x1, y1 = ep.world.bounds
    wpx = (x1 - x0) * scale
    hpx = (y1 - y0) * scale

    def sx(x: float) -> float:
        return (x - x0) * scale

    def sy(y: float) -> float:
        return hpx - (y - y0) * scale  # y up

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{wpx:.0f}" height="{hpx:.0f}" '
             f'viewBox="0 0 {wpx:.0f} {hpx:.0f}">',
             f'<rect width="{wpx:.0f}" height="{hpx:.0f}" fill="#f8f8f5"/>']
    palette = {"wall": "#9a9a97", "goalable": "#6b8fb3"}
    for obs in ep.world.obstacles:
        color = palette.get(obs.category)
        if color is None:
            continue
        if isinstance(obs.footprint, Disc):
            (cx, cy), r = obs.footprint.center, obs.footprint.radius
            parts.append(f'<circle cx="{sx(cx):.1f}" cy="{sy(cy):.1f}" '
                         f'r="{r * scale:.1f}" fill="{color}"/>')
        else:
            pts = " ".join(f"{sx(px):.1f},{sy(py):.1f}"
                           for px, py in obs.footprint.points)
            parts.append(f'<polygon points="{pts}" fill="{color}"/>')
    map_pts = " ".join(f"{sx(p.x):.1f},{sy(p.y):.1f}" for p in ep.map_trajectory)
    parts.append(f'<polyline points="{map_pts}" fill="none" '
                 f'stroke="#8c5bb0" stroke-width="3" stroke-opacity="0.7"/>')
    if trace:
        run_pts = " ".join(f"{sx(r['x']):.1f},{sy(r['y']):.1f}" for r in trace)
        parts.append(f'<polyline points="{run_pts}" fill="none" '
                     f'stroke="#d9842b" stroke-width="2.5"/>')
    sp = ep.start_pose
    parts.append(f'<circle cx="{sx(sp.x):.1f}" cy="{sy(sp.y):.1f}" r="6" '
                 f'fill="#3c8c3c"/>')
    gx, gy = ep.goal_position
    parts.append(f'<circle cx="{sx(gx):.1f}" cy="{sy(gy):.1f}" r="7" '
                 f'fill="none" stroke="#c03030" stroke-width="3"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
