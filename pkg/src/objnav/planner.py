"""Goal-conditioned planning over the scene graph.

The plan is a scalar field: the shortest-path length from every map node to
one goal node, computed once per episode.  At execution time query segments
are matched against a submap window of nearby frames and inherit the field
value of their best match; segments that cannot be matched fall back to a
short history median, or become outliers.
"""
from __future__ import annotations

import heapq
import statistics
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .scenegraph import PerceptionNoise, SceneGraph
from .world import Frame


class GoalNotInMap(Exception):
    """Raised when the requested goal instance was never mapped."""


@dataclass
class PathLengthField:
    goal_node: int
    dist: Dict[int, float]  # node_id -> metres (inf when unreachable)


def compute_field(graph: SceneGraph, goal_node: int) -> PathLengthField:
    """Single-source shortest path lengths from the goal over all edges."""
    if goal_node not in graph.nodes:
        raise KeyError(f"goal node {goal_node} not in graph")
    dist = {nid: float("inf") for nid in graph.nodes}
    dist[goal_node] = 0.0
    heap: List[Tuple[float, int]] = [(0.0, goal_node)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in graph.neighbors(u):
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return PathLengthField(goal_node=goal_node, dist=dist)


def select_goal_node(graph: SceneGraph, goal_instance: int) -> int:
    """Largest-mask sighting of the goal instance; earliest frame on ties."""
    best: Optional[Tuple[int, int, int]] = None
    for node in graph.nodes.values():
        if node.instance_id != goal_instance:
            continue
        key = (-node.area, node.frame_index, node.node_id)
        if best is None or key < best:
            best = key
    if best is None:
        raise GoalNotInMap(f"instance {goal_instance} has no node in the map")
    return best[2]


class Provenance(str, Enum):
    LOCALIZED = "localized"
    TRACKED = "tracked"
    OUTLIER = "outlier"


@dataclass
class CostEntry:
    cost: Optional[float]  # metres; None marks an outlier
    provenance: Provenance


@dataclass
class QueryCosts:
    """Per query-segment path-length assignment for one frame."""

    entries: Dict[int, CostEntry] = field(default_factory=dict)

    def finite_items(self) -> List[Tuple[int, float]]:
        return [(iid, e.cost) for iid, e in self.entries.items()
                if e.cost is not None]


@dataclass
class LocalizerConfig:
    submap_radius: int = 16
    subsample: int = 2
    history: int = 8
    # Query segments smaller than this many pixels are treated as undetected:
    # a segmenter cannot reliably match a few-pixel fragment, and distant
    # slivers glimpsed through door slits would otherwise carry full steering
    # weight while the lane they belong to is still out of reach.
    min_pixels: int = 120
    noise: PerceptionNoise = field(default_factory=PerceptionNoise)


def submap_frames(ref_frame: int, frame_count: int, cfg: LocalizerConfig) -> List[int]:
    """Candidate map frames around a reference index, clipped at the ends."""
    offsets = range(0, cfg.submap_radius + 1, cfg.subsample)
    frames = {ref_frame + k for k in offsets} | {ref_frame - k for k in offsets}
    return sorted(f for f in frames if 0 <= f < frame_count)


def localize(query: Frame, graph: SceneGraph, ref_frame: int,
             cfg: LocalizerConfig) -> Dict[int, Set[int]]:
    """Match query segments to map nodes inside the submap window.

    Detected query instances get an entry; unmatched ones map to an empty
    set.  Sub-detection-size segments (below ``min_pixels``) get no entry at
    all.  The noise model perturbs (query instance, map frame) pairs.
    """
    noise = cfg.noise
    noisy = noise is not None and noise.active
    matches: Dict[int, Set[int]] = {}
    candidates = submap_frames(ref_frame, graph.frame_count, cfg)
    for iid in query.instance_list():
        if int(np.count_nonzero(query.mask(iid))) < cfg.min_pixels:
            continue
        found: Set[int] = set()
        for f in candidates:
            inst_map = graph.nodes_in_frame(f)
            node = inst_map.get(iid)
            if node is None:
                continue
            if noisy:
                rng = noise.pair_rng(query.frame_index, f, iid)
                if rng.random() < noise.p_drop:
                    continue
                if rng.random() < noise.p_mismatch:
                    others = sorted(v for k, v in inst_map.items() if k != iid)
                    if others:
                        node = others[int(rng.integers(len(others)))]
            found.add(node)
        matches[iid] = found
    return matches


def assign_costs(matches: Dict[int, Set[int]],
                 field_: PathLengthField) -> QueryCosts:
    """Assign each query segment the smallest field value of its matches."""
    costs = QueryCosts()
    for iid in sorted(matches):
        nodes = matches[iid]
        finite = [field_.dist.get(n, float("inf")) for n in nodes]
        finite = [d for d in finite if d != float("inf")]
        if finite:
            costs.entries[iid] = CostEntry(min(finite), Provenance.LOCALIZED)
        else:
            costs.entries[iid] = CostEntry(None, Provenance.OUTLIER)
    return costs


def track_unlocalized(costs: QueryCosts,
                      history: Sequence[Tuple[Frame, QueryCosts]]) -> QueryCosts:
    """Fill outlier segments from their recent finite history, if any.

    The substitute is the median of historical finite costs; for an even
    count the lower middle value is used.
    """
    out = QueryCosts(dict(costs.entries))
    for iid, entry in costs.entries.items():
        if entry.provenance is not Provenance.OUTLIER:
            continue
        past = [h.entries[iid].cost for _, h in history
                if iid in h.entries and h.entries[iid].cost is not None]
        if past:
            out.entries[iid] = CostEntry(statistics.median_low(past),
                                         Provenance.TRACKED)
    return out
