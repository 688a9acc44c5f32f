"""Relative scene graph built from rendered frames.

Every image segment becomes a node carrying its mask and a camera-local 3D
anchor point.  Nodes of one frame are joined by metric intra-frame edges;
sightings of the same instance across frames are merged with zero-weight
inter-frame edges, which makes graph path lengths approximate travelled
metres rather than image hops.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .world import CameraParams, Frame, Pose, World, render

DEFAULT_FILTER_CATEGORIES = frozenset({"floor", "ceiling"})
DEFAULT_LINK_HORIZON = 3
_MIN_EDGE_WEIGHT = 1e-9


class EdgeMode(str, Enum):
    ALL_PAIRS_3D = "all_pairs_3d"
    DELAUNAY_2D = "delaunay_2d"


@dataclass
class PerceptionNoise:
    """Stochastic corruption of ground-truth instance matches.

    Draws are derived from (seed, frame pair, instance), so repeated calls
    with the same inputs reproduce the same corruption, and drop sets are
    nested across increasing ``p_drop`` for a fixed seed.
    """

    p_drop: float = 0.0
    p_mismatch: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for p in (self.p_drop, self.p_mismatch):
            if not 0.0 <= p <= 1.0:
                raise ValueError("noise probabilities must lie in [0, 1]")
        if self.seed < 0:
            raise ValueError("noise seed must be >= 0")

    @property
    def active(self) -> bool:
        return self.p_drop > 0.0 or self.p_mismatch > 0.0

    def pair_rng(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng((self.seed,) + tuple(int(k) for k in keys))


@dataclass
class ObjectNode:
    node_id: int
    frame_index: int
    instance_id: int
    mask: np.ndarray          # (H, W) bool
    anchor: np.ndarray        # (3,) camera-local, z forward
    pixel_center: np.ndarray  # (2,) (x=col, y=row), pixel-center convention
    category: str
    area: int


def farthest_point(frame: Frame, instance_id: int) -> np.ndarray:
    """Camera-local 3D point of the deepest mask pixel of an instance.

    Ties on depth resolve to the smallest (row, col) in row-major order.
    """
    rows, cols = np.nonzero(frame.ids == instance_id)
    if len(rows) == 0:
        raise ValueError(f"instance {instance_id} has no pixels in frame")
    depths = frame.depth[rows, cols]
    if not np.isfinite(depths).all():
        raise ValueError(f"instance {instance_id} has pixels without depth")
    k = int(np.argmax(depths))  # first max in row-major order
    r, c, d = int(rows[k]), int(cols[k]), float(depths[k])
    cam = frame.cam
    phi = cam.fov_rad * (0.5 - (c + 0.5) / cam.width)
    tan_v = ((cam.height / 2.0) - (r + 0.5)) / cam.focal_px
    return np.array([-d * math.sin(phi), d * tan_v, d * math.cos(phi)])


class SceneGraph:
    """Nodes per (frame, instance) with metric intra and merge inter edges."""

    def __init__(self, edge_mode: EdgeMode = EdgeMode.ALL_PAIRS_3D) -> None:
        self.edge_mode = EdgeMode(edge_mode)
        self.nodes: Dict[int, ObjectNode] = {}
        self.intra_edges: List[Tuple[int, int, float]] = []
        self.inter_edges: List[Tuple[int, int]] = []
        self.frame_poses: List[Pose] = []
        self.meta: Dict[str, object] = {}
        self._adj: Dict[int, List[Tuple[int, float]]] = {}
        self._frame_nodes: Dict[int, Dict[int, int]] = {}
        self._inter_set: Set[Tuple[int, int]] = set()
        self._next_id = 0

    # -- frame ingestion ------------------------------------------------------

    def add_frame(self, frame: Frame) -> List[int]:
        """Create one node per distinct instance and intra-frame edges."""
        if frame.frame_index in self._frame_nodes:
            raise ValueError(f"frame {frame.frame_index} already added")
        new_ids: List[int] = []
        inst_map: Dict[int, int] = {}
        for iid in frame.instance_list():
            mask = frame.ids == iid
            rows, cols = np.nonzero(mask)
            node = ObjectNode(
                node_id=self._next_id,
                frame_index=frame.frame_index,
                instance_id=iid,
                mask=mask,
                anchor=farthest_point(frame, iid),
                pixel_center=np.array([cols.mean() + 0.5, rows.mean() + 0.5]),
                category=frame.categories.get(iid, ""),
                area=int(len(rows)))
            self.nodes[node.node_id] = node
            self._adj[node.node_id] = []
            inst_map[iid] = node.node_id
            new_ids.append(node.node_id)
            self._next_id += 1
        self._frame_nodes[frame.frame_index] = inst_map
        for u, v in self._intra_pairs(new_ids):
            w = float(np.linalg.norm(self.nodes[u].anchor - self.nodes[v].anchor))
            w = max(w, _MIN_EDGE_WEIGHT)
            self.intra_edges.append((u, v, w))
            self._adj[u].append((v, w))
            self._adj[v].append((u, w))
        return new_ids

    def _intra_pairs(self, ids: List[int]) -> Iterable[Tuple[int, int]]:
        if len(ids) < 2:
            return []
        if self.edge_mode is EdgeMode.ALL_PAIRS_3D:
            return [(ids[i], ids[j])
                    for i in range(len(ids)) for j in range(i + 1, len(ids))]
        return self._delaunay_pairs(ids)

    def _delaunay_pairs(self, ids: List[int]) -> List[Tuple[int, int]]:
        centers = np.array([self.nodes[i].pixel_center for i in ids])
        if len(ids) >= 3:
            try:
                tri = Delaunay(centers)
            except QhullError:
                tri = None  # collinear centers; fall back to a chain
            if tri is not None:
                pairs: Set[Tuple[int, int]] = set()
                for simplex in tri.simplices:
                    for a in range(3):
                        for b in range(a + 1, 3):
                            u, v = ids[simplex[a]], ids[simplex[b]]
                            pairs.add((min(u, v), max(u, v)))
                return sorted(pairs)
        order = sorted(range(len(ids)),
                       key=lambda k: (centers[k][0], centers[k][1], ids[k]))
        return [(min(ids[order[i]], ids[order[i + 1]]),
                 max(ids[order[i]], ids[order[i + 1]]))
                for i in range(len(order) - 1)]

    # -- inter-frame merging --------------------------------------------------

    def link_frames(self, matches: Sequence[Tuple[int, int]]) -> int:
        """Add zero-weight merge edges between nodes of different frames."""
        added = 0
        for u, v in matches:
            if u not in self.nodes or v not in self.nodes:
                raise KeyError(f"unknown node in match ({u}, {v})")
            if self.nodes[u].frame_index == self.nodes[v].frame_index:
                raise ValueError(
                    f"inter-frame edge within frame {self.nodes[u].frame_index}")
            key = (min(u, v), max(u, v))
            if key in self._inter_set:
                continue
            self._inter_set.add(key)
            self.inter_edges.append(key)
            self._adj[u].append((v, 0.0))
            self._adj[v].append((u, 0.0))
            added += 1
        return added

    # -- queries --------------------------------------------------------------

    def neighbors(self, node_id: int) -> List[Tuple[int, float]]:
        return self._adj[node_id]

    def nodes_in_frame(self, frame_index: int) -> Dict[int, int]:
        """instance_id -> node_id mapping for one frame (may be empty)."""
        return self._frame_nodes.get(frame_index, {})

    @property
    def frame_count(self) -> int:
        if self.frame_poses:
            return len(self.frame_poses)
        return (max(self._frame_nodes) + 1) if self._frame_nodes else 0

    def instance_nodes(self, instance_id: int) -> List[int]:
        return [n.node_id for n in self.nodes.values()
                if n.instance_id == instance_id]

    # -- filtering ------------------------------------------------------------

    def filter_nodes(self, categories: Iterable[str] = DEFAULT_FILTER_CATEGORIES) -> int:
        """Drop nodes of the given categories along with incident edges."""
        cats = set(categories)
        doomed = {nid for nid, n in self.nodes.items() if n.category in cats}
        if not doomed:
            return 0
        for nid in doomed:
            del self.nodes[nid]
        self.intra_edges = [(u, v, w) for u, v, w in self.intra_edges
                            if u not in doomed and v not in doomed]
        self.inter_edges = [(u, v) for u, v in self.inter_edges
                            if u not in doomed and v not in doomed]
        self._inter_set = set(self.inter_edges)
        self._adj = {nid: [] for nid in self.nodes}
        for u, v, w in self.intra_edges:
            self._adj[u].append((v, w))
            self._adj[v].append((u, w))
        for u, v in self.inter_edges:
            self._adj[u].append((v, 0.0))
            self._adj[v].append((u, 0.0))
        for fmap in self._frame_nodes.values():
            for iid in [i for i, nid in fmap.items() if nid in doomed]:
                del fmap[iid]
        return len(doomed)


def match_frames_gt(frame_a: Frame, frame_b: Frame,
                    noise: Optional[PerceptionNoise] = None) -> List[Tuple[int, int]]:
    """Ground-truth instance matches between two frames, optionally corrupted.

    Returns (instance in a, instance in b) pairs.  With noise, each pair is
    independently dropped with ``p_drop`` and rewired to a random wrong
    partner with ``p_mismatch``.
    """
    ids_a = frame_a.instance_list()
    ids_b = set(frame_b.instance_list())
    shared = [i for i in ids_a if i in ids_b]
    if noise is None or not noise.active:
        return [(i, i) for i in shared]
    out: List[Tuple[int, int]] = []
    for i in shared:
        rng = noise.pair_rng(frame_a.frame_index, frame_b.frame_index, i)
        if rng.random() < noise.p_drop:
            continue
        j = i
        if rng.random() < noise.p_mismatch:
            others = sorted(ids_b - {i})
            if others:
                j = others[int(rng.integers(len(others)))]
        out.append((i, j))
    return out


def build_map(world: World, trajectory: Sequence[Pose], cam: CameraParams,
              edge_mode: EdgeMode = EdgeMode.ALL_PAIRS_3D,
              noise: Optional[PerceptionNoise] = None,
              link_horizon: int = DEFAULT_LINK_HORIZON,
              filter_categories: Iterable[str] = DEFAULT_FILTER_CATEGORIES) -> SceneGraph:
    """Render a trajectory and assemble the merged multi-frame scene graph."""
    graph = SceneGraph(edge_mode)
    frames: List[Frame] = []
    for k, pose in enumerate(trajectory):
        frame = render(world, pose, cam, frame_index=k)
        graph.add_frame(frame)
        frames.append(frame)
        graph.frame_poses.append(pose)
    for b in range(len(frames)):
        for a in range(max(0, b - link_horizon), b):
            pairs = match_frames_gt(frames[a], frames[b], noise)
            node_pairs = []
            for ia, ib in pairs:
                na = graph.nodes_in_frame(a).get(ia)
                nb = graph.nodes_in_frame(b).get(ib)
                if na is not None and nb is not None:
                    node_pairs.append((na, nb))
            graph.link_frames(node_pairs)
    graph.filter_nodes(filter_categories)
    graph.meta = {
        "camera": {"fov_deg": cam.fov_deg, "width": cam.width,
                   "height": cam.height, "sensor_height": cam.sensor_height,
                   "max_range": cam.max_range},
        "focal_px": cam.focal_px,
        "edge_mode": graph.edge_mode.value,
        "link_horizon": int(link_horizon),
        "filtered_categories": sorted(filter_categories),
        "noise_seed": (noise.seed if noise is not None else None),
    }
    return graph


# -- serialization ------------------------------------------------------------

def _rle_encode(mask: np.ndarray) -> List[int]:
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    if len(flat) == 0:
        return []
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], change, [len(flat)]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:  # runs always start with a zero-count
        runs = [0] + runs
    return [int(r) for r in runs]


def _rle_decode(runs: Sequence[int], shape: Tuple[int, int]) -> np.ndarray:
    total = shape[0] * shape[1]
    flat = np.zeros(total, dtype=bool)
    pos = 0
    val = False
    for run in runs:
        if val:
            flat[pos:pos + run] = True
        pos += run
        val = not val
    if pos != total:
        raise ValueError("run-length data does not match mask shape")
    return flat.reshape(shape)


def save_map(graph: SceneGraph, path: str) -> None:
    nodes = []
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        nodes.append({
            "id": n.node_id,
            "frame": n.frame_index,
            "instance": n.instance_id,
            "category": n.category,
            "area": n.area,
            "anchor": [float(v) for v in n.anchor],
            "center": [float(v) for v in n.pixel_center],
            "mask_shape": list(n.mask.shape),
            "mask_rle": _rle_encode(n.mask),
        })
    doc = {
        "version": 1,
        "header": dict(graph.meta, frame_count=len(graph.frame_poses)),
        "frame_poses": [[p.x, p.y, p.yaw] for p in graph.frame_poses],
        "nodes": nodes,
        "intra_edges": [[u, v, w] for u, v, w in graph.intra_edges],
        "inter_edges": [[u, v] for u, v in graph.inter_edges],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_map(path: str) -> SceneGraph:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported map version {doc.get('version')!r}")
    header = doc.get("header", {})
    graph = SceneGraph(EdgeMode(header.get("edge_mode", EdgeMode.ALL_PAIRS_3D.value)))
    graph.meta = {k: v for k, v in header.items() if k != "frame_count"}
    graph.frame_poses = [Pose(x, y, yaw) for x, y, yaw in doc.get("frame_poses", [])]
    for rec in doc["nodes"]:
        node = ObjectNode(
            node_id=int(rec["id"]),
            frame_index=int(rec["frame"]),
            instance_id=int(rec["instance"]),
            mask=_rle_decode(rec["mask_rle"], tuple(rec["mask_shape"])),
            anchor=np.asarray(rec["anchor"], dtype=float),
            pixel_center=np.asarray(rec["center"], dtype=float),
            category=rec["category"],
            area=int(rec["area"]))
        graph.nodes[node.node_id] = node
        graph._adj[node.node_id] = []
        graph._frame_nodes.setdefault(node.frame_index, {})[node.instance_id] = node.node_id
        graph._next_id = max(graph._next_id, node.node_id + 1)
    for u, v, w in doc["intra_edges"]:
        graph.intra_edges.append((int(u), int(v), float(w)))
        graph._adj[int(u)].append((int(v), float(w)))
        graph._adj[int(v)].append((int(u), float(w)))
    for u, v in doc["inter_edges"]:
        key = (int(u), int(v))
        graph.inter_edges.append(key)
        graph._inter_set.add(key)
        graph._adj[key[0]].append((key[1], 0.0))
        graph._adj[key[1]].append((key[0], 0.0))
    return graph
