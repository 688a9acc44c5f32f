"""Dense per-pixel goal-cost encoding.

Raw path lengths are rescaled per image to integer levels in [1, L] (L =
closest to goal, 1 = farthest, 0 reserved for outliers), each level is
expanded to a D-dimensional sinusoidal code, and segment masks paint those
codes into an H x W x D tensor.  The mapping is exactly invertible, which the
controller uses to recover (segment, level) pairs from the tensor alone.
"""
from __future__ import annotations

import functools
import json
import math
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

OUTLIER_LEVEL = 0


@dataclass(frozen=True)
class CostmapConfig:
    dim: int = 8            # encoding dimension, even
    freq_base: float = 10000.0
    level_max: int = 100    # levels span [1, level_max]; 0 marks outliers

    def __post_init__(self) -> None:
        if self.dim < 2 or self.dim % 2 != 0:
            raise ValueError("dim must be an even number >= 2")
        if self.freq_base <= 1.0:
            raise ValueError("freq_base must be > 1")
        if self.level_max < 1:
            raise ValueError("level_max must be >= 1")


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def rescale(raw: Sequence[Optional[float]], cfg: CostmapConfig) -> List[int]:
    """Min-max rescale raw costs to integer levels; None stays outlier 0.

    The smallest raw cost maps to ``level_max`` and the largest to 1, so
    larger levels mean closer to the goal.  If all finite costs are equal
    every one of them gets ``level_max``.
    """
    finite = [c for c in raw if c is not None]
    for c in finite:
        if c < 0.0 or not math.isfinite(c):
            raise ValueError(f"raw costs must be finite and >= 0, got {c}")
    levels: List[int] = []
    if finite:
        lo, hi = min(finite), max(finite)
        span = hi - lo
    for c in raw:
        if c is None:
            levels.append(OUTLIER_LEVEL)
        elif span == 0.0:
            levels.append(cfg.level_max)
        else:
            frac = (hi - c) / span
            levels.append(1 + _round_half_away((cfg.level_max - 1) * frac))
    return levels


@functools.lru_cache(maxsize=8)
def _encode_table(cfg: CostmapConfig) -> np.ndarray:
    table = np.empty((cfg.level_max + 1, cfg.dim))
    for level in range(cfg.level_max + 1):
        table[level] = encode(level, cfg)
    table.setflags(write=False)
    return table


def encode(level: int, cfg: CostmapConfig) -> np.ndarray:
    """Sinusoidal code of one level: sin on even slots, cos on odd slots."""
    if not 0 <= level <= cfg.level_max:
        raise ValueError(f"level {level} outside [0, {cfg.level_max}]")
    i = np.arange(cfg.dim)
    exponent = (i - (i % 2)) / cfg.dim
    args = level / np.power(cfg.freq_base, exponent)
    out = np.where(i % 2 == 0, np.sin(args), np.cos(args))
    return out


@dataclass
class CostSegment:
    """Ledger entry: one query segment with its mask, raw cost, and level."""

    instance_id: int
    mask: np.ndarray           # (H, W) bool
    cost: Optional[float]      # metres; None for outliers
    level: int


@dataclass
class WayObjectCostmap:
    tensor: np.ndarray              # (H, W, D) float64
    segments: List[CostSegment]
    config: CostmapConfig
    level_image: Optional[np.ndarray] = None  # (H, W) int32, -1 = unowned


def assemble(segments: Sequence[CostSegment], cfg: CostmapConfig,
             height: int, width: int) -> WayObjectCostmap:
    """Paint per-segment codes into a dense tensor.

    Pixels owned by no segment stay zero vectors.  Where masks overlap the
    segment with the smaller raw cost wins (outliers always lose); remaining
    ties go to the smaller instance id.
    """
    tensor = np.zeros((height, width, cfg.dim))
    level_image = np.full((height, width), -1, dtype=np.int32)
    inf = float("inf")

    def priority(seg: CostSegment) -> Tuple[float, int]:
        return (seg.cost if seg.cost is not None else inf, seg.instance_id)

    for seg in sorted(segments, key=priority, reverse=True):
        if seg.mask.shape != (height, width):
            raise ValueError(
                f"segment {seg.instance_id} mask shape {seg.mask.shape} "
                f"does not match ({height}, {width})")
        tensor[seg.mask] = encode(seg.level, cfg)
        level_image[seg.mask] = seg.level
    return WayObjectCostmap(tensor=tensor, segments=list(segments),
                            config=cfg, level_image=level_image)


def augment_outliers(segments: Sequence[CostSegment], fraction: float,
                     seed: int) -> List[CostSegment]:
    """Replace a random floor(fraction * N) subset of segments by outliers."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(segments)
    k = int(math.floor(fraction * n))
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n, size=k, replace=False).tolist()) if k else set()
    out: List[CostSegment] = []
    for idx, seg in enumerate(segments):
        if idx in chosen:
            out.append(CostSegment(seg.instance_id, seg.mask, None, OUTLIER_LEVEL))
        else:
            out.append(seg)
    return out


def decode_segments(cmap: WayObjectCostmap,
                    tolerance: float = 1e-9) -> List[Tuple[np.ndarray, int]]:
    """Recover (mask, level) pairs from the tensor alone.

    Pixels with identical code vectors form one segment; zero vectors are
    background.  Each distinct code must match some encode(level) within the
    tolerance, otherwise the tensor is not a valid costmap.
    """
    cfg = cmap.config
    h, w, d = cmap.tensor.shape
    if d != cfg.dim:
        raise ValueError("tensor depth does not match config dim")
    rows = cmap.tensor.reshape(h * w, d)
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    table = _encode_table(cfg)
    by_level: Dict[int, np.ndarray] = {}
    for k, vec in enumerate(uniq):
        if not vec.any():
            continue  # background
        err = np.abs(table - vec[None, :]).max(axis=1)
        level = int(np.argmin(err))
        if err[level] > tolerance:
            raise ValueError(
                f"code vector matches no level within {tolerance:g} "
                f"(best level {level}, error {err[level]:.3g})")
        mask = (inverse == k).reshape(h, w)
        if level in by_level:
            by_level[level] = by_level[level] | mask
        else:
            by_level[level] = mask
    return [(by_level[lv], lv) for lv in sorted(by_level)]


# -- dump files ---------------------------------------------------------------

_MAGIC = b"WOCM"


def save_costmap(cmap: WayObjectCostmap, prefix: str) -> Dict[str, str]:
    """Write binary tensor, JSON ledger sidecar, and a false-color PPM.

    The binary layout is a little-endian header (magic, H, W, D int32;
    level_max int32; freq_base float32) followed by the row-major float32
    tensor.  Returns the written paths.
    """
    h, w, d = cmap.tensor.shape
    cfg = cmap.config
    bin_path = prefix + ".bin"
    json_path = prefix + ".json"
    ppm_path = prefix + ".ppm"
    with open(bin_path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<iiiif", h, w, d, cfg.level_max, cfg.freq_base))
        fh.write(np.ascontiguousarray(cmap.tensor, dtype="<f4").tobytes())
    ledger = [{"instance": seg.instance_id,
               "cost": seg.cost,
               "level": seg.level,
               "pixels": int(seg.mask.sum())}
              for seg in cmap.segments]
    with open(json_path, "w") as fh:
        json.dump({"version": 1,
                   "shape": [h, w, d],
                   "config": {"dim": cfg.dim, "freq_base": cfg.freq_base,
                              "level_max": cfg.level_max},
                   "ledger": ledger}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_ppm(cmap, ppm_path)
    return {"bin": bin_path, "json": json_path, "ppm": ppm_path}


def load_costmap(prefix: str) -> Tuple[WayObjectCostmap, List[Dict[str, object]]]:
    """Read a dump back; tensor values carry float32 precision."""
    with open(prefix + ".bin", "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError("not a costmap dump")
        h, w, d, level_max, freq_base = struct.unpack("<iiiif", fh.read(20))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != h * w * d:
        raise ValueError("costmap dump truncated")
    with open(prefix + ".json") as fh:
        sidecar = json.load(fh)
    cfg = CostmapConfig(dim=d, freq_base=float(freq_base), level_max=level_max)
    tensor = data.astype(np.float64).reshape(h, w, d)
    cmap = WayObjectCostmap(tensor=tensor, segments=[], config=cfg)
    return cmap, sidecar.get("ledger", [])


def _level_colors(level_max: int) -> np.ndarray:
    """Color ramp: outliers red, far levels blue, near levels yellow."""
    colors = np.zeros((level_max + 1, 3), dtype=np.uint8)
    colors[0] = (200, 40, 40)
    t = np.linspace(0.0, 1.0, level_max)
    colors[1:, 0] = np.round(255 * t)
    colors[1:, 1] = np.round(80 + 120 * t)
    colors[1:, 2] = np.round(255 * (1.0 - t))
    return colors


def write_ppm(cmap: WayObjectCostmap, path: str) -> None:
    if cmap.level_image is None:
        raise ValueError("costmap has no level image to render")
    h, w = cmap.level_image.shape
    colors = _level_colors(cmap.config.level_max)
    img = np.full((h, w, 3), 32, dtype=np.uint8)
    owned = cmap.level_image >= 0
    img[owned] = colors[cmap.level_image[owned]]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
