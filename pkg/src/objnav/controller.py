"""Reactive steering from a decoded costmap.

Segments vote for a steering angle: each one pulls toward its mask centroid
column with a softmax weight over its goal-proximity score.  The angle then
becomes a clipped (v, omega) command, smoothed over a short window.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from .costmap import WayObjectCostmap, decode_segments


class NoGuidance(Exception):
    """Raised when no non-outlier segment is available to steer by."""


@dataclass
class ControllerParams:
    gain: float = 0.4
    temperature: float = 5.0
    image_width: int = 85
    image_center: Optional[float] = None  # defaults to image_width / 2
    v_nominal: float = 0.05
    fixed_linear: bool = False      # ignore the cos(dphi) slowdown
    control_period: float = 1.0     # seconds per step
    smoothing_window: int = 5

    @property
    def center(self) -> float:
        if self.image_center is not None:
            return self.image_center
        return self.image_width / 2.0


@dataclass(frozen=True)
class CommandLimits:
    v_max: float = 0.05        # m/s
    omega_max: float = 0.1     # rad/s


DEFAULT_LIMITS = CommandLimits()


@dataclass
class ControlCommand:
    v: float
    omega: float


def reactive_yaw(segments: Sequence[Tuple[float, int]],
                 params: ControllerParams) -> float:
    """Softmax-weighted image-plane steering angle.

    ``segments`` holds (centroid column, level) pairs; level 0 entries are
    outliers and take no part.  Scores are the min-max normalized levels (all
    equal -> all 1), and the returned angle is positive toward larger columns.
    """
    live = [(m, lv) for m, lv in segments if lv > 0]
    if not live:
        raise NoGuidance("all segments are outliers")
    levels = np.array([lv for _, lv in live], dtype=float)
    cols = np.array([m for m, _ in live], dtype=float)
    lo, hi = levels.min(), levels.max()
    scores = np.ones_like(levels) if hi == lo else (levels - lo) / (hi - lo)
    logits = params.temperature * scores
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    return float(params.gain / params.image_width
                 * np.sum(weights * (cols - params.center)))


def to_command(delta_phi: float, params: ControllerParams,
               limits: CommandLimits = DEFAULT_LIMITS) -> ControlCommand:
    """Turn a steering angle into a clipped unicycle command.

    The steering angle is positive toward image right, which is a clockwise
    heading change, so the world-frame yaw rate gets the opposite sign.  The
    linear speed backs off with the cosine of the angle unless fixed.
    """
    omega = max(-limits.omega_max,
                min(limits.omega_max, -delta_phi / params.control_period))
    if params.fixed_linear:
        v = params.v_nominal
    else:
        v = params.v_nominal * max(0.0, math.cos(delta_phi))
    v = max(0.0, min(limits.v_max, v))
    return ControlCommand(v=v, omega=omega)


class CommandSmoother:
    """Mean filter over the last few commands."""

    def __init__(self, window: int = 5) -> None:
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._buf: Deque[ControlCommand] = deque(maxlen=window)

    def reset(self) -> None:
        self._buf.clear()

    def push(self, cmd: ControlCommand) -> ControlCommand:
        self._buf.append(cmd)
        n = len(self._buf)
        return ControlCommand(v=sum(c.v for c in self._buf) / n,
                              omega=sum(c.omega for c in self._buf) / n)


def smooth(smoother: CommandSmoother, cmd: ControlCommand) -> ControlCommand:
    return smoother.push(cmd)


def segment_centroids(cmap: WayObjectCostmap) -> List[Tuple[float, int]]:
    """Decode a costmap into (centroid column, level) steering inputs."""
    out = []
    for mask, level in decode_segments(cmap):
        cols = np.nonzero(mask)[1]
        out.append((float(cols.mean()) + 0.5, level))
    return out


def control_step(cmap: WayObjectCostmap, params: ControllerParams,
                 smoother: CommandSmoother,
                 limits: CommandLimits = DEFAULT_LIMITS) -> ControlCommand:
    """One full control cycle: decode, steer, clip, smooth.

    With no usable segment the raw command falls back to a rotate-in-place
    scan (v = 0, omega = +omega_max) so the agent can reacquire guidance.
    """
    try:
        dphi = reactive_yaw(segment_centroids(cmap), params)
        raw = to_command(dphi, params, limits)
    except NoGuidance:
        raw = ControlCommand(v=0.0, omega=limits.omega_max)
    return smooth(smoother, raw)
