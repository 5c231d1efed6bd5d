"""Synthetic motion-classification videos: a bright square moving over a
static textured-noise background, labeled by its INITIAL movement direction
(class k starts at angle 2*pi*k/C).  Labels are motion-defined on purpose: a
single frame carries no label information.

Rendering is subpixel (exact pixel-coverage compositing) and boundaries are
reflective: at the default speed every clip bounces off a wall, usually
twice.  Bounces are what make temporal coverage matter.  A frame pair inside
a straight segment gives the current velocity directly, but a reflection
flips a velocity component, so recovering the initial direction requires
following the trajectory through its bounces.  Schedules that keep every
frame partially visible can do that; schedules that drop whole frames lose
bounce events and with them the label.  Every clip is a pure function of
(spec, stream seeds), so datasets are byte-reproducible.

The oracle classifier lives here too: it tracks the object centroid in every
frame and matches the track against each class's reflected constant-speed
trajectory.  It validates that a dataset is learnable before any model sees
it.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .patchio import write_clip, write_manifest


@dataclass(frozen=True)
class MotionSpec:
    class_count: int = 8
    frames: int = 16
    height: int = 32
    width: int = 32
    channels: int = 1
    object_size: float = 8.0
    speed: float = 3.0
    noise: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least 2 direction classes")
        if min(self.frames, self.height, self.width, self.channels) < 1:
            raise ValueError("clip dims must be positive")
        if not 0.0 < self.object_size < min(self.height, self.width):
            raise ValueError("object must fit inside the frame")
        if self.speed < 0 or not 0.0 <= self.noise <= 1.0:
            raise ValueError("bad speed or noise level")


def direction_angle(label: int, class_count: int) -> float:
    return 2.0 * math.pi * label / class_count


def _reflect(p: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    y = (p - lo) % (2.0 * span)
    return lo + min(y, 2.0 * span - y)


def render_clip(spec: MotionSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    """One [T, H, W, C] float32 clip in [0, 1] for the given direction."""
    if not 0 <= label < spec.class_count:
        raise ValueError(f"label {label} outside [0, {spec.class_count})")
    T, H, W = spec.frames, spec.height, spec.width
    half = spec.object_size / 2.0
    ang = direction_angle(label, spec.class_count)
    vx, vy = spec.speed * math.cos(ang), spec.speed * math.sin(ang)

    bg = rng.uniform(0.0, spec.noise, size=(H, W))
    lo_x, hi_x = half, W - half
    lo_y, hi_y = half, H - half
    # Starts keep two steps of clearance from the walls: a trajectory that
    # reflects immediately at distance epsilon is within 2*epsilon of its
    # mirror class's trajectory, which no classifier could separate.
    margin = 2.0 * spec.speed
    if hi_x - lo_x <= 2.0 * margin or hi_y - lo_y <= 2.0 * margin:
        raise ValueError(f"speed {spec.speed} too high for a {H}x{W} frame with size {spec.object_size}")
    cx0 = rng.uniform(lo_x + margin, hi_x - margin)
    cy0 = rng.uniform(lo_y + margin, hi_y - margin)

    frames = np.empty((T, H, W), dtype=np.float64)
    for t in range(T):
        cx = _reflect(cx0 + vx * t, lo_x, hi_x)
        cy = _reflect(cy0 + vy * t, lo_y, hi_y)
        frame = bg.copy()
        kernels.paint_square(frame, cy, cx, half, 1.0)
        frames[t] = frame
    clip = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return np.repeat(clip[..., None], spec.channels, axis=-1)


def make_split(spec: MotionSpec, n: int, split_seed: int, out_dir, split: str):
    """Write n clips with balanced labels; returns manifest rows.

    Per-clip streams derive from (spec.seed, split_seed, index), so splits
    with different split_seeds are disjoint and regeneration is exact.
    """
    if n < spec.class_count:
        raise ValueError(f"need at least {spec.class_count} clips for class balance")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(n):
        label = i % spec.class_count
        rng = np.random.default_rng([spec.seed, split_seed, i])
        clip = render_clip(spec, label, rng)
        name = f"{split}_{i:05d}.clip"
        write_clip(os.path.join(out_dir, name), clip, label)
        rows.append((name, label, split))
    return rows


def build_dataset(spec: MotionSpec, n_train: int, n_val: int, out_dir) -> str:
    """Standard two-split layout; returns the manifest path."""
    rows = make_split(spec, n_train, 1, out_dir, "train")
    rows += make_split(spec, n_val, 2, out_dir, "val")
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, rows)
    return manifest


# ---------------------------------------------------------------------------
# trajectory-matching oracle


def _centroid(weights: np.ndarray):
    total = weights.sum()
    if total <= 1e-9:
        return None
    h, w = weights.shape
    cy = float(weights.sum(axis=1) @ np.arange(h)) / total
    cx = float(weights.sum(axis=0) @ np.arange(w)) / total
    return cy, cx


def oracle_track(clip: np.ndarray):
    """Per-frame (y, x) centroids of the bright object, or None if a frame
    has no pixel clearly above the background band."""
    frames = np.asarray(clip, dtype=np.float64)
    if frames.ndim == 4:
        frames = frames.mean(axis=-1)
    points = []
    for frame in frames:
        c = _centroid(np.clip(frame - 0.5, 0.0, None))
        if c is None:
            return None
        points.append(c)
    return np.asarray(points)


def oracle_predict(clip: np.ndarray, class_count: int) -> int:
    """Match the centroid track against each class's reflected trajectory.

    Speed and object extent are estimated from the clip itself (median step
    length; bright area of the first frame), so only the class geometry is
    assumed."""
    track = oracle_track(clip)
    if track is None or len(track) < 2:
        return 0
    frames = np.asarray(clip, dtype=np.float64)
    if frames.ndim == 4:
        frames = frames.mean(axis=-1)
    t_n, h, w = frames.shape
    steps = np.linalg.norm(np.diff(track, axis=0), axis=1)
    speed = float(np.median(steps))
    half = math.sqrt(max(float((frames[0] > 0.5).sum()), 1.0)) / 2.0
    y0, x0 = track[0]
    times = np.arange(t_n)
    best, best_err = 0, math.inf
    for k in range(class_count):
        ang = direction_angle(k, class_count)
        sim_y = np.array([_reflect(y0 + speed * math.sin(ang) * t, half, h - half) for t in times])
        sim_x = np.array([_reflect(x0 + speed * math.cos(ang) * t, half, w - half) for t in times])
        err = float(((sim_y - track[:, 0]) ** 2 + (sim_x - track[:, 1]) ** 2).sum())
        if err < best_err:
            best, best_err = k, err
    return best


def oracle_accuracy(clips, labels, class_count: int) -> float:
    hits = sum(oracle_predict(c, class_count) == l for c, l in zip(clips, labels))
    return hits / len(labels)
