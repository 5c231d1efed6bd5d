"""Deterministic mask-schedule generation over a token lattice.

A schedule is a boolean [t, h, w] array (True = masked) over the clip's token
lattice.  Strategies fall into two families.

Running strategies advance a base pattern by one scan position per frame, so
every site alternates between masked and visible with a fixed period:

  cell_running     the frame tiles into r x q cells; each cell masks a
                   contiguous run of ratio*r*q scan positions (row-major
                   inside the cell) and the run's offset advances by one per
                   frame.  A cell's offset at frame 0 is its starting state.
  uniform_running  one frame-sized cell whose base pattern spreads the masked
                   positions evenly along the scan order, then rolls.
  random_running   frame 0 masks a uniform random site subset, then rolls.
  block_running    frame 0 masks a solid rectangle, then rolls (the rectangle
                   wraps along the scan order as it moves).

Standard strategies have no per-frame advance:

  random_standard  ratio of all t*h*w sites masked uniformly at random.
  block_standard   one rectangle (most-square factorization of ratio*h*w),
                   same random placement in every frame.
  tube_standard    one random spatial site subset, same in every frame.
  frame_standard   ratio of whole frames masked.

Starting states: spatial mode 'repeated' gives every cell one shared start,
drawn at random unless the spec pins start_state; 'random' draws independent
starts per cell.  Temporal mode 'fixed' advances states in order from the
start; 'shuffled' visits the states of each period in a fresh random order
(identically across cells).  The deterministic inference schedule is
repeated + fixed + start_state 0.  All randomness comes from one generator
seeded by the spec, so (spec, shape) fully determines the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

RUNNING_STRATEGIES = ("cell_running", "uniform_running", "random_running", "block_running")
STANDARD_STRATEGIES = ("random_standard", "block_standard", "tube_standard", "frame_standard")
STRATEGIES = RUNNING_STRATEGIES + STANDARD_STRATEGIES

SPATIAL_MODES = ("repeated", "random")
TEMPORAL_MODES = ("fixed", "shuffled")


@dataclass(frozen=True)
class LatticeShape:
    t: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.t, self.h, self.w) < 1:
            raise ValueError(f"lattice extents must be >= 1, got {self}")

    @property
    def frame_sites(self) -> int:
        return self.h * self.w

    @property
    def sites(self) -> int:
        return self.t * self.h * self.w


@dataclass(frozen=True)
class CellState:
    """Circular position of the masked run within a cell's scan order."""

    offset: int


def advance_state(state: CellState, r: int, q: int) -> CellState:
    """One frame step: the run's start offset moves forward by one."""
    period = r * q
    if not 0 <= state.offset < period:
        raise ValueError(f"offset {state.offset} outside [0, {period})")
    return CellState((state.offset + 1) % period)


def run_positions(state: CellState, r: int, q: int, k: int) -> np.ndarray:
    """Scan positions masked by a state: k contiguous slots from its offset,
    wrapping at the cell boundary."""
    return (state.offset + np.arange(k, dtype=np.int64)) % (r * q)


@dataclass(frozen=True)
class MaskSpec:
    """Everything needed to realize a schedule.  start_state pins the shared
    starting state (deterministic inference probes); None draws it from the
    seed like the other training augmentations."""

    strategy: str = "cell_running"
    ratio: float = 0.5
    r: int = 2
    q: int = 2
    spatial_mode: str = "repeated"
    temporal_mode: str = "fixed"
    seed: int = 0
    start_state: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"ratio must be in [0, 1), got {self.ratio}")
        if self.spatial_mode not in SPATIAL_MODES:
            raise ValueError(f"unknown spatial_mode {self.spatial_mode!r}")
        if self.temporal_mode not in TEMPORAL_MODES:
            raise ValueError(f"unknown temporal_mode {self.temporal_mode!r}")
        if self.r < 1 or self.q < 1:
            raise ValueError(f"cell dims must be positive, got {self.r}x{self.q}")

    def to_kv(self) -> str:
        """One key=value pair per line, canonical key order."""
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_kv(cls, text: str) -> "MaskSpec":
        kw = {}
        known = {f.name for f in fields(cls)}
        text_keys = ("strategy", "spatial_mode", "temporal_mode")
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {ln}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ValueError(f"line {ln}: unknown key {key!r}")
            if key in text_keys:
                kw[key] = val
            elif key == "ratio":
                kw[key] = float(val)
            elif key == "start_state":
                kw[key] = None if val == "None" else int(val)
            else:
                kw[key] = int(val)
        return cls(**kw)


class MaskSchedule:
    """A realized boolean mask over the token lattice (True = masked)."""

    def __init__(self, masked: np.ndarray):
        masked = np.asarray(masked, dtype=bool)
        if masked.ndim != 3:
            raise ValueError(f"schedule must be [t, h, w], got {masked.shape}")
        self.masked = masked

    @property
    def shape(self) -> LatticeShape:
        t, h, w = self.masked.shape
        return LatticeShape(t, h, w)

    @property
    def n_masked(self) -> int:
        return int(self.masked.sum())

    @property
    def n_visible(self) -> int:
        return self.masked.size - self.n_masked

    def visible_indices(self) -> np.ndarray:
        """Flat lattice indices of visible sites, ascending scan order."""
        return np.flatnonzero(~self.masked.ravel()).astype(np.int64)

    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked.ravel()).astype(np.int64)

    def per_frame_masked(self) -> np.ndarray:
        return self.masked.sum(axis=(1, 2))


def generate(spec: MaskSpec, shape: LatticeShape, rng: np.random.Generator | None = None) -> MaskSchedule:
    """Build the schedule for spec over shape; deterministic given both."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    build = {
        "cell_running": _cell_running,
        "uniform_running": _uniform_running,
        "random_running": _random_running,
        "block_running": _block_running,
        "random_standard": _random_standard,
        "block_standard": _block_standard,
        "tube_standard": _tube_standard,
        "frame_standard": _frame_standard,
    }[spec.strategy]
    return MaskSchedule(build(spec, shape, rng))


def _state_sequence(period: int, t: int, spec: MaskSpec, rng) -> np.ndarray:
    """Temporal state offsets, before adding per-cell starts.  Fixed mode
    counts up from zero; shuffled mode visits each period's states in a fresh
    random order."""
    if spec.temporal_mode == "fixed":
        return np.arange(t, dtype=np.int64) % period
    out = np.empty(0, dtype=np.int64)
    while out.size < t:
        out = np.concatenate([out, rng.permutation(period)])
    return out[:t]


def _start_offsets(period: int, n_cells: int, spec: MaskSpec, rng) -> np.ndarray:
    if spec.spatial_mode == "random":
        return rng.integers(0, period, size=n_cells).astype(np.int64)
    if spec.start_state is not None:
        if not 0 <= spec.start_state < period:
            raise ValueError(f"start_state {spec.start_state} outside [0, {period})")
        shared = spec.start_state
    else:
        shared = int(rng.integers(0, period))
    return np.full(n_cells, shared, dtype=np.int64)


def _cell_running(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    t, h, w = shape.t, shape.h, shape.w
    r, q = spec.r, spec.q
    if r * q < 2:
        raise ValueError("running cell needs at least 2 positions")
    if h % r or w % q:
        raise ValueError(f"cell {r}x{q} does not tile a {h}x{w} frame")
    period = r * q
    k_real = spec.ratio * period
    k = round(k_real)
    if abs(k_real - k) > 1e-9:
        raise ValueError(f"ratio {spec.ratio} does not give whole masks per {r}x{q} cell")
    grid_h, grid_w = h // r, w // q
    starts = _start_offsets(period, grid_h * grid_w, spec, rng)
    states = _state_sequence(period, t, spec, rng)
    pos = np.arange(period, dtype=np.int64)
    rel = (pos[None, None, :] - states[:, None, None] - starts[None, :, None]) % period
    cell_masked = rel < k  # [t, cells, period]
    grid = cell_masked.reshape(t, grid_h, grid_w, r, q)
    return grid.transpose(0, 1, 3, 2, 4).reshape(t, h, w)


def _rolled_frames(base_flat: np.ndarray, shape: LatticeShape, spec: MaskSpec, rng) -> np.ndarray:
    """Shared tail of the whole-frame running strategies: roll the base
    pattern along the scan order by the start offset plus each frame's
    state."""
    t, h, w = shape.t, shape.h, shape.w
    n = shape.frame_sites
    start = int(_start_offsets(n, 1, spec, rng)[0])
    states = (_state_sequence(n, t, spec, rng) + start) % n
    out = np.empty((t, n), dtype=bool)
    for i in range(t):
        out[i] = np.roll(base_flat, int(states[i]))
    return out.reshape(t, h, w)


def _uniform_running(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    n = shape.frame_sites
    k = round(spec.ratio * n)
    i = np.arange(n, dtype=np.int64)
    base = ((i + 1) * k) // n - (i * k) // n >= 1
    return _rolled_frames(base, shape, spec, rng)


def _random_running(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    n = shape.frame_sites
    k = round(spec.ratio * n)
    base = np.zeros(n, dtype=bool)
    base[rng.choice(n, size=k, replace=False)] = True
    return _rolled_frames(base, shape, spec, rng)


def _fit_rectangle(area: int, h: int, w: int) -> tuple[int, int]:
    """Most-square a x b = area with a <= h, b <= w; ties prefer wide."""
    best = None
    for a in range(1, area + 1):
        if area % a:
            continue
        b = area // a
        if a > h or b > w:
            continue
        key = (max(a / b, b / a), a > b)
        if best is None or key < best[0]:
            best = (key, (a, b))
    if best is None:
        raise ValueError(f"no {area}-site rectangle fits a {h}x{w} frame")
    return best[1]


def _block_running(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    # the rectangle anchors at the frame origin; the start offset (shared
    # random, or pinned by start_state) rolls it along the scan order
    h, w = shape.h, shape.w
    area = round(spec.ratio * shape.frame_sites)
    frame = np.zeros((h, w), dtype=bool)
    if area:
        a, b = _fit_rectangle(area, h, w)
        frame[:a, :b] = True
    return _rolled_frames(frame.ravel(), shape, spec, rng)


def _block_standard(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    h, w = shape.h, shape.w
    area = round(spec.ratio * shape.frame_sites)
    frame = np.zeros((h, w), dtype=bool)
    if area:
        a, b = _fit_rectangle(area, h, w)
        top = int(rng.integers(0, h - a + 1))
        left = int(rng.integers(0, w - b + 1))
        frame[top : top + a, left : left + b] = True
    return np.broadcast_to(frame, (shape.t, h, w)).copy()


def _random_standard(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    total = shape.sites
    k = round(spec.ratio * total)
    flat = np.zeros(total, dtype=bool)
    flat[rng.choice(total, size=k, replace=False)] = True
    return flat.reshape(shape.t, shape.h, shape.w)


def _tube_standard(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    n = shape.frame_sites
    k = round(spec.ratio * n)
    frame = np.zeros(n, dtype=bool)
    frame[rng.choice(n, size=k, replace=False)] = True
    return np.broadcast_to(frame.reshape(shape.h, shape.w), (shape.t, shape.h, shape.w)).copy()


def _frame_standard(spec: MaskSpec, shape: LatticeShape, rng) -> np.ndarray:
    k = round(spec.ratio * shape.t)
    out = np.zeros((shape.t, shape.h, shape.w), dtype=bool)
    if k:
        out[rng.choice(shape.t, size=k, replace=False)] = True
    return out


# ---------------------------------------------------------------------------
# coverage reporting


def window_visibility(schedule: MaskSchedule, window: int) -> np.ndarray:
    """Visible-slot counts per site over every window of `window` consecutive
    frames: [t - window + 1, h, w]."""
    if window > schedule.shape.t:
        raise ValueError(f"window {window} exceeds {schedule.shape.t} frames")
    vis = (~schedule.masked).astype(np.int64)
    c = np.cumsum(vis, axis=0)
    pad = np.zeros((1,) + vis.shape[1:], dtype=np.int64)
    c = np.concatenate([pad, c], axis=0)
    return c[window:] - c[:-window]


def coverage_stats(schedule: MaskSchedule, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Per spatial site, the (min, max) visible-frame count over all windows
    of the given length."""
    counts = window_visibility(schedule, window)
    return counts.min(axis=0), counts.max(axis=0)


def write_pbm(path, frame: np.ndarray) -> None:
    """Dump one boolean frame as plain PBM (P1); masked sites are black (1)."""
    frame = np.asarray(frame, dtype=bool)
    h, w = frame.shape
    with open(path, "w") as f:
        f.write(f"P1\n{w} {h}\n")
        for row in frame.astype(int):
            f.write(" ".join(str(v) for v in row) + "\n")
