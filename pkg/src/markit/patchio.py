"""Clip files, dataset manifests, patch extraction, positional encodings.

A clip file is five little-endian int32 values (frames, height, width,
channels, label) followed by the pixel payload as float32 little-endian in
[t, y, x, channel] order.  A manifest is a CSV with one ``path,label,split``
row per clip; paths are relative to the manifest's directory.

Patchify cuts a clip into non-overlapping pt x ph x pw tubelets and flattens
each to a row, in lattice scan order (time-major, then rows, then columns),
matching the flat site indices used by mask schedules.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .maskgen import LatticeShape, MaskSchedule
from . import tensorcore as tc

_HEADER_DTYPE = "<i4"
_PIXEL_DTYPE = "<f4"

NORM_EPS = 1e-6


@dataclass
class TokenBatch:
    """Packed token features plus the map back to lattice sites.

    features: Tensor [n, d]; lattice_index: flat site index per row, unique
    and ascending for schedule-derived batches.
    """

    features: tc.Tensor
    lattice_index: np.ndarray
    shape: LatticeShape

    @property
    def n_tokens(self) -> int:
        return self.features.shape[0]


@dataclass
class PatchTarget:
    """Reconstruction targets: one row per masked site, plus the per-patch
    mean/std used when the rows are normalized (for de-normalization)."""

    rows: np.ndarray
    lattice_index: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    normalized: bool

    def denormalize(self, rows: np.ndarray | None = None) -> np.ndarray:
        out = self.rows if rows is None else rows
        if not self.normalized:
            return np.array(out, copy=True)
        return out * (self.std[:, None] + NORM_EPS) + self.mean[:, None]


def write_clip(path, clip: np.ndarray, label: int) -> None:
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 4:
        raise ValueError(f"clip must be [t, h, w, c], got {clip.shape}")
    header = np.array([*clip.shape, int(label)], dtype=_HEADER_DTYPE)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(clip, dtype=_PIXEL_DTYPE).tobytes())


def read_clip(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise ValueError(f"{path}: too short for a clip header")
    t, h, w, c, label = (int(v) for v in np.frombuffer(blob[:20], dtype=_HEADER_DTYPE))
    if min(t, h, w, c) <= 0 or label < 0:
        raise ValueError(f"{path}: bad header ({t}, {h}, {w}, {c}, {label})")
    want = t * h * w * c * 4
    if len(blob) - 20 != want:
        raise ValueError(f"{path}: payload is {len(blob) - 20} bytes, expected {want}")
    clip = np.frombuffer(blob[20:], dtype=_PIXEL_DTYPE).reshape(t, h, w, c).copy()
    return clip, label


def write_manifest(path, rows) -> None:
    """rows: iterable of (relative path, label, split)."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        for rel, label, split in rows:
            wr.writerow([rel, int(label), split])


def load_manifest(path) -> list[tuple[str, int, str]]:
    """Returns (absolute clip path, label, split) per row."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, newline="") as f:
        for ln, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{ln}: expected path,label,split")
            rel, label, split = row
            out.append((os.path.join(base, rel), int(label), split))
    return out


# ---------------------------------------------------------------------------
# patch extraction


def lattice_for(clip_shape, patch) -> LatticeShape:
    t, h, w, _ = clip_shape
    pt, ph, pw = patch
    if t % pt or h % ph or w % pw:
        raise ValueError(f"patch {patch} does not tile clip {clip_shape}")
    return LatticeShape(t // pt, h // ph, w // pw)


def patch_dim(patch, channels: int) -> int:
    pt, ph, pw = patch
    return pt * ph * pw * channels


def patchify(clip: np.ndarray, patch) -> np.ndarray:
    """Clip [T, H, W, C] -> patch rows [sites, pt*ph*pw*C] in scan order."""
    T, H, W, C = clip.shape
    pt, ph, pw = patch
    lat = lattice_for(clip.shape, patch)
    v = clip.reshape(lat.t, pt, lat.h, ph, lat.w, pw, C)
    v = v.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(v.reshape(lat.sites, pt * ph * pw * C))


def unpatchify(rows: np.ndarray, lattice: LatticeShape, patch, channels: int) -> np.ndarray:
    pt, ph, pw = patch
    if rows.shape != (lattice.sites, pt * ph * pw * channels):
        raise ValueError(f"rows {rows.shape} do not match lattice {lattice} / patch {patch}")
    v = rows.reshape(lattice.t, lattice.h, lattice.w, pt, ph, pw, channels)
    v = v.transpose(0, 3, 1, 4, 2, 5, 6)
    return v.reshape(lattice.t * pt, lattice.h * ph, lattice.w * pw, channels)


# ---------------------------------------------------------------------------
# positional encodings


def positional_encoding(lattice: LatticeShape, dim: int) -> np.ndarray:
    """Fixed sin/cos table [sites, dim], factorized over the three lattice
    axes.  Each axis gets an even-sized chunk (dim//6 sin/cos pairs); any
    remaining columns are zero.  Rows are unique for desk-scale lattices."""
    if dim < 6:
        raise ValueError(f"positional dim must be >= 6, got {dim}")
    chunk = 2 * (dim // 6)
    parts = []
    for axis_len in (lattice.t, lattice.h, lattice.w):
        pos = np.arange(axis_len, dtype=np.float64)
        i = np.arange(chunk // 2, dtype=np.float64)
        freq = 1.0 / np.power(10000.0, 2.0 * i / chunk)
        ang = pos[:, None] * freq[None, :]
        enc = np.empty((axis_len, chunk), dtype=np.float64)
        enc[:, 0::2] = np.sin(ang)
        enc[:, 1::2] = np.cos(ang)
        parts.append(enc)
    et, eh, ew = parts
    t, h, w = lattice.t, lattice.h, lattice.w
    table = np.zeros((t, h, w, dim), dtype=np.float64)
    table[..., 0:chunk] = et[:, None, None, :]
    table[..., chunk : 2 * chunk] = eh[None, :, None, :]
    table[..., 2 * chunk : 3 * chunk] = ew[None, None, :, :]
    return table.reshape(lattice.sites, dim)


def embed_visible(tape, patches: np.ndarray, schedule: MaskSchedule, weight, bias, pos: np.ndarray) -> TokenBatch:
    """Linear-embed the visible patch rows and add their positional rows.

    patches: [sites, P] constant rows from patchify.  Only the visible sites
    are embedded; the token batch remembers which sites those are.
    """
    if patches.shape[0] != schedule.masked.size:
        raise ValueError(f"{patches.shape[0]} patch rows for a {schedule.shape} lattice")
    vis = schedule.visible_indices()
    x = tc.Tensor(np.ascontiguousarray(patches[vis]), dtype=weight.dtype)
    h = tc.add_rowvec(tape, tc.matmul(tape, x, weight), bias)
    h = tc.add_const(tape, h, pos[vis])
    return TokenBatch(features=h, lattice_index=vis, shape=schedule.shape)


def build_targets(patches: np.ndarray, schedule: MaskSchedule, normalize: bool = True) -> PatchTarget:
    """Reconstruction target rows for the masked sites, in masked_indices
    order.  With normalize, each patch row is centered by its own mean and
    scaled by its own std (eps-guarded), so a constant patch targets zeros."""
    midx = schedule.masked_indices()
    rows = np.asarray(patches[midx], dtype=np.float64)
    mean = rows.mean(axis=1)
    std = rows.std(axis=1)
    if normalize:
        rows = (rows - mean[:, None]) / (std[:, None] + NORM_EPS)
    return PatchTarget(rows=rows, lattice_index=midx, mean=mean, std=std, normalized=normalize)
