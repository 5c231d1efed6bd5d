"""Synthetic motion data: a trajectory-matching oracle must recover the
labels, clips bounce off the frame walls, rendering is deterministic, and
shuffling frames destroys the signal."""

import numpy as np
import pytest

from markit.patchio import load_manifest, read_clip
from markit.synthdata import (
    MotionSpec,
    build_dataset,
    direction_angle,
    make_split,
    oracle_accuracy,
    oracle_predict,
    oracle_track,
    render_clip,
)


def test_direction_angles_cover_circle():
    angles = [direction_angle(k, 8) for k in range(8)]
    diffs = np.diff(angles)
    assert np.allclose(diffs, np.pi / 4)
    assert angles[0] == 0.0


def test_clip_shape_and_range():
    spec = MotionSpec()
    clip = render_clip(spec, 3, np.random.default_rng(0))
    assert clip.shape == (16, 32, 32, 1)
    assert clip.dtype == np.float32
    assert clip.min() >= 0.0 and clip.max() <= 1.0
    assert clip.max() == pytest.approx(1.0)


def test_background_is_static():
    spec = MotionSpec(noise=0.4)
    clip = render_clip(spec, 1, np.random.default_rng(1))[..., 0]
    # pixels never touched by the square keep their texture across all frames
    untouched = np.all(np.abs(clip - clip[0]) < 1e-7, axis=0)
    assert untouched.mean() > 0.2
    assert np.all(clip[0][untouched] <= 0.4 + 1e-6)


def test_oracle_perfect_on_noiseless_clips():
    spec = MotionSpec(noise=0.0)
    hits = 0
    n = 0
    for seed in range(25):
        rng = np.random.default_rng(seed)
        for label in range(8):
            clip = render_clip(spec, label, rng)
            hits += oracle_predict(clip, 8) == label
            n += 1
    assert hits / n >= 0.95


def test_oracle_strong_on_default_noise():
    spec = MotionSpec()
    clips, labels = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        for label in range(8):
            clips.append(render_clip(spec, label, rng))
            labels.append(label)
    assert oracle_accuracy(clips, labels, 8) >= 0.95


def test_two_frames_suffice_before_the_first_bounce():
    # Starts keep clearance from the walls, so the first step is always
    # straight and a leading frame pair pins the heading.
    spec = MotionSpec(noise=0.0)
    for label in (0, 2, 5):
        clip = render_clip(spec, label, np.random.default_rng(3))
        assert oracle_predict(clip[:2], 8) == label


def test_every_clip_bounces():
    """At the default speed the square always reaches a wall, so recovering
    the initial direction requires following the path through a reflection."""
    spec = MotionSpec(noise=0.0)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        for label in range(8):
            track = oracle_track(render_clip(spec, label, rng))
            steps = np.sign(np.round(np.diff(track, axis=0), 3))
            reversed_axis = (steps[:-1] * steps[1:]) < 0
            assert reversed_axis.any(), f"no reflection for seed={seed} label={label}"


def test_shuffled_frames_destroy_the_label():
    """Frame order carries the class: with frames permuted the oracle's
    track is scrambled, collapsing accuracy to near chance."""
    spec = MotionSpec(noise=0.0)
    hits = 0
    n = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        perm_rng = np.random.default_rng(1000 + seed)
        for label in range(8):
            clip = render_clip(spec, label, rng)
            shuffled = clip[perm_rng.permutation(len(clip))]
            hits += oracle_predict(shuffled, 8) == label
            n += 1
    acc = hits / n
    assert acc < 0.75  # far below the ordered-frame floor of 0.95


def test_render_deterministic_bytes():
    spec = MotionSpec()
    a = render_clip(spec, 4, np.random.default_rng(42))
    b = render_clip(spec, 4, np.random.default_rng(42))
    assert a.tobytes() == b.tobytes()


def test_speed_too_high_rejected():
    # frame 32, object 12 leaves a 20-pixel band; the start margin of two
    # steps per side needs more than 4 * speed = 20, so this cannot fit
    spec = MotionSpec(speed=5.0, object_size=12.0)
    with pytest.raises(ValueError):
        render_clip(spec, 0, np.random.default_rng(0))


def test_make_split_balances_labels(tmp_path):
    spec = MotionSpec()
    rows = make_split(spec, 64, 1, tmp_path, "train")
    labels = [label for _, label, _ in rows]
    counts = np.bincount(labels, minlength=8)
    assert np.all(counts == 8)


def test_build_dataset_layout(tmp_path):
    spec = MotionSpec()
    manifest = build_dataset(spec, 16, 8, tmp_path)
    rows = load_manifest(manifest)
    splits = {}
    for path, label, split in rows:
        splits.setdefault(split, []).append((path, label))
        clip, stored = read_clip(path)
        assert stored == label
        assert clip.shape == (16, 32, 32, 1)
    assert len(splits["train"]) == 16
    assert len(splits["val"]) == 8


def test_build_dataset_deterministic(tmp_path):
    spec = MotionSpec()
    m1 = build_dataset(spec, 8, 8, tmp_path / "a")
    m2 = build_dataset(spec, 8, 8, tmp_path / "b")
    for (p1, l1, s1), (p2, l2, s2) in zip(load_manifest(m1), load_manifest(m2)):
        assert (l1, s1) == (l2, s2)
        c1, _ = read_clip(p1)
        c2, _ = read_clip(p2)
        assert c1.tobytes() == c2.tobytes()


def test_train_and_val_clips_differ(tmp_path):
    spec = MotionSpec()
    manifest = build_dataset(spec, 8, 8, tmp_path)
    rows = load_manifest(manifest)
    train = [read_clip(p)[0] for p, _, s in rows if s == "train"]
    val = [read_clip(p)[0] for p, _, s in rows if s == "val"]
    assert not any(np.array_equal(t, v) for t in train for v in val)
