"""Harness mechanics: config round-trips, deterministic training, metrics
format, optimizer behavior, rank correlation, and ablation bookkeeping."""

import math
import os
import warnings

import numpy as np
import pytest

from markit import harness
from markit import tensorcore as tc
from markit.harness import (
    AdamW,
    MetricsRow,
    RunConfig,
    config_from_kv,
    config_hash,
    config_to_kv,
    lr_at,
    read_metrics,
    spearman,
    train,
    validate,
    write_metrics,
)
from markit.maskgen import LatticeShape, MaskSpec, generate
from markit.model import BridgeConfig, DecoderConfig, EncoderConfig, ModelConfig, init_params
from markit.patchio import positional_encoding
from markit.synthdata import MotionSpec, build_dataset

TINY_ENC = "encoder.width=16\nencoder.depth=1\nencoder.heads=2\n"
TINY_REST = "bridge.width=16\nbridge.depth=1\nbridge.heads=2\ndecoder.width=16\ndecoder.depth=1\ndecoder.heads=2\n"


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    build_dataset(MotionSpec(), 16, 16, root)
    return str(root)


def tiny_config(data_dir, out_dir, **overrides) -> RunConfig:
    text = TINY_ENC + TINY_REST
    text += f"data_dir={data_dir}\nout_dir={out_dir}\n"
    text += "steps=6\nbatch_size=4\nlog_every=2\neval_every=3\nwarmup_steps=2\n"
    for k, v in overrides.items():
        text += f"{k}={v}\n"
    return config_from_kv(text)


# ---------------------------------------------------------------------------
# config serialization


def test_config_roundtrip_default():
    cfg = RunConfig(data_dir="/d", out_dir="/o")
    assert config_from_kv(config_to_kv(cfg)) == cfg


def test_config_roundtrip_nested_overrides():
    cfg = RunConfig(
        data_dir="/d",
        out_dir="/o",
        encoder=EncoderConfig(width=48, depth=3, heads=4),
        train_mask=MaskSpec(strategy="random_standard", ratio=0.75, seed=9),
        eval_mask=MaskSpec(ratio=0.25, start_state=2),
        lam=0.0,
        steps=123,
    )
    back = config_from_kv(config_to_kv(cfg))
    assert back == cfg
    assert back.train_mask.strategy == "random_standard"
    assert back.eval_mask.start_state == 2


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        config_from_kv("data_dir=/d\nnonsense_key=1\n")


def test_config_hash_tracks_content():
    a = RunConfig(data_dir="/d", out_dir="/o")
    b = RunConfig(data_dir="/d", out_dir="/o", lam=0.2)
    assert config_hash(a) != config_hash(b)
    assert config_hash(a) == config_hash(RunConfig(data_dir="/d", out_dir="/o"))


# ---------------------------------------------------------------------------
# optimizer and schedule


def test_adamw_moves_toward_minimum():
    params = {"w": tc.Tensor(np.array([4.0], dtype=np.float32))}
    opt = AdamW(lr=0.1)
    for _ in range(200):
        g = 2.0 * params["w"].data  # d/dw w^2
        params = opt.step(params, {"w": g})
    assert abs(float(params["w"].data[0])) < 0.1


def test_adamw_decay_skips_bias_gain_and_mask_token():
    names = ["layer.weight", "layer.bias", "ln.gain", "dec.mask_token"]
    params = {n: tc.Tensor(np.ones(3, dtype=np.float32)) for n in names}
    grads = {n: np.zeros(3, dtype=np.float32) for n in names}
    opt = AdamW(lr=0.5, weight_decay=0.1)
    out = opt.step(params, grads)
    assert np.all(out["layer.weight"].data < 1.0)
    for n in names[1:]:
        assert np.array_equal(out[n].data, params[n].data)


def test_adamw_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        params = {f"p{i}": tc.Tensor(rng.standard_normal(4).astype(np.float32)) for i in range(3)}
        opt = AdamW(lr=0.01, weight_decay=0.05)
        for step in range(10):
            grads = {n: rng.standard_normal(4).astype(np.float32) for n in params}
            params = opt.step(params, grads)
        return {n: p.data.copy() for n, p in params.items()}

    a, b = run(), run()
    for n in a:
        assert np.array_equal(a[n], b[n])


def test_lr_schedule_warmup_then_cosine():
    base, warmup, total = 1e-3, 10, 110
    assert lr_at(0, base, warmup, total) == pytest.approx(base / 10)
    assert lr_at(9, base, warmup, total) == pytest.approx(base)
    assert lr_at(warmup, base, warmup, total) == pytest.approx(base)
    mid = warmup + (total - warmup) // 2
    assert lr_at(mid, base, warmup, total) == pytest.approx(base / 2)
    assert lr_at(total - 1, base, warmup, total) < 0.01 * base
    values = [lr_at(s, base, warmup, total) for s in range(warmup, total)]
    assert all(a >= b for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# metrics files


def test_metrics_roundtrip(tmp_path):
    rows = [
        MetricsRow(0, "train", 2.2, 1.0, 2.1, 0.125, 256, 0.5),
        MetricsRow(5, "val", 2.0, 0.9, 1.9, 0.25, 256, 1.5),
    ]
    path = tmp_path / "metrics.csv"
    write_metrics(path, rows)
    assert read_metrics(path) == rows
    header = path.read_text().splitlines()[0]
    assert header.split(",")[-1] == "seconds"  # wall clock stays in the last column


# ---------------------------------------------------------------------------
# training runs


def test_train_writes_run_artifacts(dataset, tmp_path):
    cfg = tiny_config(dataset, str(tmp_path / "run"))
    params, rows, run_dir = train(cfg)
    assert os.path.exists(os.path.join(run_dir, "metrics.csv"))
    assert os.path.exists(os.path.join(run_dir, "checkpoint.bin"))
    with open(os.path.join(run_dir, "config.txt")) as f:
        assert config_from_kv(f.read()) == cfg
    assert any(r.split == "val" for r in rows)
    assert read_metrics(os.path.join(run_dir, "metrics.csv")) == rows


def test_same_seed_runs_identical_except_seconds(dataset, tmp_path):
    cfg_a = tiny_config(dataset, str(tmp_path / "a"))
    cfg_b = tiny_config(dataset, str(tmp_path / "b"))
    _, rows_a, dir_a = train(cfg_a)
    _, rows_b, dir_b = train(cfg_b)
    assert len(rows_a) == len(rows_b)
    for ra, rb in zip(rows_a, rows_b):
        assert (ra.step, ra.split, ra.L, ra.L_r, ra.L_c, ra.top1, ra.n_visible) == (
            rb.step,
            rb.split,
            rb.L,
            rb.L_r,
            rb.L_c,
            rb.top1,
            rb.n_visible,
        )
    with open(os.path.join(dir_a, "checkpoint.bin"), "rb") as f:
        bytes_a = f.read()
    with open(os.path.join(dir_b, "checkpoint.bin"), "rb") as f:
        bytes_b = f.read()
    assert bytes_a == bytes_b


def test_different_seed_changes_training(dataset, tmp_path):
    _, rows_a, _ = train(tiny_config(dataset, str(tmp_path / "a")))
    _, rows_b, _ = train(tiny_config(dataset, str(tmp_path / "b"), seed=1))
    final_a = [r for r in rows_a if r.split == "train"][-1]
    final_b = [r for r in rows_b if r.split == "train"][-1]
    assert final_a.L != final_b.L


def test_evaluate_roundtrips_checkpoint(dataset, tmp_path):
    cfg = tiny_config(dataset, str(tmp_path / "run"))
    _, rows, run_dir = train(cfg)
    res = harness.evaluate(run_dir)
    final_val = [r for r in rows if r.split == "val"][-1]
    assert res["top1"] == pytest.approx(final_val.top1)
    assert res["n_visible"] == final_val.n_visible
    assert len(res["per_class"]) == 8


def test_random_model_sits_at_chance(dataset, tmp_path):
    cfg = tiny_config(dataset, str(tmp_path / "run"), steps=1)
    splits = harness.load_splits(os.path.join(dataset, "manifest.csv"), cfg.patch)
    va = splits["val"]
    mcfg = ModelConfig(cfg.encoder, cfg.bridge, cfg.decoder, va.patches.shape[-1], True)
    params = init_params(mcfg, seed=3)
    pe = positional_encoding(va.lattice, cfg.encoder.width)
    pd = positional_encoding(va.lattice, cfg.decoder.width)
    res = validate(params, mcfg, cfg.eval_mask, va, pe, pd, 0.1, with_reconstruction=False)
    # 16 val clips at 8 classes: needs to stay within a generous binomial band
    assert res["top1"] <= 0.5


def test_eval_standard_masks_vary_per_clip_deterministically():
    spec = MaskSpec(strategy="random_standard", ratio=0.5, seed=7, start_state=None)
    lattice = LatticeShape(4, 4, 4)
    a = harness._eval_schedules(spec, lattice, [0, 1, 2])
    b = harness._eval_schedules(spec, lattice, [0, 1, 2])
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.masked, sb.masked)
    assert not np.array_equal(a[0].masked, a[1].masked)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_nonfinite_loss_aborts_with_diagnostic(dataset, tmp_path):
    cfg = tiny_config(dataset, str(tmp_path / "run"), lr=1e6, steps=40, warmup_steps=0)
    with pytest.raises((RuntimeError, FloatingPointError)):
        train(cfg)


# ---------------------------------------------------------------------------
# rank correlation


def test_spearman_monotone_is_one():
    x = np.array([1.0, 2.0, 5.0, 9.0])
    assert spearman(x, x**3) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)


def test_spearman_matches_scipy_with_ties():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.integers(0, 5, size=12).astype(float)  # heavy ties
        y = rng.standard_normal(12)
        want = stats.spearmanr(x, y).statistic
        got = spearman(x, y)
        assert got == pytest.approx(want, abs=1e-12)


def test_spearman_degenerate_input():
    assert spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) == 0.0


# ---------------------------------------------------------------------------
# mask reports and ablation grids


def test_report_masks_writes_frames_and_coverage(tmp_path):
    spec = MaskSpec(ratio=0.5, start_state=0)
    out = tmp_path / "masks"
    harness.report_masks(spec, LatticeShape(4, 4, 4), str(out))
    frames = sorted(p.name for p in out.glob("frame_*.pbm"))
    assert len(frames) == 4
    text = (out / "frame_000.pbm").read_text().split()
    assert text[0] == "P1"
    sched = generate(spec, LatticeShape(4, 4, 4))
    bits = np.array(text[3:], dtype=int).reshape(4, 4)
    assert np.array_equal(bits.astype(bool), sched.masked[0])
    cov = (out / "coverage.csv").read_text().splitlines()
    assert cov[0] == "row,col,min_visible,max_visible"
    assert len(cov) == 1 + 16
    assert MaskSpec.from_kv((out / "maskspec.txt").read_text()) == spec


def test_ablate_collects_cells_and_errors(dataset, tmp_path):
    base = tiny_config(dataset, "", steps=2, eval_every=2)
    path = harness.ablate(base, "lambda", [0], str(tmp_path / "grid"), lams=[0.0, 0.1])
    rows = harness.read_ablation(path)
    assert len(rows) == 2
    for row in rows:
        assert row["error"] == ""
        assert row["config_hash"]
        assert float(row["top1"]) >= 0.0
    # a failing cell is recorded, not raised
    bad = tiny_config(dataset + "/missing", "", steps=2)
    path = harness.ablate(bad, "lambda", [0], str(tmp_path / "grid2"), lams=[0.1])
    rows = harness.read_ablation(path)
    assert len(rows) == 1
    assert rows[0]["error"] != ""


def test_lambda_reconstruction_not_worse_on_average(dataset, tmp_path):
    """Adding the reconstruction term at its default weight should not hurt
    classification on average.  The effect is statistical at this scale, so an
    inversion inside the seed-noise band is reported as a warning, and only an
    inversion clearly beyond noise fails."""
    means = {}
    for lam in (0.0, 0.1):
        tops = []
        for seed in range(5):
            cfg = tiny_config(
                dataset, str(tmp_path / f"lam{lam}_s{seed}"),
                steps=300, eval_every=300, log_every=100, lam=lam, seed=seed,
            )
            _, rows, _ = train(cfg)
            tops.append([r for r in rows if r.split == "val"][-1].top1)
        means[lam] = (float(np.mean(tops)), float(np.std(tops)))
    (m0, s0), (m1, s1) = means[0.0], means[0.1]
    half_ci = 1.96 * math.sqrt((s0**2 + s1**2) / 5)
    if m1 < m0:
        warnings.warn(
            f"reconstruction weight 0.1 mean top1 {m1:.3f}+-{s1:.3f} below "
            f"weight 0.0 {m0:.3f}+-{s0:.3f} (CI half-width {half_ci:.3f})"
        )
    assert m1 >= m0 - half_ci - 0.05


def test_ablate_strategy_grid_smoke(dataset, tmp_path):
    base = tiny_config(dataset, "", steps=2, eval_every=2)
    path = harness.ablate(
        base, "strategy", [0], str(tmp_path / "grid"), strategies=["cell_running", "frame_standard"]
    )
    rows = harness.read_ablation(path)
    assert [r["strategy"] for r in rows] == ["cell_running", "frame_standard"]
    for row in rows:
        assert row["error"] == "", row["error"]
        assert float(row["cost_gflops"]) > 0.0
