"""Training/evaluation harness: deterministic runs, CSV metrics, ablations.

A run is fully described by a RunConfig; ``train`` writes the resolved config,
a metrics CSV, and a checkpoint into the run directory, and is bit-reproducible
given the seed (fixed batch order, fixed gradient-reduction order, fresh masks
drawn per clip per step from seeded streams).  The metrics CSV's final column
is wall-clock seconds; every other column is deterministic.

``ablate`` replays the standard grids (masking strategy, train/test ratio
cross, starting states, loss-weight sweep) into one consolidated CSV, one row
per cell, with the analytic compute cost per clip attached.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import time
from dataclasses import dataclass, fields, is_dataclass, replace

import numpy as np

from . import checkpoint as ckpt
from . import tensorcore as tc
from .flops import mar_cost
from .maskgen import MaskSpec, generate, coverage_stats, write_pbm
from .model import (
    BridgeConfig,
    DecoderConfig,
    EncoderConfig,
    ModelConfig,
    bridge_classify,
    encode,
    forward_training_batch,
    init_params,
)
from .model import _embed_batch  # shared embedding path for eval
from .patchio import lattice_for, load_manifest, patch_dim, patchify, positional_encoding, read_clip

OUT_ROOT_ENV = "MARKIT_OUT_ROOT"


def out_root() -> str:
    return os.environ.get(OUT_ROOT_ENV, ".")


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    out_dir: str = ""
    encoder: EncoderConfig = EncoderConfig()
    bridge: BridgeConfig = BridgeConfig()
    decoder: DecoderConfig = DecoderConfig()
    patch_t: int = 2
    patch_h: int = 4
    patch_w: int = 4
    train_mask: MaskSpec = MaskSpec(spatial_mode="repeated", temporal_mode="shuffled")
    eval_mask: MaskSpec = MaskSpec(spatial_mode="repeated", temporal_mode="fixed", start_state=0)
    lam: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    warmup_steps: int = 100
    steps: int = 2000
    batch_size: int = 16
    log_every: int = 50
    eval_every: int = 500
    seed: int = 0
    dtype: str = "float32"
    normalize_targets: bool = True

    @property
    def patch(self):
        return (self.patch_t, self.patch_h, self.patch_w)


@dataclass(frozen=True)
class MetricsRow:
    step: int
    split: str
    L: float
    L_r: float
    L_c: float
    top1: float
    n_visible: int
    seconds: float


METRICS_FIELDS = [f.name for f in fields(MetricsRow)]


# ---------------------------------------------------------------------------
# flat key=value config round-trip


def _flatten(obj, prefix=""):
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(v):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def config_to_kv(cfg) -> str:
    return "".join(f"{k}={v}\n" for k, v in _flatten(cfg))


def _cast_like(default, raw: str):
    if isinstance(default, bool):
        return raw == "True"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, str):
        return raw
    if default is None:
        return None if raw == "None" else int(raw)
    raise TypeError(f"cannot cast {raw!r} like {type(default)}")


def _build_config(cls, pairs: dict, prefix: str, defaults=None):
    defaults = cls() if defaults is None else defaults
    kwargs = {}
    for f in fields(cls):
        key = prefix + f.name
        dv = getattr(defaults, f.name)
        if is_dataclass(dv):
            kwargs[f.name] = _build_config(type(dv), pairs, key + ".", dv)
        elif key in pairs:
            kwargs[f.name] = _cast_like(dv, pairs.pop(key))
        else:
            kwargs[f.name] = dv
    return cls(**kwargs)


def config_from_kv(text: str, cls=RunConfig):
    pairs = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        pairs[key.strip()] = val.strip()
    cfg = _build_config(cls, pairs, "")
    if pairs:
        raise ValueError(f"unknown config keys: {sorted(pairs)}")
    return cfg


def config_hash(cfg) -> str:
    return hashlib.sha1(config_to_kv(cfg).encode()).hexdigest()[:10]


# ---------------------------------------------------------------------------
# data access


@dataclass
class SplitData:
    patches: np.ndarray  # [n, sites, P] float32
    labels: np.ndarray  # [n] int64
    lattice: object


def load_splits(manifest_path: str, patch) -> dict:
    """Patchify every clip up front; desk-scale datasets fit in memory."""
    rows = load_manifest(manifest_path)
    if not rows:
        raise ValueError(f"{manifest_path}: empty manifest")
    grouped: dict[str, list] = {}
    lattice = None
    for path, label, split in rows:
        clip, file_label = read_clip(path)
        if file_label != label:
            raise ValueError(f"{path}: manifest label {label} != stored {file_label}")
        lattice = lattice_for(clip.shape, patch)
        grouped.setdefault(split, []).append((patchify(clip, patch), label))
    out = {}
    for split, items in grouped.items():
        out[split] = SplitData(
            patches=np.stack([p for p, _ in items]).astype(np.float32),
            labels=np.array([l for _, l in items], dtype=np.int64),
            lattice=lattice,
        )
    return out


# ---------------------------------------------------------------------------
# optimizer and schedule


class AdamW:
    """Adaptive moments with decoupled weight decay; decay skips biases,
    norm gains, and the mask token.  Update order is fixed (sorted names)
    so training is deterministic."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=0.0, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    @staticmethod
    def _decays(name: str) -> bool:
        return not (name.endswith(".bias") or name.endswith(".gain") or name.endswith("mask_token"))

    def step(self, params: dict, grads: dict, lr_t: float | None = None) -> dict:
        lr_t = self.lr if lr_t is None else lr_t
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        new = {}
        for name in sorted(params):
            p = params[name].data
            g = np.asarray(grads[name], dtype=p.dtype)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p_new = p - lr_t * upd
            if self.weight_decay and self._decays(name):
                p_new = p_new - lr_t * self.weight_decay * p
            new[name] = tc.Tensor(p_new)
        return new


def lr_at(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear warmup then cosine decay to zero."""
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total - warmup, 1)
    progress = (step - warmup) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# evaluation


def _eval_schedules(spec: MaskSpec, lattice, clip_ids) -> list:
    """Deterministic per-clip eval masks: clip i draws from (spec.seed, i)."""
    return [generate(spec, lattice, rng=np.random.default_rng([spec.seed, int(i)])) for i in clip_ids]


def validate(
    params: dict,
    mcfg: ModelConfig,
    spec: MaskSpec,
    data: SplitData,
    pos_enc: np.ndarray,
    pos_dec: np.ndarray,
    lam: float,
    batch_size: int = 64,
    with_reconstruction: bool = True,
) -> dict:
    """Whole-split metrics under an eval mask spec.

    Returns top1, per_class accuracy, mean losses, and the visible-token
    count.  No tape is recorded.
    """
    n = len(data.labels)
    hits = np.zeros(mcfg.bridge.class_count, dtype=np.int64)
    counts = np.zeros(mcfg.bridge.class_count, dtype=np.int64)
    l_sum = lr_sum = lc_sum = 0.0
    n_visible = None
    for lo in range(0, n, batch_size):
        ids = np.arange(lo, min(lo + batch_size, n))
        schedules = _eval_schedules(spec, data.lattice, ids)
        n_visible = schedules[0].n_visible
        batch = data.patches[ids]
        labels = data.labels[ids]
        if with_reconstruction:
            _, logits, diag = forward_training_batch(
                None, batch, labels, schedules, params, mcfg, pos_enc, pos_dec, lam
            )
            rep = diag["report"]
            l_sum += rep.L * len(ids)
            lr_sum += rep.L_r * len(ids)
            lc_sum += rep.L_c * len(ids)
            pred = np.argmax(logits.data, axis=1)
        else:
            vis_stack = np.stack([s.visible_indices() for s in schedules])
            tokens = _embed_batch(None, batch, vis_stack, params, pos_enc)
            feats = encode(None, tokens, params, mcfg.encoder)
            logits = bridge_classify(None, feats, params, mcfg.bridge)
            pred = np.argmax(logits.data, axis=1)
            p = logits.data - logits.data.max(axis=1, keepdims=True)
            lse = np.log(np.exp(p).sum(axis=1))
            lc = float(np.mean(lse - p[np.arange(len(ids)), labels]))
            lc_sum += lc * len(ids)
            l_sum += lc * len(ids)
        for y, yhat in zip(labels, pred):
            counts[y] += 1
            hits[y] += int(y == yhat)
    per_class = np.divide(hits, counts, out=np.zeros(len(hits)), where=counts > 0)
    return {
        "top1": float(hits.sum() / max(counts.sum(), 1)),
        "per_class": per_class,
        "L": l_sum / n,
        "L_r": lr_sum / n,
        "L_c": lc_sum / n,
        "n_visible": int(n_visible),
    }


# ---------------------------------------------------------------------------
# training


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(METRICS_FIELDS)
        for r in rows:
            wr.writerow([getattr(r, name) for name in METRICS_FIELDS])


def read_metrics(path) -> list:
    out = []
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header != METRICS_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        for row in rd:
            out.append(
                MetricsRow(
                    step=int(row[0]),
                    split=row[1],
                    L=float(row[2]),
                    L_r=float(row[3]),
                    L_c=float(row[4]),
                    top1=float(row[5]),
                    n_visible=int(row[6]),
                    seconds=float(row[7]),
                )
            )
    return out


def train(cfg: RunConfig):
    """Train per the config; returns (params, metrics rows, run dir).

    Writes config.txt, metrics.csv, and checkpoint.bin into cfg.out_dir.
    Aborts with diagnostics if the loss goes non-finite.
    """
    run_dir = cfg.out_dir or os.path.join(out_root(), "run")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.txt"), "w") as f:
        f.write(config_to_kv(cfg))

    splits = load_splits(os.path.join(cfg.data_dir, "manifest.csv"), cfg.patch)
    if "train" not in splits:
        raise ValueError(f"{cfg.data_dir}: no train split in manifest")
    tr = splits["train"]
    va = splits.get("val")
    lattice = tr.lattice
    dtype = {"float32": np.float32, "float64": np.float64}[cfg.dtype]

    p_dim = tr.patches.shape[-1]
    mcfg = ModelConfig(cfg.encoder, cfg.bridge, cfg.decoder, p_dim, cfg.normalize_targets)
    params = init_params(mcfg, seed=cfg.seed, dtype=dtype)
    pos_enc = positional_encoding(lattice, cfg.encoder.width)
    pos_dec = positional_encoding(lattice, cfg.decoder.width)
    opt = AdamW(cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
    batch_rng = np.random.default_rng([cfg.seed, 17])

    n_train = len(tr.labels)
    rows = []
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        if cfg.batch_size >= n_train:
            ids = np.arange(n_train)
        else:
            ids = batch_rng.integers(0, n_train, size=cfg.batch_size)
        schedules = [
            generate(cfg.train_mask, lattice, rng=np.random.default_rng([cfg.seed, step, int(j)]))
            for j in range(len(ids))
        ]
        tape = tc.Tape()
        total, logits, diag = forward_training_batch(
            tape, tr.patches[ids], tr.labels[ids], schedules, params, mcfg, pos_enc, pos_dec, cfg.lam
        )
        rep = diag["report"]
        if not np.isfinite(rep.L):
            raise RuntimeError(f"non-finite loss at step {step}: L_r={rep.L_r} L_c={rep.L_c}")
        tape.backward(total)
        grads = {name: tape.grad(p) for name, p in params.items()}
        params = opt.step(params, grads, lr_at(step, cfg.lr, cfg.warmup_steps, cfg.steps))

        last = step == cfg.steps - 1
        if step % cfg.log_every == 0 or last:
            top1 = float(np.mean(np.argmax(logits.data, axis=1) == tr.labels[ids]))
            rows.append(
                MetricsRow(step, "train", rep.L, rep.L_r, rep.L_c, top1, diag["n_visible"], time.perf_counter() - t0)
            )
        if va is not None and ((step + 1) % cfg.eval_every == 0 or last):
            ev = validate(params, mcfg, cfg.eval_mask, va, pos_enc, pos_dec, cfg.lam)
            rows.append(
                MetricsRow(step, "val", ev["L"], ev["L_r"], ev["L_c"], ev["top1"], ev["n_visible"], time.perf_counter() - t0)
            )

    write_metrics(os.path.join(run_dir, "metrics.csv"), rows)
    ckpt.save_params(os.path.join(run_dir, "checkpoint.bin"), params)
    return params, rows, run_dir


def load_run(run_dir: str):
    """Rehydrate (config, params) from a run directory; shape-checks the
    checkpoint against the config's architecture."""
    with open(os.path.join(run_dir, "config.txt")) as f:
        cfg = config_from_kv(f.read())
    stored = ckpt.load_params(os.path.join(run_dir, "checkpoint.bin"))
    dtype = {"float32": np.float32, "float64": np.float64}[cfg.dtype]
    p_dim = stored["embed.weight"].shape[0]
    mcfg = ModelConfig(cfg.encoder, cfg.bridge, cfg.decoder, p_dim, cfg.normalize_targets)
    reference = init_params(mcfg, seed=0, dtype=dtype)
    if set(stored) != set(reference):
        raise ValueError(f"{run_dir}: checkpoint tensors do not match the config architecture")
    params = {}
    for name, ref in reference.items():
        if stored[name].shape != ref.shape:
            raise ValueError(f"{run_dir}: {name} has shape {stored[name].shape}, config wants {ref.shape}")
        params[name] = tc.Tensor(stored[name], dtype=dtype)
    return cfg, mcfg, params


def evaluate(run_dir: str, eval_mask: MaskSpec | None = None, split: str = "val", data_dir: str | None = None) -> dict:
    """Evaluate a finished run under an eval mask spec (defaults to the one
    it was configured with)."""
    cfg, mcfg, params = load_run(run_dir)
    spec = eval_mask if eval_mask is not None else cfg.eval_mask
    splits = load_splits(os.path.join(data_dir or cfg.data_dir, "manifest.csv"), cfg.patch)
    if split not in splits:
        raise ValueError(f"no split {split!r} in dataset")
    data = splits[split]
    pos_enc = positional_encoding(data.lattice, cfg.encoder.width)
    pos_dec = positional_encoding(data.lattice, cfg.decoder.width)
    return validate(params, mcfg, spec, data, pos_enc, pos_dec, cfg.lam, with_reconstruction=False)


# ---------------------------------------------------------------------------
# rank correlation (used by ablation analysis)


def _ranks(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""
    rx, ry = _ranks(x), _ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


# ---------------------------------------------------------------------------
# ablation grids


ABLATION_FIELDS = [
    "cell",
    "strategy",
    "train_ratio",
    "test_ratio",
    "start_state",
    "lam",
    "seed",
    "top1",
    "L_r",
    "L_c",
    "cost_gflops",
    "config_hash",
    "error",
]


def _cell_cost(cfg: RunConfig, lattice, ratio: float) -> float:
    report = mar_cost(
        ratio,
        lattice,
        patch_dim(cfg.patch, 1),
        cfg.encoder.width,
        cfg.encoder.depth,
        cfg.bridge.class_count,
        bridge_width=cfg.bridge.width,
        bridge_depth=cfg.bridge.depth,
        mlp_ratio=cfg.encoder.mlp_ratio,
    )
    return report.gflops


def _strategy_specs(strategy: str, ratio: float, base_train: MaskSpec, base_eval: MaskSpec, seed: int):
    """Train/eval mask specs for a strategy grid cell.  Running strategies
    keep the augmentation axes; standard strategies have none, so the eval
    spec only pins the draw seed."""
    train = replace(base_train, strategy=strategy, ratio=ratio, seed=seed)
    if strategy in ("cell_running", "uniform_running", "random_running", "block_running"):
        ev = replace(base_eval, strategy=strategy, ratio=ratio, seed=seed)
    else:
        ev = MaskSpec(strategy=strategy, ratio=ratio, seed=seed, start_state=None)
    return train, ev


def run_cell(cfg: RunConfig) -> dict:
    """Train one grid cell and evaluate with its configured eval mask."""
    params, rows, run_dir = train(cfg)
    val_rows = [r for r in rows if r.split == "val"]
    final = val_rows[-1] if val_rows else None
    return {
        "run_dir": run_dir,
        "top1": final.top1 if final else float("nan"),
        "L_r": final.L_r if final else float("nan"),
        "L_c": final.L_c if final else float("nan"),
    }


def ablate(base: RunConfig, grid: str, seeds, out_dir: str, strategies=None, ratios=None, lams=None) -> str:
    """Run a named grid; returns the consolidated CSV path.

    Grids: 'strategy' (mask strategies at the base ratio), 'ratio'
    (train x test mask-ratio cross), 'start' (starting-state probes of one
    trained model per seed), 'lambda' (loss-weight sweep).  Per-cell failures
    are recorded in the error column without aborting the grid.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []

    def record(cell, **kw):
        row = {name: "" for name in ABLATION_FIELDS}
        row["cell"] = cell
        row.update(kw)
        rows.append(row)

    def safe(cell, fn, **kw):
        try:
            fn()
        except Exception as e:  # grid cells must not kill the grid
            record(cell, error=f"{type(e).__name__}: {e}", **kw)

    lattice = None

    def cell_config(name: str, seed: int, **overrides) -> RunConfig:
        return replace(base, out_dir=os.path.join(out_dir, f"{name}_s{seed}"), seed=seed, **overrides)

    if grid == "strategy":
        strategies = strategies or [
            "cell_running",
            "uniform_running",
            "random_running",
            "block_running",
            "random_standard",
            "block_standard",
            "tube_standard",
            "frame_standard",
        ]
        for strategy in strategies:
            for seed in seeds:
                def go(strategy=strategy, seed=seed):
                    tr_spec, ev_spec = _strategy_specs(
                        strategy, base.train_mask.ratio, base.train_mask, base.eval_mask, seed
                    )
                    cfg = cell_config(strategy, seed, train_mask=tr_spec, eval_mask=ev_spec)
                    res = run_cell(cfg)
                    nonlocal lattice
                    lattice = lattice or load_splits(os.path.join(cfg.data_dir, "manifest.csv"), cfg.patch)["val"].lattice
                    record(
                        f"strategy/{strategy}",
                        strategy=strategy,
                        train_ratio=tr_spec.ratio,
                        test_ratio=ev_spec.ratio,
                        lam=cfg.lam,
                        seed=seed,
                        top1=res["top1"],
                        L_r=res["L_r"],
                        L_c=res["L_c"],
                        cost_gflops=_cell_cost(cfg, lattice, ev_spec.ratio),
                        config_hash=config_hash(cfg),
                    )
                safe(f"strategy/{strategy}", go, strategy=strategy, seed=seed)

    elif grid == "ratio":
        ratios = ratios or [0.25, 0.5, 0.75]
        test_ratios = [0.0] + list(ratios)
        for train_ratio in ratios:
            for seed in seeds:
                def go(train_ratio=train_ratio, seed=seed):
                    tr_spec = replace(base.train_mask, ratio=train_ratio, seed=seed)
                    cfg = cell_config(f"ratio{int(train_ratio * 100)}", seed, train_mask=tr_spec)
                    params, _, run_dir = train(cfg)
                    nonlocal lattice
                    splits = load_splits(os.path.join(cfg.data_dir, "manifest.csv"), cfg.patch)
                    va = splits["val"]
                    lattice = va.lattice
                    p_dim = va.patches.shape[-1]
                    mcfg = ModelConfig(cfg.encoder, cfg.bridge, cfg.decoder, p_dim, cfg.normalize_targets)
                    pe = positional_encoding(lattice, cfg.encoder.width)
                    pd = positional_encoding(lattice, cfg.decoder.width)
                    for test_ratio in test_ratios:
                        ev_spec = replace(base.eval_mask, ratio=test_ratio)
                        ev = validate(params, mcfg, ev_spec, va, pe, pd, cfg.lam, with_reconstruction=False)
                        record(
                            "ratio/cross",
                            strategy=tr_spec.strategy,
                            train_ratio=train_ratio,
                            test_ratio=test_ratio,
                            lam=cfg.lam,
                            seed=seed,
                            top1=ev["top1"],
                            L_c=ev["L_c"],
                            cost_gflops=_cell_cost(cfg, lattice, test_ratio),
                            config_hash=config_hash(cfg),
                        )
                safe("ratio/cross", go, train_ratio=train_ratio, seed=seed)

    elif grid == "start":
        period = base.eval_mask.r * base.eval_mask.q
        for seed in seeds:
            def go(seed=seed):
                cfg = cell_config("start", seed)
                params, _, run_dir = train(cfg)
                splits = load_splits(os.path.join(cfg.data_dir, "manifest.csv"), cfg.patch)
                va = splits["val"]
                p_dim = va.patches.shape[-1]
                mcfg = ModelConfig(cfg.encoder, cfg.bridge, cfg.decoder, p_dim, cfg.normalize_targets)
                pe = positional_encoding(va.lattice, cfg.encoder.width)
                pd = positional_encoding(va.lattice, cfg.decoder.width)
                for state in range(period):
                    ev_spec = replace(cfg.eval_mask, start_state=state)
                    ev = validate(params, mcfg, ev_spec, va, pe, pd, cfg.lam, with_reconstruction=False)
                    record(
                        "start/probe",
                        strategy=ev_spec.strategy,
                        train_ratio=cfg.train_mask.ratio,
                        test_ratio=ev_spec.ratio,
                        start_state=state,
                        lam=cfg.lam,
                        seed=seed,
                        top1=ev["top1"],
                        L_c=ev["L_c"],
                        cost_gflops=_cell_cost(cfg, va.lattice, ev_spec.ratio),
                        config_hash=config_hash(cfg),
                    )
            safe("start/probe", go, seed=seed)

    elif grid == "lambda":
        lams = lams if lams is not None else [0.0, 0.1]
        for lam in lams:
            for seed in seeds:
                def go(lam=lam, seed=seed):
                    cfg = cell_config(f"lam{lam}", seed, lam=lam)
                    res = run_cell(cfg)
                    record(
                        "lambda/sweep",
                        strategy=cfg.train_mask.strategy,
                        train_ratio=cfg.train_mask.ratio,
                        test_ratio=cfg.eval_mask.ratio,
                        lam=lam,
                        seed=seed,
                        top1=res["top1"],
                        L_r=res["L_r"],
                        L_c=res["L_c"],
                        config_hash=config_hash(cfg),
                    )
                safe("lambda/sweep", go, lam=lam, seed=seed)

    else:
        raise ValueError(f"unknown grid {grid!r}")

    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=ABLATION_FIELDS)
        wr.writeheader()
        wr.writerows(rows)
    return path


def read_ablation(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# mask reports


def report_masks(spec: MaskSpec, shape, out_dir: str, window: int = 4) -> None:
    """Dump one PBM per frame plus a per-site coverage CSV and the spec."""
    os.makedirs(out_dir, exist_ok=True)
    sched = generate(spec, shape)
    for t in range(shape.t):
        write_pbm(os.path.join(out_dir, f"frame_{t:03d}.pbm"), sched.masked[t])
    with open(os.path.join(out_dir, "maskspec.txt"), "w") as f:
        f.write(spec.to_kv())
    lo, hi = coverage_stats(sched, min(window, shape.t))
    with open(os.path.join(out_dir, "coverage.csv"), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["row", "col", "min_visible", "max_visible"])
        for y in range(shape.h):
            for x in range(shape.w):
                wr.writerow([y, x, int(lo[y, x]), int(hi[y, x])])
