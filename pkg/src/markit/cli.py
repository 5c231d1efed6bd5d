"""Command-line harness.

Subcommands: gen-data, train, eval, ablate, flops, masks, bench.  Relative
output paths resolve under MARKIT_OUT_ROOT (default: current directory).
Training/ablation configs are flat key=value files; any key can be overridden
on the command line with --set key=value.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import flops, harness, kernels
from .maskgen import LatticeShape, MaskSpec
from .synthdata import MotionSpec, build_dataset


def _resolve_out(path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(harness.out_root(), path)


def _load_config(args) -> harness.RunConfig:
    text = ""
    if args.config:
        with open(args.config) as f:
            text = f.read()
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        text += item + "\n"
    cfg = harness.config_from_kv(text)
    if args.data:
        cfg = replace(cfg, data_dir=args.data)
    if args.out:
        cfg = replace(cfg, out_dir=_resolve_out(args.out))
    if not cfg.data_dir:
        raise SystemExit("no data directory (use --data or set data_dir)")
    if not cfg.out_dir:
        raise SystemExit("no output directory (use --out or set out_dir)")
    return cfg


def _mask_spec_from(args) -> MaskSpec:
    spec = MaskSpec()
    overrides = {}
    for name in ("strategy", "ratio", "r", "q", "spatial_mode", "temporal_mode"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "mask_seed", None) is not None:
        overrides["seed"] = args.mask_seed
    if getattr(args, "start_state", None) is not None:
        overrides["start_state"] = None if args.start_state == "None" else int(args.start_state)
    return replace(spec, **overrides)


def _add_mask_flags(p):
    p.add_argument("--strategy", help="masking strategy token")
    p.add_argument("--ratio", type=float, help="masking ratio in [0, 1)")
    p.add_argument("--r", type=int, help="cell rows")
    p.add_argument("--q", type=int, help="cell cols")
    p.add_argument("--spatial-mode", dest="spatial_mode", choices=["repeated", "random"])
    p.add_argument("--temporal-mode", dest="temporal_mode", choices=["fixed", "shuffled"])
    p.add_argument("--mask-seed", type=int)
    p.add_argument("--start-state", help="starting state index, or None")


def cmd_gen_data(args) -> int:
    spec = MotionSpec(
        class_count=args.classes,
        frames=args.frames,
        height=args.height,
        width=args.width,
        object_size=args.size,
        speed=args.speed,
        noise=args.noise,
        seed=args.seed,
    )
    out = _resolve_out(args.out)
    manifest = build_dataset(spec, args.train, args.val, out)
    print(f"wrote {args.train}+{args.val} clips under {out}")
    print(f"manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    _, rows, run_dir = harness.train(cfg)
    dt = time.perf_counter() - t0
    val = [r for r in rows if r.split == "val"]
    if val:
        print(f"final val top1={val[-1].top1:.4f} L_r={val[-1].L_r:.4f} L_c={val[-1].L_c:.4f}")
    print(f"trained {cfg.steps} steps in {dt:.1f}s -> {run_dir}")
    return 0


def cmd_eval(args) -> int:
    spec = _mask_spec_from(args) if args.override_mask else None
    res = harness.evaluate(args.run, eval_mask=spec, split=args.split)
    print(f"top1={res['top1']:.4f}  L_c={res['L_c']:.4f}  n_visible={res['n_visible']}")
    for i, acc in enumerate(res["per_class"]):
        print(f"class {i}: {acc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    path = harness.ablate(cfg, args.grid, seeds, cfg.out_dir)
    rows = harness.read_ablation(path)
    errors = [r for r in rows if r["error"]]
    print(f"{len(rows)} cells -> {path}")
    for r in errors:
        print(f"FAILED {r['cell']} seed={r['seed']}: {r['error']}", file=sys.stderr)
    return 0


def cmd_flops(args) -> int:
    ratios = [float(s) for s in args.ratios.split(",")]
    print("ratio,n_visible,embed,encoder,classifier,decoder,total,gflops")
    for ratio in ratios:
        rep = flops.full_scale_cost(ratio, linear=args.linear)
        print(
            f"{ratio},{rep.n_visible},{rep.embed},{rep.encoder},"
            f"{rep.classifier},{rep.decoder},{rep.total},{rep.gflops:.2f}"
        )
    return 0


def cmd_masks(args) -> int:
    spec = _mask_spec_from(args)
    t, h, w = (int(s) for s in args.shape.split(","))
    out = _resolve_out(args.out)
    harness.report_masks(spec, LatticeShape(t, h, w), out, window=args.window)
    print(f"wrote {t} frames + coverage.csv under {out}")
    return 0


def _bench_cases(rng):
    x = rng.standard_normal((4096, 256)).astype(np.float32)
    g = rng.standard_normal((4096, 256)).astype(np.float32)
    gain = np.ones(256, dtype=np.float32)
    bias = np.zeros(256, dtype=np.float32)
    att = rng.standard_normal((4096, 512)).astype(np.float32)
    gatt = rng.standard_normal((4096, 512)).astype(np.float32)
    idx = rng.integers(0, 512, size=4096).astype(np.int64)
    frame = np.zeros((64, 64), dtype=np.float64)
    return [
        ("gelu_fwd", (x,)),
        ("gelu_bwd", (x, g)),
        ("softmax_fwd", (att,)),
        ("softmax_bwd", (att, gatt)),
        ("layernorm_fwd", (x, gain, bias, 1e-5)),
        ("scatter_add_rows", (512, idx, x)),
        ("paint_square", (frame, 31.3, 17.8, 3.0, 1.0)),
    ]


def cmd_bench(args) -> int:
    backends = kernels.all_backends()
    rng = np.random.default_rng(0)
    cases = _bench_cases(rng)
    print(f"active backend: {kernels.backend_name()}")
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in backends))
    for name, call_args in cases:
        times = []
        for impls in backends.values():
            fn = impls[name]
            fn(*call_args)  # warm up (numba compiles here)
            reps = args.reps
            t0 = time.perf_counter()
            for _ in range(reps):
                fn(*call_args)
            times.append((time.perf_counter() - t0) / reps)
        print(f"{name:<18}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times))
    if "numba" in backends and "numpy" in backends:
        print("times are per call; lower is better")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic motion dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, default=512)
    g.add_argument("--val", type=int, default=128)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--size", type=float, default=8.0)
    g.add_argument("--speed", type=float, default=3.0)
    g.add_argument("--noise", type=float, default=0.15)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a run from a config")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--data", help="dataset directory (with manifest.csv)")
    t.add_argument("--out", help="run output directory")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a finished run")
    e.add_argument("--run", required=True, help="run directory")
    e.add_argument("--split", default="val")
    e.add_argument("--override-mask", action="store_true", help="use the mask flags instead of the run's eval mask")
    _add_mask_flags(e)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--grid", required=True, choices=["strategy", "ratio", "start", "lambda"])
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--config", help="base key=value config file")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.add_argument("--data")
    a.add_argument("--out")
    a.set_defaults(fn=cmd_ablate)

    f = sub.add_parser("flops", help="analytic per-clip cost at the reference scale")
    f.add_argument("--ratios", default="0,0.25,0.5,0.75")
    f.add_argument("--linear", action="store_true", help="linear classifier head instead of the bridge")
    f.set_defaults(fn=cmd_flops)

    m = sub.add_parser("masks", help="dump a mask schedule as PBM frames + coverage stats")
    m.add_argument("--out", required=True)
    m.add_argument("--shape", default="8,14,14", help="t,h,w token lattice")
    m.add_argument("--window", type=int, default=4)
    _add_mask_flags(m)
    m.set_defaults(fn=cmd_masks)

    b = sub.add_parser("bench", help="compare kernel backends")
    b.add_argument("--reps", type=int, default=20)
    b.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
