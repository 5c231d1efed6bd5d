"""A miniature spatio-temporal transformer for masked-token recognition.

Three pieces share one parameter dict:

  encoder   prenorm residual blocks over the *visible* tokens only (the
            attention matrix is n_vis x n_vis); depth 0 is the identity.
  bridge    classification path: linear projection to the bridge width,
            blocks over the visible tokens (no positional encodings and no
            mask tokens), mean pool, linear head to class logits.
  decoder   reconstruction path: projection to the decoder width, a learned
            mask-token row inserted at every masked site, positional
            encodings added for all lattice sites, blocks over the full
            lattice, then a pixel head read out at the masked sites only.

All ops accept an optional batch axis: token tensors are [n, d] or [b, n, d].
Every function takes the tape first; pass tape=None for inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import loss as losses
from . import tensorcore as tc
from .maskgen import MaskSchedule, MaskSpec, generate
from .patchio import TokenBatch, build_targets, lattice_for, patchify, positional_encoding

LN_EPS = 1e-5
INIT_STD = 0.02


def _check_dims(width, depth, heads):
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if width < 1 or heads < 1 or width % heads:
        raise ValueError(f"width {width} must be a positive multiple of heads {heads}")


@dataclass(frozen=True)
class EncoderConfig:
    width: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        _check_dims(self.width, self.depth, self.heads)


@dataclass(frozen=True)
class BridgeConfig:
    width: int = 32
    depth: int = 2
    heads: int = 2
    class_count: int = 8
    mlp_ratio: int = 4

    def __post_init__(self):
        _check_dims(self.width, self.depth, self.heads)
        if self.class_count < 2:
            raise ValueError(f"need >= 2 classes, got {self.class_count}")


@dataclass(frozen=True)
class DecoderConfig:
    width: int = 32
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 4

    def __post_init__(self):
        _check_dims(self.width, self.depth, self.heads)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    bridge: BridgeConfig
    decoder: DecoderConfig
    patch_dim: int
    normalize_targets: bool = True


# ---------------------------------------------------------------------------
# parameters


def _linear_params(out, rng, dtype, name, d_in, d_out):
    out[f"{name}.weight"] = tc.Tensor(rng.normal(0.0, INIT_STD, (d_in, d_out)), dtype=dtype)
    out[f"{name}.bias"] = tc.Tensor(np.zeros(d_out), dtype=dtype)


def _block_params(out, rng, dtype, prefix, width, mlp_ratio):
    for ln in ("ln1", "ln2"):
        out[f"{prefix}.{ln}.gain"] = tc.Tensor(np.ones(width), dtype=dtype)
        out[f"{prefix}.{ln}.bias"] = tc.Tensor(np.zeros(width), dtype=dtype)
    for proj in ("wq", "wk", "wv", "wo"):
        _linear_params(out, rng, dtype, f"{prefix}.{proj}", width, width)
    _linear_params(out, rng, dtype, f"{prefix}.mlp1", width, mlp_ratio * width)
    _linear_params(out, rng, dtype, f"{prefix}.mlp2", mlp_ratio * width, width)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Fresh parameter dict: normal(0, 0.02) weights, zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    enc, bridge, dec = cfg.encoder, cfg.bridge, cfg.decoder
    out = {}
    _linear_params(out, rng, dtype, "embed", cfg.patch_dim, enc.width)
    for i in range(enc.depth):
        _block_params(out, rng, dtype, f"enc.{i}", enc.width, enc.mlp_ratio)
    _linear_params(out, rng, dtype, "bridge.proj", enc.width, bridge.width)
    for i in range(bridge.depth):
        _block_params(out, rng, dtype, f"bridge.{i}", bridge.width, bridge.mlp_ratio)
    _linear_params(out, rng, dtype, "bridge.head", bridge.width, bridge.class_count)
    _linear_params(out, rng, dtype, "dec.proj", enc.width, dec.width)
    out["dec.mask_token"] = tc.Tensor(rng.normal(0.0, INIT_STD, dec.width), dtype=dtype)
    for i in range(dec.depth):
        _block_params(out, rng, dtype, f"dec.{i}", dec.width, dec.mlp_ratio)
    _linear_params(out, rng, dtype, "dec.head", dec.width, cfg.patch_dim)
    return out


# ---------------------------------------------------------------------------
# blocks


def _proj(tape, x, params, name):
    return tc.add_rowvec(tape, tc.matmul(tape, x, params[f"{name}.weight"]), params[f"{name}.bias"])


def _attention(tape, x, params, prefix, heads):
    b, n, d = x.shape
    dh = d // heads

    def split(t):
        t = tc.reshape(tape, t, (b, n, heads, dh))
        return tc.transpose(tape, t, (0, 2, 1, 3))

    q = split(_proj(tape, x, params, f"{prefix}.wq"))
    k = split(_proj(tape, x, params, f"{prefix}.wk"))
    v = split(_proj(tape, x, params, f"{prefix}.wv"))
    scores = tc.scale(tape, tc.matmul(tape, q, tc.swap_rows_cols(tape, k)), 1.0 / math.sqrt(dh))
    weights = tc.softmax_rows(tape, scores)
    ctx = tc.matmul(tape, weights, v)
    ctx = tc.reshape(tape, tc.transpose(tape, ctx, (0, 2, 1, 3)), (b, n, d))
    return _proj(tape, ctx, params, f"{prefix}.wo")


def _block(tape, x, params, prefix, heads):
    h = tc.layernorm(tape, x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"], LN_EPS)
    x = tc.add(tape, x, _attention(tape, h, params, prefix, heads))
    h = tc.layernorm(tape, x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"], LN_EPS)
    m = _proj(tape, tc.gelu(tape, _proj(tape, h, params, f"{prefix}.mlp1")), params, f"{prefix}.mlp2")
    return tc.add(tape, x, m)


def _run_blocks(tape, x, params, family, depth, heads):
    for i in range(depth):
        x = _block(tape, x, params, f"{family}.{i}", heads)
    return x


def _batched(tape, x):
    """Normalize token input (Tensor or TokenBatch) to [b, n, d]; report
    whether it needs squeezing back."""
    if isinstance(x, TokenBatch):
        x = x.features
    if x.ndim == 2:
        return tc.reshape(tape, x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise tc.ShapeError(f"token tensor must be [n, d] or [b, n, d], got {x.shape}")


# ---------------------------------------------------------------------------
# the three network pieces


def encode(tape, tokens, params: dict, cfg: EncoderConfig):
    """Run the encoder blocks over visible tokens.  Accepts a TokenBatch
    (returned re-wrapped with the same site map) or a raw [.., n, d] Tensor."""
    x, squeeze = _batched(tape, tokens)
    x = _run_blocks(tape, x, params, "enc", cfg.depth, cfg.heads)
    if squeeze:
        x = tc.reshape(tape, x, x.shape[1:])
    if isinstance(tokens, TokenBatch):
        return TokenBatch(features=x, lattice_index=tokens.lattice_index, shape=tokens.shape)
    return x


def bridge_classify(tape, feats, params: dict, cfg: BridgeConfig) -> tc.Tensor:
    """Visible-token features -> logits [.., class_count].  The bridge path
    sees visible tokens only: no positional encodings, no mask tokens."""
    x, squeeze = _batched(tape, feats)
    x = _proj(tape, x, params, "bridge.proj")
    x = _run_blocks(tape, x, params, "bridge", cfg.depth, cfg.heads)
    pooled = tc.mean_rows(tape, x)
    logits = _proj(tape, pooled, params, "bridge.head")
    if squeeze:
        logits = tc.reshape(tape, logits, (logits.shape[-1],))
    return logits


def _assembly_indices(schedules, n_vis):
    """Row index per lattice site into [visible rows.., mask-token row]."""
    idx = np.empty((len(schedules), schedules[0].masked.size), dtype=np.int64)
    for b, sched in enumerate(schedules):
        rows = np.full(sched.masked.size, n_vis, dtype=np.int64)
        rows[sched.visible_indices()] = np.arange(n_vis, dtype=np.int64)
        idx[b] = rows
    return idx


def reconstruct(
    tape,
    feats,
    schedules,
    params: dict,
    cfg: DecoderConfig,
    pos_table: np.ndarray,
) -> tc.Tensor:
    """Predict pixels at masked sites: [.., n_masked, patch_dim].

    feats are encoder outputs over visible tokens (TokenBatch or Tensor);
    schedules is one MaskSchedule or a list of them (one per batch row), all
    with the same visible count.  The decoder always assembles the full
    lattice: one mask-token copy per masked site, positional rows for every
    site (pos_table is [sites, dec_width]), blocks, then the pixel head at
    the masked rows only, in masked_indices order.
    """
    x, squeeze = _batched(tape, feats)
    if isinstance(schedules, MaskSchedule):
        schedules = [schedules]
    b, n_vis, _ = x.shape
    if len(schedules) != b:
        raise tc.ShapeError(f"{len(schedules)} schedules for batch of {b}")
    for s in schedules:
        if s.n_visible != n_vis:
            raise tc.ShapeError(f"schedule has {s.n_visible} visible sites, feats have {n_vis}")
    x = _proj(tape, x, params, "dec.proj")
    token = tc.reshape(tape, params["dec.mask_token"], (1, params["dec.mask_token"].shape[0]))
    token = tc.reshape(tape, tc.repeat_rows(tape, token, b), (b, 1, token.shape[-1]))
    pool = tc.concat_rows(tape, [x, token])
    x = tc.gather_rows(tape, pool, _assembly_indices(schedules, n_vis))
    x = tc.add_const(tape, x, pos_table)
    x = _run_blocks(tape, x, params, "dec", cfg.depth, cfg.heads)
    midx = np.stack([s.masked_indices() for s in schedules])
    x = tc.gather_rows(tape, x, midx)
    out = _proj(tape, x, params, "dec.head")
    if squeeze:
        out = tc.reshape(tape, out, out.shape[1:])
    return out


# ---------------------------------------------------------------------------
# whole-clip forward passes


def _embed_batch(tape, patch_stack, vis_stack, params, pos_table):
    """patch_stack [b, sites, P] and vis_stack [b, n_vis] (numpy) -> [b, n_vis, D]."""
    b, _, p = patch_stack.shape
    n_vis = vis_stack.shape[1]
    if n_vis == 0:
        raise ValueError("schedule leaves no visible tokens")
    w = params["embed.weight"]
    rows = np.take_along_axis(patch_stack, vis_stack[:, :, None], axis=1)
    x = tc.Tensor(np.ascontiguousarray(rows), dtype=w.dtype)
    h = tc.add_rowvec(tape, tc.matmul(tape, x, w), params["embed.bias"])
    return tc.add_const(tape, h, pos_table[vis_stack].astype(w.dtype))


def forward_training_batch(
    tape,
    patch_stack: np.ndarray,
    labels,
    schedules,
    params: dict,
    cfg: ModelConfig,
    pos_enc: np.ndarray,
    pos_dec: np.ndarray,
    lam: float,
):
    """Joint loss over a batch of clips sharing one tape.

    patch_stack: [b, sites, patch_dim] patchified clips (constants).
    Returns (total loss Tensor, logits Tensor [b, classes], diag dict with
    the LossReport and token counts).
    """
    labels = np.asarray(labels, dtype=np.int64)
    vis_stack = np.stack([s.visible_indices() for s in schedules])
    tokens = _embed_batch(tape, patch_stack, vis_stack, params, pos_enc)
    feats = encode(tape, tokens, params, cfg.encoder)
    logits = bridge_classify(tape, feats, params, cfg.bridge)
    l_cls = losses.classification_loss(tape, logits, labels)

    n_masked = schedules[0].n_masked
    if n_masked:
        preds = reconstruct(tape, feats, list(schedules), params, cfg.decoder, pos_dec)
        target = np.stack(
            [build_targets(patch_stack[i], s, cfg.normalize_targets).rows for i, s in enumerate(schedules)]
        )
        l_rec = losses.reconstruction_loss(tape, preds, target.astype(preds.dtype))
    else:
        l_rec = tc.Tensor(np.zeros(()), dtype=logits.dtype)
    total = losses.combine(tape, l_rec, l_cls, lam)
    report = losses.LossReport(
        L=total.item(),
        L_r=l_rec.item(),
        L_c=l_cls.item(),
        lam=float(lam),
        omega=n_masked * patch_stack.shape[-1] * len(schedules),
    )
    diag = {
        "report": report,
        "n_visible": schedules[0].n_visible,
        "n_masked": n_masked,
    }
    return total, logits, diag


def forward_training(tape, clip: np.ndarray, label: int, spec: MaskSpec, params, cfg, patch, lam: float):
    """Single-clip joint forward: returns (loss Tensor, logits Tensor [C], diag).

    diag carries the LossReport plus visible/masked token counts.
    """
    lattice = lattice_for(clip.shape, patch)
    schedule = generate(spec, lattice)
    patches = patchify(clip, patch)
    pos_enc = positional_encoding(lattice, cfg.encoder.width)
    pos_dec = positional_encoding(lattice, cfg.decoder.width)
    total, logits, diag = forward_training_batch(
        tape, patches[None], [label], [schedule], params, cfg, pos_enc, pos_dec, lam
    )
    return total, tc.reshape(tape, logits, (logits.shape[-1],)), diag


def forward_inference(clip: np.ndarray, spec: MaskSpec, params, cfg, patch) -> np.ndarray:
    """Classification logits [C] for one clip; records nothing."""
    lattice = lattice_for(clip.shape, patch)
    schedule = generate(spec, lattice)
    patches = patchify(clip, patch)
    pos_enc = positional_encoding(lattice, cfg.encoder.width)
    vis = schedule.visible_indices()[None]
    tokens = _embed_batch(None, patches[None], vis, params, pos_enc)
    feats = encode(None, tokens, params, cfg.encoder)
    logits = bridge_classify(None, feats, params, cfg.bridge)
    return logits.data[0].copy()
