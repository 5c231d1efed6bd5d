"""Analytic compute-cost model for masked-token video recognition.

Counts multiply-accumulates (1 MAC = 1 FLOP) for the matrix products only;
norms, softmax, biases, and activations are excluded.  A transformer block
over n tokens of width d costs 4nd^2 (QKV and output projections) + 2n^2 d
(attention scores and weighted values) + 2*mlp_ratio*nd^2 (the MLP), and a
network costs depth times that.

``mar_cost`` prices a full masked-recognition forward pass: patch embedding
of the visible tokens, the encoder over visible tokens only, and a classifier
that is either a bridging transformer (projection, blocks over visible
tokens, pooled head) or a plain pooled linear head.  The optional decoder
term (training only) runs over the full lattice after reinserting mask
tokens and reads out pixels at the masked sites.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .maskgen import LatticeShape


@dataclass(frozen=True)
class CostReport:
    """Per-stage MAC counts for one clip forward pass."""

    n_tokens: int
    n_visible: int
    embed: int
    encoder: int
    classifier: int
    decoder: int = 0

    @property
    def total(self) -> int:
        return self.embed + self.encoder + self.classifier + self.decoder

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    def rows(self):
        out = [(f.name, getattr(self, f.name)) for f in fields(self)]
        out.append(("total", self.total))
        return out


def transformer_cost(n_tokens: int, width: int, depth: int, mlp_ratio: int = 4) -> int:
    """MACs for `depth` blocks over n_tokens of the given width."""
    if n_tokens < 0 or width < 0 or depth < 0 or mlp_ratio < 0:
        raise ValueError("transformer_cost: negative argument")
    n, d = n_tokens, width
    per_block = 4 * n * d * d + 2 * n * n * d + 2 * mlp_ratio * n * d * d
    return depth * per_block


def visible_tokens(ratio: float, lattice: LatticeShape) -> int:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    return round((1.0 - ratio) * lattice.sites)


def mar_cost(
    ratio: float,
    lattice: LatticeShape,
    patch_dim: int,
    enc_width: int,
    enc_depth: int,
    class_count: int,
    bridge_width: int | None = None,
    bridge_depth: int = 0,
    mlp_ratio: int = 4,
    dec_width: int | None = None,
    dec_depth: int = 0,
    with_decoder: bool = False,
) -> CostReport:
    """Cost of one clip at the given masking ratio.

    With bridge_width set, the classifier is the bridging transformer:
    input projection + blocks over the visible tokens + pooled head.
    Otherwise it is a pooled linear head straight off the encoder width.
    """
    n_v = visible_tokens(ratio, lattice)
    embed = n_v * patch_dim * enc_width
    encoder = transformer_cost(n_v, enc_width, enc_depth, mlp_ratio)
    if bridge_width is not None:
        classifier = (
            n_v * enc_width * bridge_width
            + transformer_cost(n_v, bridge_width, bridge_depth, mlp_ratio)
            + bridge_width * class_count
        )
    else:
        classifier = enc_width * class_count
    decoder = 0
    if with_decoder:
        if dec_width is None:
            raise ValueError("with_decoder requires dec_width")
        n_m = lattice.sites - n_v
        decoder = (
            n_v * enc_width * dec_width
            + transformer_cost(lattice.sites, dec_width, dec_depth, mlp_ratio)
            + n_m * dec_width * patch_dim
        )
    return CostReport(
        n_tokens=lattice.sites,
        n_visible=n_v,
        embed=embed,
        encoder=encoder,
        classifier=classifier,
        decoder=decoder,
    )


# reference full-scale configuration: ViT-Base encoder on a 8x14x14 lattice
# of 2x16x16x3 tubelets, 174 classes, bridging classifier of width 512
FULL_LATTICE = LatticeShape(8, 14, 14)
FULL_PATCH_DIM = 2 * 16 * 16 * 3
FULL_CLASSES = 174


def full_scale_cost(ratio: float, linear: bool = False) -> CostReport:
    """The reference configuration's cost at a masking ratio."""
    if linear:
        return mar_cost(ratio, FULL_LATTICE, FULL_PATCH_DIM, 768, 12, FULL_CLASSES)
    return mar_cost(
        ratio,
        FULL_LATTICE,
        FULL_PATCH_DIM,
        768,
        12,
        FULL_CLASSES,
        bridge_width=512,
        bridge_depth=2,
    )
