"""Training objectives: masked-pixel reconstruction, cross-entropy, blend.

The reconstruction loss is the mean squared error over every masked pixel,
so its gradient at a prediction y against target x is 2(y - x) / omega with
omega the masked pixel count.  Classification is cross-entropy through a
stabilized log-softmax, averaged over the batch.  The joint objective is
lam * L_r + L_c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc


@dataclass(frozen=True)
class LossReport:
    L: float
    L_r: float
    L_c: float
    lam: float
    omega: int  # masked pixel count


def reconstruction_loss(tape, pred: tc.Tensor, target: np.ndarray) -> tc.Tensor:
    """Mean squared error over all masked pixels; zero when nothing is masked."""
    target = np.asarray(target)
    if target.shape != pred.shape:
        raise tc.ShapeError(f"reconstruction target {target.shape} vs pred {pred.shape}")
    omega = target.size
    if omega == 0:
        return tc.Tensor(np.zeros((), dtype=pred.dtype))
    diff = tc.sub(tape, pred, tc.Tensor(target, dtype=pred.dtype))
    return tc.scale(tape, tc.sum_all(tape, tc.square(tape, diff)), 1.0 / omega)


def classification_loss(tape, logits: tc.Tensor, labels) -> tc.Tensor:
    """Cross-entropy of logits [C] against an int label, or mean cross-entropy
    of logits [B, C] against int labels [B]."""
    squeeze = logits.ndim == 1
    if squeeze:
        logits = tc.reshape(tape, logits, (1, logits.shape[0]))
        labels = [labels]
    if logits.ndim != 2:
        raise tc.ShapeError(f"logits must be [C] or [B, C], got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise tc.ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range for {c} classes")
    logp = tc.log_softmax_rows(tape, logits)
    pick = np.zeros((b, c))
    pick[np.arange(b), labels] = -1.0 / b
    return tc.sum_all(tape, tc.mul(tape, logp, tc.Tensor(pick, dtype=logits.dtype)))


def combine(tape, l_rec: tc.Tensor, l_cls: tc.Tensor, lam: float) -> tc.Tensor:
    """Joint objective lam * L_r + L_c; lam must be non-negative."""
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"loss weight must be non-negative, got {lam}")
    return tc.add(tape, tc.scale(tape, l_rec, lam), l_cls)
