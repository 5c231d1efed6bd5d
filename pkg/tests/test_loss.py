"""Loss oracles: closed-form cross-entropy values, exact gradients, shift
invariance, and blend arithmetic.  All checks at 64-bit."""

import math

import numpy as np
import pytest

from markit import loss as losses
from markit import tensorcore as tc
from markit.tensorcore import Tape, Tensor


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def test_uniform_logits_give_ln_c():
    for c in (2, 8, 174):
        tape = Tape()
        logits = t64(np.zeros(c))
        val = losses.classification_loss(tape, logits, 0).item()
        assert abs(val - math.log(c)) < 1e-12


def test_uniform_logits_any_constant():
    tape = Tape()
    logits = t64(np.full(8, 3.25))
    val = losses.classification_loss(tape, logits, 5).item()
    assert abs(val - math.log(8)) < 1e-12


def test_shift_invariance_exact_for_dyadic_shift():
    """Adding a power of two to dyadic logits is exact in floating point, so
    the loss must match bit for bit."""
    rng = np.random.default_rng(0)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        logits = np.round(rng.standard_normal(8) * 4) / 4.0
        base = losses.classification_loss(Tape(), t64(logits), 3).item()
        shifted = losses.classification_loss(Tape(), t64(logits + 2.0), 3).item()
        assert base == shifted


def test_shift_invariance_near_exact_generally():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal(8)
    base = losses.classification_loss(Tape(), t64(logits), 2).item()
    for c in (0.3, -17.7, 123.456):
        shifted = losses.classification_loss(Tape(), t64(logits + c), 2).item()
        assert abs(base - shifted) < 1e-12


def test_extreme_logits_stay_stable():
    scipy_special = pytest.importorskip("scipy.special")
    rng = np.random.default_rng(2)
    logits = rng.uniform(-20, 20, size=8)
    got = losses.classification_loss(Tape(), t64(logits), 4).item()
    want = -scipy_special.log_softmax(logits)[4]
    assert abs(got - want) < 1e-8
    # far outside float32 exp range
    logits = np.array([800.0, 0.0, -800.0, 5.0])
    got = losses.classification_loss(Tape(), t64(logits), 1).item()
    want = -scipy_special.log_softmax(logits)[1]
    assert math.isfinite(got) and abs(got - want) < 1e-8


def test_ce_gradient_is_softmax_minus_onehot():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal(6)
        tape = Tape()
        lt = t64(logits)
        l = losses.classification_loss(tape, lt, 2)
        tape.backward(l)
        e = np.exp(logits - logits.max())
        p = e / e.sum()
        onehot = np.zeros(6)
        onehot[2] = 1.0
        assert np.max(np.abs(tape.grad(lt) - (p - onehot))) < 1e-12


def test_batched_ce_averages():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((3, 5))
    labels = [0, 2, 4]
    tape = Tape()
    lt = t64(logits)
    val = losses.classification_loss(tape, lt, labels).item()
    singles = [losses.classification_loss(Tape(), t64(logits[i]), labels[i]).item() for i in range(3)]
    assert abs(val - np.mean(singles)) < 1e-12


def test_label_out_of_range_rejected():
    with pytest.raises(ValueError):
        losses.classification_loss(Tape(), t64(np.zeros(4)), 4)
    with pytest.raises(ValueError):
        losses.classification_loss(Tape(), t64(np.zeros(4)), -1)


def test_reconstruction_gradient_is_two_diff_over_omega():
    rng = np.random.default_rng(5)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        pred = rng.standard_normal((7, 12))
        target = rng.standard_normal((7, 12))
        tape = Tape()
        pt = t64(pred)
        l = losses.reconstruction_loss(tape, pt, target)
        tape.backward(l)
        omega = target.size
        expect = 2.0 * (pred - target) / omega
        assert np.max(np.abs(tape.grad(pt) - expect)) < 1e-12
        assert abs(l.item() - np.mean((pred - target) ** 2)) < 1e-12


def test_empty_target_gives_zero_loss():
    tape = Tape()
    pred = t64(np.zeros((0, 12)))
    l = losses.reconstruction_loss(tape, pred, np.zeros((0, 12)))
    assert l.item() == 0.0


def test_reconstruction_shape_mismatch_rejected():
    with pytest.raises(tc.ShapeError):
        losses.reconstruction_loss(Tape(), t64(np.zeros((3, 4))), np.zeros((4, 3)))


def test_combine_is_exact_blend():
    for lam in (0.0, 0.1, 1.0, 2.5):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            lr, lc = float(rng.uniform(0, 3)), float(rng.uniform(0, 3))
            tape = Tape()
            total = losses.combine(tape, t64(lr), t64(lc), lam).item()
            assert total == lam * lr + lc


def test_combine_example():
    total = losses.combine(Tape(), t64(1.0), t64(1.2), 0.1).item()
    assert abs(total - 1.3) < 1e-15


def test_combine_rejects_negative_weight():
    with pytest.raises(ValueError):
        losses.combine(Tape(), t64(1.0), t64(1.0), -0.1)


def test_zero_weight_drops_reconstruction_grad():
    rng = np.random.default_rng(6)
    pred = rng.standard_normal((4, 8))
    target = rng.standard_normal((4, 8))
    logits = rng.standard_normal(5)
    tape = Tape()
    pt, lt = t64(pred), t64(logits)
    total = losses.combine(
        tape, losses.reconstruction_loss(tape, pt, target), losses.classification_loss(tape, lt, 1), 0.0
    )
    tape.backward(total)
    assert np.all(tape.grad(pt) == 0.0)
    assert np.any(tape.grad(lt) != 0.0)
    assert total.item() == losses.classification_loss(Tape(), t64(logits), 1).item()
