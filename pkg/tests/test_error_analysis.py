"""Confusion, Dice, uncertainty-error overlap, and correction-benefit checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seguq.error_analysis import (
    ConfusionCounts,
    UncertainConfusion,
    apply_fn_addition,
    apply_fp_removal,
    bnf,
    confusion,
    dice,
    dice_degenerate,
    fn_addition_benefit,
    fp_removal_benefit,
    fp_removal_benefit_accuracy,
    prepare_sweep_subject,
    sweep_thresholds,
    uncertain_confusion,
    uncertainty_error_overlap,
    uncertainty_error_overlap_result,
)
from seguq.tensor_io import ValidationError


def test_confusion_perfect_prediction():
    gt = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    c = confusion(gt, gt)
    assert (c.fp, c.fn) == (0, 0)
    assert (c.tp, c.tn) == (2, 2)


def test_confusion_all_false_positive():
    pred = np.ones(12, dtype=np.uint8)
    gt = np.zeros(12, dtype=np.uint8)
    assert confusion(pred, gt).fp == 12


def test_confusion_matches_loop_oracle():
    rng = np.random.default_rng(5)
    pred = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    gt = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    c = confusion(pred, gt)
    tp = tn = fp = fn = 0
    for i in range(16):
        for j in range(16):
            if pred[i, j] and gt[i, j]:
                tp += 1
            elif pred[i, j] and not gt[i, j]:
                fp += 1
            elif not pred[i, j] and gt[i, j]:
                fn += 1
            else:
                tn += 1
    assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
    assert c.total == 256


def test_confusion_respects_mask():
    pred = np.array([1, 1, 0, 0], dtype=np.uint8)
    gt = np.array([1, 0, 1, 0], dtype=np.uint8)
    mask = np.array([1, 1, 0, 0], dtype=np.uint8)
    c = confusion(pred, gt, mask)
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 0, 0)
    assert c.total == 2


def test_confusion_rejects_mismatched_dims():
    with pytest.raises(ValidationError, match="dims"):
        confusion(np.zeros(3, dtype=np.uint8), np.zeros(4, dtype=np.uint8))


def test_dice_values():
    assert dice(ConfusionCounts(tp=10, tn=0, fp=5, fn=3)) == pytest.approx(20 / 28)
    assert dice(ConfusionCounts(tp=4, tn=9, fp=0, fn=0)) == 1.0
    degenerate = ConfusionCounts(tp=0, tn=5, fp=0, fn=0)
    assert dice(degenerate) == 1.0
    assert dice_degenerate(degenerate)
    assert not dice_degenerate(ConfusionCounts(tp=1, tn=0, fp=0, fn=0))


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_dice_bounds_and_monotonicity(tp, fp, fn, extra):
    c = ConfusionCounts(tp=tp, tn=0, fp=fp, fn=fn)
    assert 0.0 <= dice(c) <= 1.0
    worse_fp = ConfusionCounts(tp=tp, tn=0, fp=fp + extra, fn=fn)
    worse_fn = ConfusionCounts(tp=tp, tn=0, fp=fp, fn=fn + extra)
    assert dice(worse_fp) <= dice(c)
    assert dice(worse_fn) <= dice(c)


def test_overlap_identical_maps():
    gt = np.zeros((4, 4), dtype=np.uint8)
    pred = gt.copy()
    pred[1:3, 1:3] = 1  # the error region
    q = pred.astype(np.float64)  # uncertain exactly on the error
    assert uncertainty_error_overlap(q, 0.5, pred, gt) == 1.0


def test_overlap_disjoint_maps():
    gt = np.zeros(8, dtype=np.uint8)
    pred = np.array([1, 1, 0, 0, 0, 0, 0, 0], dtype=np.uint8)
    q = np.array([0, 0, 0, 0, 0, 0, 1.0, 1.0])
    assert uncertainty_error_overlap(q, 0.5, pred, gt) == 0.0


def test_overlap_partial():
    # error on 10 voxels, uncertainty on 10 voxels, 6 shared -> 12/20
    pred = np.zeros(30, dtype=np.uint8)
    gt = np.zeros(30, dtype=np.uint8)
    gt[:10] = 1  # 10 false negatives
    q = np.zeros(30)
    q[4:14] = 1.0  # overlaps 6 of the error voxels
    assert uncertainty_error_overlap(q, 0.5, pred, gt) == pytest.approx(0.6)


def test_overlap_both_empty_is_degenerate():
    gt = np.zeros(5, dtype=np.uint8)
    value, degenerate = uncertainty_error_overlap_result(np.zeros(5), 0.5, gt, gt)
    assert value == 1.0 and degenerate


def test_overlap_symmetry_and_permutation_invariance():
    """Dice is symmetric in its two maps and blind to voxel order."""
    rng = np.random.default_rng(9)
    zeros = np.zeros(40, dtype=np.uint8)
    for _ in range(50):
        a = rng.random(40) > 0.6
        b = rng.random(40) > 0.6
        d_ab = uncertainty_error_overlap(a.astype(float), 0.5, b.astype(np.uint8), zeros)
        d_ba = uncertainty_error_overlap(b.astype(float), 0.5, a.astype(np.uint8), zeros)
        assert d_ab == d_ba
        order = rng.permutation(40)
        shuffled = uncertainty_error_overlap(
            a[order].astype(float), 0.5, b[order].astype(np.uint8), zeros
        )
        assert shuffled == d_ab


def test_uncertain_confusion_extremes():
    rng = np.random.default_rng(2)
    pred = (rng.random(64) > 0.5).astype(np.uint8)
    gt = (rng.random(64) > 0.5).astype(np.uint8)
    q = rng.random(64) * 0.8
    c = confusion(pred, gt)
    u0 = uncertain_confusion(q, 0.0, pred, gt)
    assert (u0.tpu, u0.tnu, u0.fpu, u0.fnu) == (c.tp, c.tn, c.fp, c.fn)
    u1 = uncertain_confusion(q, 0.9, pred, gt)
    assert (u1.tpu, u1.tnu, u1.fpu, u1.fnu) == (0, 0, 0, 0)


def test_uncertain_confusion_matches_loop_oracle():
    rng = np.random.default_rng(3)
    pred = (rng.random(100) > 0.4).astype(np.uint8)
    gt = (rng.random(100) > 0.6).astype(np.uint8)
    q = rng.random(100)
    tau = 0.35
    u = uncertain_confusion(q, tau, pred, gt)
    tpu = tnu = fpu = fnu = 0
    for i in range(100):
        if q[i] < tau:
            continue
        if pred[i] and gt[i]:
            tpu += 1
        elif pred[i] and not gt[i]:
            fpu += 1
        elif not pred[i] and gt[i]:
            fnu += 1
        else:
            tnu += 1
    assert (u.tpu, u.tnu, u.fpu, u.fnu) == (tpu, tnu, fpu, fnu)


@given(st.data())
@settings(max_examples=100)
def test_uncertain_counts_monotone_in_tau(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    pred = (rng.random(50) > 0.5).astype(np.uint8)
    gt = (rng.random(50) > 0.5).astype(np.uint8)
    q = rng.random(50)
    t1 = data.draw(st.floats(0.0, 1.0))
    t2 = data.draw(st.floats(0.0, 1.0))
    lo, hi = min(t1, t2), max(t1, t2)
    u_lo = uncertain_confusion(q, lo, pred, gt)
    u_hi = uncertain_confusion(q, hi, pred, gt)
    assert u_hi.tpu <= u_lo.tpu
    assert u_hi.tnu <= u_lo.tnu
    assert u_hi.fpu <= u_lo.fpu
    assert u_hi.fnu <= u_lo.fnu


def test_benefit_spec_example():
    c = ConfusionCounts(tp=10, tn=0, fp=5, fn=3)
    u = UncertainConfusion(tpu=1, tnu=0, fpu=4, fnu=0, tau=0.5)
    assert fp_removal_benefit(c, u)  # 4 * 10 > 1 * 18
    # removing the uncertain voxels: tp 10->9, fp 5->1, fn 3->4
    after = ConfusionCounts(tp=9, tn=0, fp=1, fn=4)
    assert dice(c) == pytest.approx(20 / 28)
    assert dice(after) == pytest.approx(18 / 23)
    assert dice(after) > dice(c)


def test_benefit_forced_cases():
    c = ConfusionCounts(tp=10, tn=0, fp=5, fn=3)
    assert not fp_removal_benefit(c, UncertainConfusion(1, 0, 0, 0, 0.5))  # fpu=0, tpu>0
    assert fp_removal_benefit(c, UncertainConfusion(0, 0, 3, 0, 0.5))  # tpu=0, fpu>0, tp>0
    assert fp_removal_benefit_accuracy(c, UncertainConfusion(1, 0, 2, 0, 0.5))
    assert not fp_removal_benefit_accuracy(c, UncertainConfusion(2, 0, 2, 0, 0.5))


def test_fn_benefit_forced_cases():
    c = ConfusionCounts(tp=10, tn=20, fp=5, fn=3)
    assert fn_addition_benefit(c, UncertainConfusion(0, 0, 0, 2, 0.5))  # fnu>0, tnu=0
    assert not fn_addition_benefit(c, UncertainConfusion(0, 4, 0, 0, 0.5))  # fnu=0


def _dice_after_removal(c, tpu, fpu):
    return ConfusionCounts(tp=c.tp - tpu, tn=c.tn + fpu, fp=c.fp - fpu, fn=c.fn + tpu)


def _dice_after_addition(c, tnu, fnu):
    return ConfusionCounts(tp=c.tp + fnu, tn=c.tn - tnu, fp=c.fp + tnu, fn=c.fn - fnu)


@given(st.data())
@settings(max_examples=300)
def test_fp_benefit_equivalence_small(data):
    tp = data.draw(st.integers(0, 8))
    fp = data.draw(st.integers(0, 8))
    fn = data.draw(st.integers(0, 8))
    tpu = data.draw(st.integers(0, tp))
    fpu = data.draw(st.integers(0, fp))
    c = ConfusionCounts(tp=tp, tn=0, fp=fp, fn=fn)
    after = _dice_after_removal(c, tpu, fpu)
    if dice_degenerate(c) or dice_degenerate(after):
        return  # the equivalence is stated for defined Dice values only
    u = UncertainConfusion(tpu=tpu, tnu=0, fpu=fpu, fnu=0, tau=0.5)
    assert fp_removal_benefit(c, u) == (dice(after) > dice(c))


@given(st.data())
@settings(max_examples=300)
def test_fn_benefit_equivalence_small(data):
    tp = data.draw(st.integers(0, 8))
    fp = data.draw(st.integers(0, 8))
    fn = data.draw(st.integers(0, 8))
    tn = data.draw(st.integers(0, 8))
    fnu = data.draw(st.integers(0, fn))
    tnu = data.draw(st.integers(0, tn))
    c = ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)
    after = _dice_after_addition(c, tnu, fnu)
    if dice_degenerate(c) or dice_degenerate(after):
        return
    u = UncertainConfusion(tpu=0, tnu=tnu, fpu=0, fnu=fnu, tau=0.5)
    assert fn_addition_benefit(c, u) == (dice(after) > dice(c))


def test_apply_fp_removal_no_uncertain_voxels():
    rng = np.random.default_rng(1)
    pred = (rng.random(30) > 0.5).astype(np.uint8)
    gt = (rng.random(30) > 0.5).astype(np.uint8)
    q = rng.random(30) * 0.3
    corrected, outcome = apply_fp_removal(pred, gt, q, 0.9)
    assert np.array_equal(corrected, pred)
    assert outcome.dice_after == outcome.dice_before
    assert outcome.voxels_removed == 0


def test_apply_fp_removal_perfect_correction():
    gt = np.array([1, 1, 0, 0, 0], dtype=np.uint8)
    pred = np.array([1, 1, 1, 1, 0], dtype=np.uint8)  # two FPs, no FN
    q = np.array([0.0, 0.0, 0.9, 0.9, 0.0])
    corrected, outcome = apply_fp_removal(pred, gt, q, 0.5)
    assert np.array_equal(corrected, gt)
    assert outcome.dice_after == 1.0
    assert outcome.voxels_removed == 2
    assert outcome.benefit_predicted


@given(st.data())
@settings(max_examples=200)
def test_apply_fp_removal_consistent_with_benefit(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    pred = (rng.random(40) > 0.4).astype(np.uint8)
    gt = (rng.random(40) > 0.5).astype(np.uint8)
    q = rng.random(40)
    tau = data.draw(st.floats(0.05, 0.95))
    before = confusion(pred, gt)
    corrected, outcome = apply_fp_removal(pred, gt, q, tau)
    after = confusion(corrected, gt)
    if not dice_degenerate(before) and not dice_degenerate(after):
        assert outcome.benefit_predicted == (outcome.dice_after > outcome.dice_before)
    assert outcome.dice_after == dice(after)


def test_apply_fn_addition_flips_negatives():
    gt = np.array([1, 1, 1, 0], dtype=np.uint8)
    pred = np.array([1, 0, 0, 0], dtype=np.uint8)
    q = np.array([0.0, 0.8, 0.0, 0.0])
    corrected, outcome = apply_fn_addition(pred, gt, q, 0.5)
    assert np.array_equal(corrected, [1, 1, 0, 0])
    assert outcome.voxels_added == 1
    assert outcome.dice_after > outcome.dice_before


# -- threshold sweeps -----------------------------------------------------------


def _random_subject(rng, n=200):
    pred = (rng.random(n) > 0.45).astype(np.uint8)
    gt = (rng.random(n) > 0.55).astype(np.uint8)
    q = rng.random(n)
    return q, pred, gt


def test_sweep_histograms_match_direct_path():
    rng = np.random.default_rng(17)
    q, pred, gt = _random_subject(rng)
    grid = (0.1, 0.25, 0.5, 0.75, 0.9)
    data = prepare_sweep_subject(q, pred, gt, grid)
    assert data.counts == confusion(pred, gt)
    for j, tau in enumerate(grid):
        direct = uncertain_confusion(q, tau, pred, gt)
        fast = data.uncertain_at(j)
        assert (fast.tpu, fast.tnu, fast.fpu, fast.fnu) == (
            direct.tpu,
            direct.tnu,
            direct.fpu,
            direct.fnu,
        )


def test_sweep_single_tau_grid():
    rng = np.random.default_rng(23)
    q, pred, gt = _random_subject(rng)
    sweep = sweep_thresholds([prepare_sweep_subject(q, pred, gt, (0.4,))])
    assert sweep.best_tau_bnf == 0.4
    assert sweep.best_tau_ue in (0.4, None)


def test_sweep_constant_zero_uncertainty():
    rng = np.random.default_rng(29)
    _, pred, gt = _random_subject(rng)
    q = np.zeros_like(pred, dtype=np.float64)
    grid = (0.25, 0.5, 0.75)
    sweep = sweep_thresholds([prepare_sweep_subject(q, pred, gt, grid)])
    # no voxel reaches any threshold: overlap is 0 against a non-empty error map
    assert sweep.mean_ue == [0.0, 0.0, 0.0]


def test_sweep_uncertainty_equals_error_indicator():
    rng = np.random.default_rng(31)
    _, pred, gt = _random_subject(rng)
    q = (pred != gt).astype(np.float64)
    grid = (0.1, 0.5, 0.9)
    sweep = sweep_thresholds([prepare_sweep_subject(q, pred, gt, grid)])
    assert sweep.mean_ue == [1.0, 1.0, 1.0]
    assert sweep.best_tau_ue == 0.1  # ties break toward smaller tau


def test_sweep_ties_break_toward_smaller_tau():
    rng = np.random.default_rng(37)
    q, pred, gt = _random_subject(rng)
    grid = (0.2, 0.8)
    data = prepare_sweep_subject(np.zeros_like(q), pred, gt, grid)
    sweep = sweep_thresholds([data])
    assert sweep.best_tau_bnf == 0.2


def test_sweep_grid_validation():
    rng = np.random.default_rng(41)
    q, pred, gt = _random_subject(rng)
    with pytest.raises(ValidationError):
        prepare_sweep_subject(q, pred, gt, ())
    with pytest.raises(ValidationError):
        prepare_sweep_subject(q, pred, gt, (0.0, 0.5))
    with pytest.raises(ValidationError):
        prepare_sweep_subject(q, pred, gt, (0.5, 0.2))


def test_bnf_counting():
    assert bnf([True, True]) == 1.0
    assert bnf([False, False, False]) == 0.0
    assert bnf([True, False, True, False, False]) == pytest.approx(0.4)
    with pytest.raises(ValidationError):
        bnf([])
