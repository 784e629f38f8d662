"""Confusion partitions, Dice, uncertainty-error overlap, and correction benefit.

Uncertain-region counts (TPU/TNU/FPU/FNU) are counts of voxels whose
uncertainty reaches the threshold tau inside each confusion region;
with that reading the benefit inequalities characterize exactly whether
flipping all such voxels improves the Dice coefficient.  All benefit
inequalities are evaluated in exact integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor_io import ValidationError

DEFAULT_TAU_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class UncertainConfusion:
    """Voxels with uncertainty >= tau inside each confusion region."""

    tpu: int
    tnu: int
    fpu: int
    fnu: int
    tau: float


@dataclass(frozen=True)
class CorrectionOutcome:
    dice_before: float
    dice_after: float
    benefit_predicted: bool
    voxels_removed: int
    voxels_added: int


def confusion(pred, gt, mask=None) -> ConfusionCounts:
    p, g, m = _prepare(pred, gt, mask)
    if m is not None:
        p = p[m]
        g = g[m]
    pos = p == 1
    truth = g == 1
    tp = int(np.count_nonzero(pos & truth))
    fp = int(np.count_nonzero(pos & ~truth))
    fn = int(np.count_nonzero(~pos & truth))
    tn = int(p.size) - tp - fp - fn
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def dice(counts: ConfusionCounts) -> float:
    """2 TP / (2 TP + FP + FN); the empty-vs-empty case is 1.0 by convention."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2 * counts.tp / denom


def dice_degenerate(counts: ConfusionCounts) -> bool:
    return counts.tp + counts.fp + counts.fn == 0


def binary_dice(a_count: int, b_count: int, intersection: int) -> tuple[float, bool]:
    """Dice between two binary maps given set sizes; returns (value, degenerate)."""
    denom = a_count + b_count
    if denom == 0:
        return 1.0, True
    return 2 * intersection / denom, False


def uncertainty_error_overlap(q, tau: float, pred, gt, mask=None) -> float:
    """Dice between the thresholded uncertainty (q >= tau) and the error map."""
    value, _ = uncertainty_error_overlap_result(q, tau, pred, gt, mask)
    return value


def uncertainty_error_overlap_result(q, tau: float, pred, gt, mask=None) -> tuple[float, bool]:
    qq = _check_uncertainty(q)
    p, g, m = _prepare(pred, gt, mask)
    if qq.shape != p.shape:
        raise ValidationError(f"uncertainty dims {qq.shape} != prediction dims {p.shape}")
    _check_tau(tau)
    uncertain = qq >= tau
    error = p != g
    if m is not None:
        uncertain = uncertain & m
        error = error & m
    inter = int(np.count_nonzero(uncertain & error))
    return binary_dice(
        int(np.count_nonzero(uncertain)), int(np.count_nonzero(error)), inter
    )


def uncertain_confusion(q, tau: float, pred, gt, mask=None) -> UncertainConfusion:
    qq = _check_uncertainty(q)
    p, g, m = _prepare(pred, gt, mask)
    if qq.shape != p.shape:
        raise ValidationError(f"uncertainty dims {qq.shape} != prediction dims {p.shape}")
    _check_tau(tau)
    if m is not None:
        qq, p, g = qq[m], p[m], g[m]
    uncertain = qq >= tau
    pos = p == 1
    truth = g == 1
    return UncertainConfusion(
        tpu=int(np.count_nonzero(uncertain & pos & truth)),
        tnu=int(np.count_nonzero(uncertain & ~pos & ~truth)),
        fpu=int(np.count_nonzero(uncertain & pos & ~truth)),
        fnu=int(np.count_nonzero(uncertain & ~pos & truth)),
        tau=tau,
    )


def fp_removal_benefit(c: ConfusionCounts, u: UncertainConfusion) -> bool:
    """True when removing every uncertain predicted-positive voxel raises Dice.

    Exact-integer form of the relation FPU * TP > TPU * (TP + FP + FN).
    """
    _check_consistent(c, u)
    return u.fpu * c.tp > u.tpu * (c.tp + c.fp + c.fn)


def fp_removal_benefit_accuracy(c: ConfusionCounts, u: UncertainConfusion) -> bool:
    """Weaker accuracy criterion: FPU > TPU is already sufficient."""
    _check_consistent(c, u)
    return u.fpu > u.tpu


def fn_addition_benefit(c: ConfusionCounts, u: UncertainConfusion) -> bool:
    """True when adding every uncertain predicted-negative voxel raises Dice.

    Exact-integer form of FNU * (TP + FP + FN) > TNU * TP.  Rarely useful in
    practice: large backgrounds make TNU dominate.
    """
    _check_consistent(c, u)
    return u.fnu * (c.tp + c.fp + c.fn) > u.tnu * c.tp


def apply_fp_removal(pred, gt, q, tau: float, mask=None) -> tuple[np.ndarray, CorrectionOutcome]:
    """Flip every predicted-positive voxel with q >= tau to negative."""
    qq = _check_uncertainty(q)
    p, g, m = _prepare(pred, gt, mask)
    if qq.shape != p.shape:
        raise ValidationError(f"uncertainty dims {qq.shape} != prediction dims {p.shape}")
    _check_tau(tau)
    flip = (qq >= tau) & (p == 1)
    if m is not None:
        flip = flip & m
    corrected = p.copy()
    corrected[flip] = 0
    before = confusion(p, g, m)
    after = confusion(corrected, g, m)
    outcome = CorrectionOutcome(
        dice_before=dice(before),
        dice_after=dice(after),
        benefit_predicted=fp_removal_benefit(before, uncertain_confusion(qq, tau, p, g, m)),
        voxels_removed=int(np.count_nonzero(flip)),
        voxels_added=0,
    )
    return corrected, outcome


def apply_fn_addition(pred, gt, q, tau: float, mask=None) -> tuple[np.ndarray, CorrectionOutcome]:
    """Flip every predicted-negative voxel with q >= tau to positive."""
    qq = _check_uncertainty(q)
    p, g, m = _prepare(pred, gt, mask)
    if qq.shape != p.shape:
        raise ValidationError(f"uncertainty dims {qq.shape} != prediction dims {p.shape}")
    _check_tau(tau)
    flip = (qq >= tau) & (p == 0)
    if m is not None:
        flip = flip & m
    corrected = p.copy()
    corrected[flip] = 1
    before = confusion(p, g, m)
    after = confusion(corrected, g, m)
    outcome = CorrectionOutcome(
        dice_before=dice(before),
        dice_after=dice(after),
        benefit_predicted=fn_addition_benefit(before, uncertain_confusion(qq, tau, p, g, m)),
        voxels_removed=0,
        voxels_added=int(np.count_nonzero(flip)),
    )
    return corrected, outcome


# -- threshold sweeps ---------------------------------------------------------
#
# Sweeping a grid of taus voxel-by-voxel would re-scan the volume per tau.
# Instead each subject is summarized once into per-region histograms of the
# uncertainty values bucketed by the grid; every per-tau count is then a
# suffix sum.  The bucket comparison (grid[j] <= q) is the same float
# comparison as (q >= tau), so results match the direct path exactly.

_REGION_TP, _REGION_TN, _REGION_FP, _REGION_FN = 0, 1, 2, 3


@dataclass(frozen=True)
class SubjectSweepData:
    """One subject's confusion counts plus uncertain counts at every grid tau."""

    counts: ConfusionCounts
    ge: np.ndarray  # shape (4, len(grid)); ge[region, j] = #(q >= grid[j]) in region
    grid: tuple[float, ...]

    def uncertain_at(self, j: int) -> UncertainConfusion:
        return UncertainConfusion(
            tpu=int(self.ge[_REGION_TP, j]),
            tnu=int(self.ge[_REGION_TN, j]),
            fpu=int(self.ge[_REGION_FP, j]),
            fnu=int(self.ge[_REGION_FN, j]),
            tau=self.grid[j],
        )


def prepare_sweep_subject(q, pred, gt, grid: Sequence[float], mask=None) -> SubjectSweepData:
    qq = _check_uncertainty(q)
    p, g, m = _prepare(pred, gt, mask)
    if qq.shape != p.shape:
        raise ValidationError(f"uncertainty dims {qq.shape} != prediction dims {p.shape}")
    grid = _check_grid(grid)
    garr = np.asarray(grid, dtype=np.float64)
    n_buckets = garr.size + 1
    region = np.where(
        p == 1,
        np.where(g == 1, _REGION_TP, _REGION_FP),
        np.where(g == 1, _REGION_FN, _REGION_TN),
    ).astype(np.int64)
    bucket = np.searchsorted(garr, qq.ravel(), side="right")
    key = region.ravel() * n_buckets + bucket
    if m is not None:
        key = key[m.ravel()]
    hist = np.bincount(key, minlength=4 * n_buckets).reshape(4, n_buckets)
    suffix = np.cumsum(hist[:, ::-1], axis=1)[:, ::-1]
    ge = suffix[:, 1:]  # ge[:, j] counts buckets > j, i.e. q >= grid[j]
    totals = hist.sum(axis=1)
    counts = ConfusionCounts(
        tp=int(totals[_REGION_TP]),
        tn=int(totals[_REGION_TN]),
        fp=int(totals[_REGION_FP]),
        fn=int(totals[_REGION_FN]),
    )
    return SubjectSweepData(counts=counts, ge=ge, grid=grid)


@dataclass(frozen=True)
class ThresholdSweep:
    taus: tuple[float, ...]
    mean_ue: list[float]  # mean over subjects with a defined (non-degenerate) overlap
    ue_defined: list[int]
    bnf: list[float]
    per_subject_ue: list[list[float | None]]
    per_subject_benefit: list[list[bool]]
    best_tau_ue: float | None
    best_tau_bnf: float


def sweep_thresholds(subjects: Sequence[SubjectSweepData], grid: Sequence[float] | None = None) -> ThresholdSweep:
    """Mean uncertainty-error overlap and BnF per tau; best tau per metric.

    Degenerate overlaps (no error and no uncertain voxels) are excluded from
    the per-tau means and from best-tau selection.  Ties prefer smaller tau.
    """
    if not subjects:
        raise ValidationError("sweep needs at least one subject")
    grid = _check_grid(grid if grid is not None else subjects[0].grid)
    for s in subjects:
        if s.grid != grid:
            raise ValidationError("all subjects must share the sweep grid")
    n_taus = len(grid)
    per_ue: list[list[float | None]] = []
    per_benefit: list[list[bool]] = []
    for s in subjects:
        ue_row: list[float | None] = []
        benefit_row: list[bool] = []
        err = s.counts.fp + s.counts.fn
        for j in range(n_taus):
            u = s.uncertain_at(j)
            uncertain_total = u.tpu + u.tnu + u.fpu + u.fnu
            value, degenerate = binary_dice(uncertain_total, err, u.fpu + u.fnu)
            ue_row.append(None if degenerate else value)
            benefit_row.append(fp_removal_benefit(s.counts, u))
        per_ue.append(ue_row)
        per_benefit.append(benefit_row)

    mean_ue: list[float] = []
    ue_defined: list[int] = []
    bnf_values: list[float] = []
    for j in range(n_taus):
        defined = [row[j] for row in per_ue if row[j] is not None]
        ue_defined.append(len(defined))
        mean_ue.append(sum(defined) / len(defined) if defined else 0.0)
        bnf_values.append(bnf([row[j] for row in per_benefit]))

    best_ue = None
    for j in range(n_taus):
        if ue_defined[j] == 0:
            continue
        if best_ue is None or mean_ue[j] > mean_ue[best_ue]:
            best_ue = j
    best_bnf = max(range(n_taus), key=lambda j: (bnf_values[j], -j))
    return ThresholdSweep(
        taus=grid,
        mean_ue=mean_ue,
        ue_defined=ue_defined,
        bnf=bnf_values,
        per_subject_ue=per_ue,
        per_subject_benefit=per_benefit,
        best_tau_ue=None if best_ue is None else grid[best_ue],
        best_tau_bnf=grid[best_bnf],
    )


def bnf(benefit_flags: Sequence[bool]) -> float:
    """Proportion of subjects whose FP-removal benefit condition holds."""
    if len(benefit_flags) == 0:
        raise ValidationError("BnF needs at least one subject")
    return sum(bool(b) for b in benefit_flags) / len(benefit_flags)


# -- shared validation --------------------------------------------------------


def _check_consistent(c: ConfusionCounts, u: UncertainConfusion) -> None:
    if u.tpu > c.tp or u.tnu > c.tn or u.fpu > c.fp or u.fnu > c.fn:
        raise ValidationError(
            f"uncertain counts {u} exceed confusion regions {c}"
        )
    if min(u.tpu, u.tnu, u.fpu, u.fnu) < 0 or min(c.tp, c.tn, c.fp, c.fn) < 0:
        raise ValidationError("confusion counts must be nonnegative")


def _prepare(pred, gt, mask):
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise ValidationError(f"prediction dims {p.shape} != ground truth dims {g.shape}")
    for name, arr in (("prediction", p), ("ground truth", g)):
        if arr.dtype == bool or arr.size == 0:
            continue
        if arr.min() < 0 or arr.max() > 1:
            raise ValidationError(f"{name} must be binary {{0, 1}}")
        if arr.dtype.kind == "f" and not bool(((arr == 0) | (arr == 1)).all()):
            raise ValidationError(f"{name} must be binary {{0, 1}}")
    m = None
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if m.shape != p.shape:
            raise ValidationError(f"mask dims {m.shape} != prediction dims {p.shape}")
    return p, g, m


def _check_uncertainty(q) -> np.ndarray:
    qq = np.asarray(q, dtype=np.float64)
    if qq.size and (not np.isfinite(qq).all() or qq.min() < 0.0 or qq.max() > 1.0):
        raise ValidationError("uncertainty values must lie in [0, 1]")
    return qq


def _check_tau(tau: float) -> None:
    if not (0.0 <= tau <= 1.0):
        raise ValidationError(f"tau must lie in [0, 1], got {tau}")


def _check_grid(grid: Sequence[float]) -> tuple[float, ...]:
    g = tuple(float(t) for t in grid)
    if not g:
        raise ValidationError("threshold grid must be non-empty")
    if any(not (0.0 < t < 1.0) for t in g):
        raise ValidationError("grid thresholds must lie in (0, 1)")
    if list(g) != sorted(set(g)):
        raise ValidationError("grid thresholds must be strictly increasing")
    return g
