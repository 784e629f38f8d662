"""Reliability binning, ECE, dataset pooling, and subject-level classification.

Bins hold sufficient statistics only (count, confidence sum, positive-label
sum), so subject-level results pool into dataset-level results by plain
addition.  Confidence sums are stored exactly: float confidences are
accumulated on a fixed 2**-30 grid as integers, and exact rational inputs
(fractions.Fraction) are accumulated as rationals.  This makes pooling
independent of voxel order and of how work was partitioned, bit for bit,
and lets ECE be evaluated in exact arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .tensor_io import ValidationError

DEFAULT_BINS = 10

FP_BITS = 30
FP_ONE = 1 << FP_BITS  # confidence accumulation grid (quantization < 1e-9)

UNDERCONFIDENT = "underconfident"
OVERCONFIDENT = "overconfident"
WELL_CALIBRATED = "well_calibrated"


@dataclass
class ReliabilityBins:
    """Equal-width reliability-diagram bins over [0, 1].

    counts and sum_pos are exact integers; sum_conf entries are exact
    Fractions (multiples of 2**-30 when built from float confidences).
    """

    n_bins: int
    counts: list[int]
    sum_conf: list[Fraction]
    sum_pos: list[int]

    @classmethod
    def empty(cls, n_bins: int = DEFAULT_BINS) -> "ReliabilityBins":
        if n_bins < 1 or n_bins > 1_000_000:
            raise ValidationError("n_bins must lie in [1, 1e6]")
        return cls(
            n_bins=n_bins,
            counts=[0] * n_bins,
            sum_conf=[Fraction(0)] * n_bins,
            sum_pos=[0] * n_bins,
        )

    @property
    def total(self) -> int:
        return sum(self.counts)

    def edges(self, b: int) -> tuple[float, float]:
        return b / self.n_bins, (b + 1) / self.n_bins

    def validate(self) -> None:
        for b in range(self.n_bins):
            lo, hi = Fraction(b, self.n_bins), Fraction(b + 1, self.n_bins)
            if not (0 <= self.sum_pos[b] <= self.counts[b]):
                raise ValidationError(f"bin {b}: positive count outside [0, count]")
            if self.counts[b] and not (lo * self.counts[b] <= self.sum_conf[b] <= hi * self.counts[b]):
                raise ValidationError(f"bin {b}: confidence sum outside bin range")
            if self.counts[b] == 0 and self.sum_conf[b] != 0:
                raise ValidationError(f"bin {b}: empty bin with nonzero confidence sum")


def bin_predictions(
    confidences,
    labels,
    n_bins: int = DEFAULT_BINS,
    mask: np.ndarray | None = None,
) -> ReliabilityBins:
    """Bin voxel confidences against binary ground truth.

    A confidence c lands in bin floor(c * n_bins); c = 1.0 goes to the last
    bin.  Accepts float arrays (fast path, 2**-30 fixed-point accumulation)
    or sequences of exact rationals (exact path).
    """
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    conf = np.asarray(confidences)
    y = np.asarray(labels)
    if conf.shape != y.shape:
        raise ValidationError(f"confidence dims {conf.shape} != label dims {y.shape}")
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if m.shape != conf.shape:
            raise ValidationError(f"mask dims {m.shape} != confidence dims {conf.shape}")
        conf = conf[m]
        y = y[m]
    if conf.dtype == object:
        return _bin_exact(conf.ravel().tolist(), y.ravel().tolist(), n_bins)
    return _bin_float(conf, y, n_bins)


def _bin_float(conf: np.ndarray, y: np.ndarray, n_bins: int) -> ReliabilityBins:
    c = conf.astype(np.float64, copy=False).ravel()
    yv = y.ravel()
    if not _is_binary(yv):
        raise ValidationError("labels must be binary {0, 1}")
    if c.size and (not np.isfinite(c).all() or c.min() < 0.0 or c.max() > 1.0):
        raise ValidationError("confidence values must lie in [0, 1]")
    bins = ReliabilityBins.empty(n_bins)
    if c.size == 0:
        return bins
    # c * 2**30 is exact (power-of-two scale); rint then gives the grid index
    k = np.rint(c * FP_ONE).astype(np.int64)
    idx = np.minimum((k * n_bins) >> FP_BITS, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    pos = np.bincount(idx, weights=(yv == 1).astype(np.float64), minlength=n_bins)
    # split the grid units so per-bin bincount sums stay exact in float64
    hi = np.bincount(idx, weights=(k >> 15).astype(np.float64), minlength=n_bins)
    lo = np.bincount(idx, weights=(k & 0x7FFF).astype(np.float64), minlength=n_bins)
    bins.counts = [int(v) for v in counts]
    bins.sum_pos = [int(v) for v in pos]
    bins.sum_conf = [
        Fraction((int(h) << 15) + int(l), FP_ONE) for h, l in zip(hi, lo)
    ]
    return bins


def _bin_exact(conf: list, y: list, n_bins: int) -> ReliabilityBins:
    bins = ReliabilityBins.empty(n_bins)
    sum_conf: list = [Fraction(0)] * n_bins
    for c, label in zip(conf, y):
        if label not in (0, 1):
            raise ValidationError("labels must be binary {0, 1}")
        if not (0 <= c <= 1):
            raise ValidationError("confidence values must lie in [0, 1]")
        b = min(int(c * n_bins), n_bins - 1)
        bins.counts[b] += 1
        bins.sum_pos[b] += int(label)
        sum_conf[b] = sum_conf[b] + c
    bins.sum_conf = [Fraction(s) for s in sum_conf]
    return bins


def _is_binary(y: np.ndarray) -> bool:
    if y.size == 0:
        return True
    if y.dtype == np.uint8 or y.dtype == bool:
        return int(y.max()) <= 1
    return bool(np.isin(y, (0, 1)).all())


def merge_bins(parts: Sequence[ReliabilityBins]) -> ReliabilityBins:
    """Pool bins by element-wise summation; exact and order-independent."""
    if not parts:
        raise ValidationError("merge_bins needs at least one part")
    n_bins = parts[0].n_bins
    merged = ReliabilityBins.empty(n_bins)
    for part in parts:
        if part.n_bins != n_bins:
            raise ValidationError(
                f"cannot merge bins with different schemes ({part.n_bins} vs {n_bins})"
            )
        for b in range(n_bins):
            merged.counts[b] += part.counts[b]
            merged.sum_pos[b] += part.sum_pos[b]
            merged.sum_conf[b] = merged.sum_conf[b] + part.sum_conf[b]
    return merged


def ece_exact(bins: ReliabilityBins) -> Fraction:
    """ECE as an exact rational: sum_b |conf_sum_b - pos_sum_b| / N.

    Equivalent to the count-weighted mean absolute confidence-accuracy gap,
    since count_b * |mean_conf_b - accuracy_b| = |conf_sum_b - pos_sum_b|.
    """
    n = bins.total
    if n == 0:
        raise ValidationError("cannot compute ECE over empty bins")
    total = Fraction(0)
    for count, sc, sp in zip(bins.counts, bins.sum_conf, bins.sum_pos):
        if count:
            total += abs(sc - sp)
    return total / n


def ece(bins: ReliabilityBins) -> float:
    return float(ece_exact(bins))


def signed_gap_exact(bins: ReliabilityBins) -> Fraction:
    """Count-weighted mean of (confidence - accuracy); positive = overconfident."""
    n = bins.total
    if n == 0:
        raise ValidationError("cannot compute gap over empty bins")
    return (sum(bins.sum_conf, Fraction(0)) - sum(bins.sum_pos)) / n


def signed_gap(bins: ReliabilityBins) -> float:
    return float(signed_gap_exact(bins))


def reliability_rows(bins: ReliabilityBins) -> list[tuple[float, float, int, float, float]]:
    """Occupied-bin rows (bin_lower, bin_upper, count, mean_confidence, accuracy)."""
    rows = []
    for b in range(bins.n_bins):
        count = bins.counts[b]
        if count == 0:
            continue
        lo, hi = bins.edges(b)
        rows.append(
            (lo, hi, count, float(bins.sum_conf[b] / count), bins.sum_pos[b] / count)
        )
    return rows


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    bins: ReliabilityBins
    level: str  # "dataset" or "subject"
    signed_gap: float
    subject_id: str | None = None


def make_report(
    bins: ReliabilityBins, level: str, subject_id: str | None = None
) -> CalibrationReport:
    if level not in ("dataset", "subject"):
        raise ValidationError(f"unknown report level '{level}'")
    return CalibrationReport(
        ece=ece(bins),
        bins=bins,
        level=level,
        signed_gap=signed_gap(bins),
        subject_id=subject_id,
    )


@dataclass(frozen=True)
class CalibrationClass:
    label: str  # underconfident / overconfident / well_calibrated
    epsilon: float


def classify_subject_calibration(
    report: CalibrationReport, epsilon: float = 0.02
) -> CalibrationClass:
    """Classify one subject by its signed gap: > eps over, < -eps under."""
    if report.level != "subject":
        raise ValidationError("classification applies to subject-level reports")
    if report.signed_gap > epsilon:
        label = OVERCONFIDENT
    elif report.signed_gap < -epsilon:
        label = UNDERCONFIDENT
    else:
        label = WELL_CALIBRATED
    return CalibrationClass(label=label, epsilon=epsilon)
