"""Reliability binning, ECE, pooling exactness, subject classification."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from seguq.calibration import (
    OVERCONFIDENT,
    UNDERCONFIDENT,
    WELL_CALIBRATED,
    CalibrationReport,
    ReliabilityBins,
    bin_predictions,
    classify_subject_calibration,
    ece,
    ece_exact,
    make_report,
    merge_bins,
    reliability_rows,
    signed_gap,
)
from seguq.tensor_io import ValidationError

probs = st.floats(0.0, 1.0, allow_nan=False)

HAND_CONF = np.array([0.95, 0.85, 0.15, 0.05])
HAND_LABELS = np.array([1, 0, 1, 0], dtype=np.uint8)


def test_hand_binning():
    bins = bin_predictions(HAND_CONF, HAND_LABELS, n_bins=10)
    assert bins.counts == [1, 1, 0, 0, 0, 0, 0, 0, 1, 1]
    assert bins.sum_pos == [0, 1, 0, 0, 0, 0, 0, 0, 0, 1]
    bins.validate()


def test_hand_case_ece():
    bins = bin_predictions(HAND_CONF, HAND_LABELS, n_bins=10)
    # (0.05 + 0.85 + 0.85 + 0.05) / 4, up to the 2**-30 accumulation grid
    assert ece(bins) == pytest.approx(0.45, abs=1e-9)
    exact = bin_predictions(
        np.array([Fraction(19, 20), Fraction(17, 20), Fraction(3, 20), Fraction(1, 20)], dtype=object),
        [1, 0, 1, 0],
        n_bins=10,
    )
    assert ece_exact(exact) == Fraction(9, 20)


def test_fully_confident_correct_predictions():
    bins = bin_predictions(np.ones(50), np.ones(50, dtype=np.uint8))
    assert bins.counts[-1] == 50
    assert sum(bins.counts) == 50
    assert ece(bins) == 0.0
    rows = reliability_rows(bins)
    assert rows == [(0.9, 1.0, 50, 1.0, 1.0)]


def test_confidence_one_does_not_overflow_bin_index():
    for n_bins in (1, 3, 10, 17):
        bins = bin_predictions(np.array([1.0]), np.array([1], dtype=np.uint8), n_bins)
        assert bins.counts[-1] == 1


def test_zero_ece_when_bin_confidence_matches_accuracy():
    conf = np.array([0.5, 0.5, 0.25, 0.25, 0.25, 0.25])
    labels = np.array([1, 0, 1, 0, 0, 0], dtype=np.uint8)
    assert ece(bin_predictions(conf, labels)) == 0.0


def test_merge_identity_and_commutativity():
    x = bin_predictions(HAND_CONF, HAND_LABELS)
    empty = ReliabilityBins.empty(10)
    assert merge_bins([x, empty]) == x
    y = bin_predictions(np.array([0.3, 0.6]), np.array([0, 1], dtype=np.uint8))
    assert merge_bins([x, y]) == merge_bins([y, x])


def test_merge_rejects_mismatched_schemes():
    a = ReliabilityBins.empty(10)
    b = ReliabilityBins.empty(5)
    with pytest.raises(ValidationError, match="scheme"):
        merge_bins([a, b])


@given(
    hnp.arrays(np.float64, st.integers(0, 60), elements=probs),
    hnp.arrays(np.float64, st.integers(0, 60), elements=probs),
    st.integers(1, 12),
)
@settings(max_examples=200)
def test_merge_equals_concatenated_binning(ca, cb, n_bins):
    """Pooling exactness: per-part bins summed == bins over all voxels, exactly."""
    ya = (ca > 0.5).astype(np.uint8)
    yb = (cb > 0.5).astype(np.uint8)
    merged = merge_bins([bin_predictions(ca, ya, n_bins), bin_predictions(cb, yb, n_bins)])
    concat = bin_predictions(np.concatenate([ca, cb]), np.concatenate([ya, yb]), n_bins)
    assert merged == concat
    if merged.total:
        assert ece_exact(merged) == ece_exact(concat)


@given(hnp.arrays(np.float64, st.integers(1, 80), elements=probs), st.randoms())
@settings(max_examples=150)
def test_permutation_invariance(conf, rnd):
    labels = (conf * 7 % 1 > 0.5).astype(np.uint8)
    order = list(range(conf.size))
    rnd.shuffle(order)
    a = bin_predictions(conf, labels)
    b = bin_predictions(conf[order], labels[order])
    assert a == b
    assert ece_exact(a) == ece_exact(b)


@given(hnp.arrays(np.float64, st.integers(1, 80), elements=probs))
@settings(max_examples=150)
def test_ece_bounds_and_gap_inequality(conf):
    labels = (conf >= 0.25).astype(np.uint8)
    bins = bin_predictions(conf, labels)
    bins.validate()
    report = make_report(bins, "subject", "s")
    assert 0.0 <= report.ece <= 1.0
    assert report.ece >= abs(report.signed_gap) - 1e-15


def test_ece_over_empty_bins_is_an_error():
    with pytest.raises(ValidationError, match="empty"):
        ece(ReliabilityBins.empty(10))


def test_binning_rejects_bad_inputs():
    with pytest.raises(ValidationError, match="dims"):
        bin_predictions(np.zeros(3), np.zeros(4, dtype=np.uint8))
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        bin_predictions(np.array([1.5]), np.array([1], dtype=np.uint8))
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        bin_predictions(np.array([np.nan]), np.array([1], dtype=np.uint8))
    with pytest.raises(ValidationError, match="binary"):
        bin_predictions(np.array([0.5]), np.array([2]))


def test_mask_restricts_binning():
    conf = np.array([0.1, 0.9, 0.9])
    labels = np.array([0, 1, 0], dtype=np.uint8)
    mask = np.array([True, True, False])
    bins = bin_predictions(conf, labels, mask=mask)
    assert bins.total == 2


def _report(gap: float) -> CalibrationReport:
    bins = ReliabilityBins.empty(10)
    return CalibrationReport(ece=abs(gap), bins=bins, level="subject", signed_gap=gap)


def test_classification_rule():
    assert classify_subject_calibration(_report(0.0), 0.02).label == WELL_CALIBRATED
    assert classify_subject_calibration(_report(-0.05), 0.02).label == UNDERCONFIDENT
    assert classify_subject_calibration(_report(0.05), 0.02).label == OVERCONFIDENT
    assert classify_subject_calibration(_report(0.02), 0.02).label == WELL_CALIBRATED


def test_classification_requires_subject_level():
    bins = ReliabilityBins.empty(10)
    dataset = CalibrationReport(ece=0.0, bins=bins, level="dataset", signed_gap=0.0)
    with pytest.raises(ValidationError):
        classify_subject_calibration(dataset)


def test_signed_gap_value():
    conf = np.array([0.8, 0.8, 0.8, 0.8])
    labels = np.array([1, 1, 0, 0], dtype=np.uint8)
    bins = bin_predictions(conf, labels)
    assert signed_gap(bins) == pytest.approx(0.3, abs=1e-9)
    assert ece(bins) == pytest.approx(0.3, abs=1e-9)
