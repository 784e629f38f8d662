"""Voxel-wise uncertainty maps derived from each method's raw inputs.

Five input kinds are supported: a single probability map, MC-dropout sample
stacks, ensemble stacks, aleatoric (prediction + variance) pairs, and
auxiliary error-predictor outputs (labels + raw uncertainty).  Probability
maps carry the foreground probability of a binary task; uncertainty maps are
normalized to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor_io
from .tensor_io import MethodInput, SubjectEntry, ValidationError

LOG2 = float(np.log(2.0))
_LOG_EPS = 1e-12  # clamp applied inside the log only; endpoints still map to exact 0


def normalized_entropy(prob: np.ndarray) -> np.ndarray:
    """Binary entropy of the foreground probability, normalized to [0, 1].

    H = -(p log p + (1-p) log(1-p)) / log 2 with 0 log 0 = 0, so p in {0, 1}
    gives exactly 0.0 and p = 0.5 gives exactly 1.0.
    """
    p = np.asarray(prob, dtype=np.float64)
    q = 1.0 - p
    h = -(p * np.log(np.clip(p, _LOG_EPS, None)) + q * np.log(np.clip(q, _LOG_EPS, None)))
    h /= LOG2
    # the two terms are each <= 0 pre-negation; maximum() only rewrites -0.0
    return np.maximum(h, 0.0)


def mean_probability(stack: np.ndarray) -> np.ndarray:
    """Voxel-wise mean over the leading sample axis of a probability stack."""
    s = np.asarray(stack)
    if s.ndim < 2:
        raise ValidationError("sample stack needs a leading sample axis")
    if s.shape[0] < 1:
        raise ValidationError("sample stack must hold at least one sample")
    mean = s.mean(axis=0, dtype=np.float64)
    return np.clip(mean, 0.0, 1.0)


def normalize_subjectwise(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize one subject's nonnegative field to [0, 1].

    A constant field maps to all zeros (no discriminative uncertainty).
    Idempotent: normalizing an already-normalized field is a no-op.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot normalize an empty field")
    if arr.min() < 0.0:
        raise ValidationError("subject-wise normalization expects values >= 0")
    return _minmax(arr, float(arr.min()), float(arr.max()))


def normalize_variance_global(variances: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Min-max normalize variance fields using global extrema over all subjects."""
    if len(variances) == 0:
        raise ValidationError("normalize_variance_global needs at least one field")
    lo, hi = variance_extrema(variances)
    return [normalize_variance_with(v, lo, hi) for v in variances]


def variance_extrema(variances: Iterable[np.ndarray]) -> tuple[float, float]:
    """Global (min, max) over every voxel of every field; order-independent."""
    lo = np.inf
    hi = -np.inf
    seen = False
    for v in variances:
        arr = np.asarray(v, dtype=np.float64)
        if arr.size == 0:
            continue
        if arr.min() < 0.0:
            raise ValidationError("variance fields must be >= 0")
        seen = True
        lo = min(lo, float(arr.min()))
        hi = max(hi, float(arr.max()))
    if not seen:
        raise ValidationError("no voxels to normalize over")
    return lo, hi


def normalize_variance_with(variance: np.ndarray, lo: float, hi: float) -> np.ndarray:
    arr = np.asarray(variance, dtype=np.float64)
    return _minmax(arr, lo, hi)


def _minmax(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(arr)
    out = (arr - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def uncertainty_to_confidence(labels: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Translate uncertainty q into a foreground confidence given predicted labels.

    c = y (1 - 0.5 q) + (1 - y) (0.5 q).  q = 0 is full confidence in the
    predicted class; q = 1 collapses to 0.5 for either label.  y is the
    predicted label, never the ground truth.
    """
    y = np.asarray(labels)
    qq = np.asarray(q, dtype=np.float64)
    if y.shape != qq.shape:
        raise ValidationError(f"label dims {y.shape} != uncertainty dims {qq.shape}")
    if qq.size and (not np.isfinite(qq).all() or qq.min() < 0.0 or qq.max() > 1.0):
        raise ValidationError("uncertainty values must lie in [0, 1]")
    return np.where(y == 1, 1.0 - 0.5 * qq, 0.5 * qq)


def predict_labels(prob: np.ndarray) -> np.ndarray:
    """Threshold a probability map at 0.5; ties go to foreground."""
    return (np.asarray(prob) >= 0.5).astype(np.uint8)


@dataclass(frozen=True)
class AleatoricStats:
    """Dataset-wide variance extrema; required before normalizing any subject."""

    lo: float
    hi: float


def collect_aleatoric_stats(subjects: Iterable[SubjectEntry], method: str) -> AleatoricStats:
    """First pass over the dataset for an aleatoric method's variance extrema."""

    def fields():
        for subject in subjects:
            mi = _method_input(subject, method)
            yield tensor_io.read_nonnegative_map(mi.path("variance"))

    lo, hi = variance_extrema(fields())
    return AleatoricStats(lo=lo, hi=hi)


@dataclass(frozen=True)
class MethodOutput:
    """Derived per-subject view of one method: what it predicts and how unsure it is.

    `confidence` is the foreground probability used for calibration: the fused
    probability map where one exists, otherwise the translated uncertainty.
    """

    labels: np.ndarray
    uncertainty: np.ndarray
    confidence: np.ndarray
    prob: np.ndarray | None = None


def derive_method_outputs(
    subject: SubjectEntry,
    method: str,
    aleatoric_stats: AleatoricStats | None = None,
) -> MethodOutput:
    """Dispatch one subject + method to its derivation strategy.

    single_prob and the two stack kinds fuse to a probability map and take its
    normalized entropy as uncertainty.  aleatoric normalizes the variance with
    dataset-wide extrema (pass aleatoric_stats from collect_aleatoric_stats
    first).  auxiliary normalizes its raw uncertainty subject-wise.  Methods
    without a probability map get their calibration confidence through
    uncertainty_to_confidence on the predicted labels.
    """
    mi = _method_input(subject, method)
    if mi.kind == "single_prob":
        prob = tensor_io.read_prob_map(mi.path("prob")).astype(np.float64)
        return _from_prob(prob)
    if mi.kind in ("sample_stack", "ensemble_stack"):
        stack = tensor_io.read_prob_map(mi.path("stack"))
        return _from_prob(mean_probability(stack))
    if mi.kind == "aleatoric":
        if aleatoric_stats is None:
            raise ValidationError(
                f"method '{method}': aleatoric normalization needs dataset statistics; "
                "run collect_aleatoric_stats first"
            )
        prob = tensor_io.read_prob_map(mi.path("prob")).astype(np.float64)
        variance = tensor_io.read_nonnegative_map(mi.path("variance"))
        q = normalize_variance_with(variance, aleatoric_stats.lo, aleatoric_stats.hi)
        labels = predict_labels(prob)
        return MethodOutput(
            labels=labels,
            uncertainty=q,
            confidence=uncertainty_to_confidence(labels, q),
            prob=prob,
        )
    if mi.kind == "auxiliary":
        labels = tensor_io.read_label_map(mi.path("labels"))
        raw = tensor_io.read_nonnegative_map(mi.path("uncertainty"))
        if labels.shape != raw.shape:
            raise ValidationError(
                f"method '{method}': label dims {labels.shape} != uncertainty dims {raw.shape}"
            )
        q = normalize_subjectwise(raw)
        return MethodOutput(
            labels=labels,
            uncertainty=q,
            confidence=uncertainty_to_confidence(labels, q),
        )
    raise ValidationError(f"unknown method kind '{mi.kind}'")


def _from_prob(prob: np.ndarray) -> MethodOutput:
    return MethodOutput(
        labels=predict_labels(prob),
        uncertainty=normalized_entropy(prob),
        confidence=prob,
        prob=prob,
    )


def _method_input(subject: SubjectEntry, method: str) -> MethodInput:
    try:
        return subject.methods[method]
    except KeyError:
        raise ValidationError(
            f"subject '{subject.subject_id}' has no method '{method}'"
        ) from None
