"""Synthetic subjects with controllable calibration and error structure.

Ground truth is sampled voxel-wise from a hidden true probability field, so
the reported map is perfectly calibrated exactly when the calibration curve
is the identity; shift and power curves produce over/underconfident subjects
with known gaps.  All randomness comes from the counter-based Philox
generator keyed by (seed, subject index, channel), with the voxel index as
the counter position, so generation is reproducible bit for bit and
independent of scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor_io
from .tensor_io import ValidationError

# channel sub-keys of the per-subject stream
_CH_BASE = 0
_CH_GT = 1
_CH_STACK = 2
_CH_ENSEMBLE = 3
_CH_NOISE = 4


@dataclass(frozen=True)
class Curve:
    """Calibration curve applied to the true probability before reporting."""

    kind: str  # identity | shift | power
    delta: float = 0.0
    gamma: float = 1.0

    @classmethod
    def identity(cls) -> "Curve":
        return cls(kind="identity")

    @classmethod
    def shift(cls, delta: float) -> "Curve":
        return cls(kind="shift", delta=float(delta))

    @classmethod
    def power(cls, gamma: float) -> "Curve":
        if gamma <= 0:
            raise ValidationError("power curve needs gamma > 0")
        return cls(kind="power", gamma=float(gamma))

    def apply(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.asarray(p, dtype=np.float64).copy()
        if self.kind == "shift":
            return np.clip(np.asarray(p, dtype=np.float64) + self.delta, 0.0, 1.0)
        if self.kind == "power":
            return np.power(np.asarray(p, dtype=np.float64), self.gamma)
        raise ValidationError(f"unknown curve kind '{self.kind}'")

    @classmethod
    def from_dict(cls, doc: dict) -> "Curve":
        kind = doc.get("kind", "identity")
        if kind == "identity":
            return cls.identity()
        if kind == "shift":
            return cls.shift(doc["delta"])
        if kind == "power":
            return cls.power(doc["gamma"])
        raise ValidationError(f"unknown curve kind '{kind}'")

    def to_dict(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "shift":
            return {"kind": "shift", "delta": self.delta}
        return {"kind": "power", "gamma": self.gamma}


@dataclass(frozen=True)
class SynthConfig:
    dims: tuple[int, ...]
    foreground_prior: float = 0.5
    curve: Curve = field(default_factory=Curve.identity)
    n_samples: int = 0
    seed: int = 0
    subject_index: int = 0
    jitter: float = 0.05
    blur_sigma: float = 0.0

    def __post_init__(self):
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValidationError("dims must be positive")
        if not (0.0 < self.foreground_prior < 1.0):
            raise ValidationError("foreground_prior must lie in (0, 1)")
        if self.n_samples < 0:
            raise ValidationError("n_samples must be >= 0")
        if self.seed < 0 or self.subject_index < 0:
            raise ValidationError("seed and subject_index must be >= 0")
        if self.jitter < 0:
            raise ValidationError("jitter must be >= 0")


@dataclass(frozen=True)
class SynthSubject:
    ground_truth: np.ndarray  # uint8, drawn per voxel from true_prob
    prob: np.ndarray  # what the synthetic "model" reports
    true_prob: np.ndarray  # hidden oracle field
    stack: np.ndarray | None = None


def _rng(seed: int, subject_index: int, channel: int) -> np.random.Generator:
    key = np.array([seed, (subject_index << 8) | channel], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate_subject(config: SynthConfig) -> SynthSubject:
    """Generate one subject; deterministic in (seed, subject_index, config)."""
    base = _base_field(config)
    gt = _rng(config.seed, config.subject_index, _CH_GT).random(config.dims) < base
    reported = config.curve.apply(base)
    stack = None
    if config.n_samples > 0:
        stack = _stack_around(reported, config, _CH_STACK)
    return SynthSubject(
        ground_truth=gt.astype(np.uint8),
        prob=reported,
        true_prob=base,
        stack=stack,
    )


def generate_sample_stack(config: SynthConfig) -> np.ndarray:
    """The sample stack alone; bit-identical to generate_subject(config).stack."""
    if config.n_samples < 1:
        raise ValidationError("generate_sample_stack needs n_samples >= 1")
    reported = config.curve.apply(_base_field(config))
    return _stack_around(reported, config, _CH_STACK)


def generate_masking_pair(
    delta: float, dims: tuple[int, ...] = (256, 256), seed: int = 0
) -> tuple[SynthSubject, SynthSubject]:
    """An overconfident/underconfident subject pair whose pooled bins are calibrated.

    Both subjects report the same confidence field c (drawn uniformly on
    [delta, 1-delta] so no curve clipping occurs); subject A's truth follows
    c - delta (shift(+delta) reporting), subject B's follows c + delta.  The
    per-bin accuracies of the pooled pair average to c, so the merged bins
    are calibrated while each subject is off by about delta.
    """
    if not (0.0 < delta <= 0.3):
        raise ValidationError("delta must lie in (0, 0.3]")
    u = _rng(seed, 0, _CH_BASE).random(dims)
    conf = delta + (1.0 - 2.0 * delta) * u
    true_a = conf - delta
    true_b = conf + delta
    gt_a = _rng(seed, 0, _CH_GT).random(dims) < true_a
    gt_b = _rng(seed, 1, _CH_GT).random(dims) < true_b
    subject_a = SynthSubject(
        ground_truth=gt_a.astype(np.uint8), prob=conf.copy(), true_prob=true_a
    )
    subject_b = SynthSubject(
        ground_truth=gt_b.astype(np.uint8), prob=conf.copy(), true_prob=true_b
    )
    return subject_a, subject_b


def _base_field(config: SynthConfig) -> np.ndarray:
    rng = _rng(config.seed, config.subject_index, _CH_BASE)
    prior = config.foreground_prior
    base = rng.beta(2.0 * prior, 2.0 * (1.0 - prior), size=config.dims)
    if config.blur_sigma > 0:
        base = np.clip(_gaussian_blur(base, config.blur_sigma), 0.0, 1.0)
    return base


def _stack_around(base: np.ndarray, config: SynthConfig, channel: int) -> np.ndarray:
    rng = _rng(config.seed, config.subject_index, channel)
    shape = (config.n_samples,) + tuple(config.dims)
    # float32 end to end: a BraTS-sized 20-sample stack is ~700 MB as is
    samples = rng.standard_normal(shape, dtype=np.float32)
    samples *= np.float32(config.jitter)
    samples += base.astype(np.float32)[None, ...]
    np.clip(samples, 0.0, 1.0, out=samples)
    return samples


def _gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = field.astype(np.float64)
    for axis in range(out.ndim):
        out = _convolve_axis(out, kernel, axis)
    return out


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    shape = moved.shape
    flat = moved.reshape(-1, shape[-1])
    pad = len(kernel) // 2
    padded = np.pad(flat, ((0, 0), (pad, pad)), mode="edge")
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        out[i] = np.convolve(padded[i], kernel, mode="valid")
    return np.moveaxis(out.reshape(shape), -1, axis)


# -- dataset emission for the `synth` CLI subcommand --------------------------

KNOWN_METHODS = {
    "baseline": "single_prob",
    "mc": "sample_stack",
    "ensemble": "ensemble_stack",
    "aleatoric": "aleatoric",
    "auxiliary": "auxiliary",
}


@dataclass(frozen=True)
class SynthDatasetConfig:
    dataset_name: str = "synthetic"
    n_subjects: int = 3
    dims: tuple[int, ...] = (64, 64)
    foreground_prior: float = 0.5
    curve: Curve = field(default_factory=Curve.identity)
    per_subject_curves: tuple[Curve, ...] | None = None
    t_samples: int = 20
    k_models: int = 10
    jitter: float = 0.05
    blur_sigma: float = 0.0
    seed: int = 0
    methods: tuple[str, ...] = ("baseline", "mc")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthDatasetConfig":
        kwargs = dict(doc)
        if "dims" in kwargs:
            kwargs["dims"] = tuple(int(d) for d in kwargs["dims"])
        if "curve" in kwargs:
            kwargs["curve"] = Curve.from_dict(kwargs["curve"])
        if "per_subject_curves" in kwargs and kwargs["per_subject_curves"] is not None:
            kwargs["per_subject_curves"] = tuple(
                Curve.from_dict(c) for c in kwargs["per_subject_curves"]
            )
        if "methods" in kwargs:
            kwargs["methods"] = tuple(kwargs["methods"])
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown synth config fields: {sorted(unknown)}")
        return cls(**kwargs)


def write_synth_dataset(config: SynthDatasetConfig, out_dir) -> Path:
    """Write tensors plus a manifest for a synthetic dataset; returns manifest path."""
    if config.n_subjects < 1:
        raise ValidationError("n_subjects must be >= 1")
    bad = [m for m in config.methods if m not in KNOWN_METHODS]
    if bad:
        raise ValidationError(f"unknown synth methods {bad}; choose from {sorted(KNOWN_METHODS)}")
    if not config.methods:
        raise ValidationError("at least one method is required")
    if config.per_subject_curves is not None and len(config.per_subject_curves) != config.n_subjects:
        raise ValidationError("per_subject_curves must list one curve per subject")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects = []
    for i in range(config.n_subjects):
        curve = (
            config.per_subject_curves[i]
            if config.per_subject_curves is not None
            else config.curve
        )
        subj_cfg = SynthConfig(
            dims=config.dims,
            foreground_prior=config.foreground_prior,
            curve=curve,
            n_samples=config.t_samples if "mc" in config.methods else 0,
            seed=config.seed,
            subject_index=i,
            jitter=config.jitter,
            blur_sigma=config.blur_sigma,
        )
        subject = generate_subject(subj_cfg)
        sid = f"subj{i:03d}"
        sdir = out / sid
        sdir.mkdir(exist_ok=True)
        tensor_io.write_tensor(subject.ground_truth, sdir / "gt.suqt")
        methods = {}
        reported32 = subject.prob.astype(np.float32)
        if "baseline" in config.methods:
            tensor_io.write_tensor(reported32, sdir / "prob.suqt")
            methods["baseline"] = {"kind": "single_prob", "prob": f"{sid}/prob.suqt"}
        if "mc" in config.methods:
            tensor_io.write_tensor(subject.stack, sdir / "mc_stack.suqt")
            methods["mc"] = {"kind": "sample_stack", "stack": f"{sid}/mc_stack.suqt"}
        if "ensemble" in config.methods:
            ens_cfg = replace(subj_cfg, n_samples=config.k_models)
            ens = _stack_around(subject.prob, ens_cfg, _CH_ENSEMBLE)
            tensor_io.write_tensor(ens, sdir / "ensemble_stack.suqt")
            methods["ensemble"] = {
                "kind": "ensemble_stack",
                "stack": f"{sid}/ensemble_stack.suqt",
            }
        if "aleatoric" in config.methods:
            # per-subject gain so that only dataset-wide normalization is correct
            margin = 0.5 - np.abs(subject.prob - 0.5)
            variance = (2.0 * margin * (1.0 + i)).astype(np.float32)
            tensor_io.write_tensor(reported32, sdir / "alea_prob.suqt")
            tensor_io.write_tensor(variance, sdir / "alea_var.suqt")
            methods["aleatoric"] = {
                "kind": "aleatoric",
                "prob": f"{sid}/alea_prob.suqt",
                "variance": f"{sid}/alea_var.suqt",
            }
        if "auxiliary" in config.methods:
            labels = (subject.prob >= 0.5).astype(np.uint8)
            noise = _rng(config.seed, i, _CH_NOISE).random(config.dims)
            raw = (2.0 * (0.5 - np.abs(subject.prob - 0.5)) * 3.0 + 0.1 * noise).astype(
                np.float32
            )
            tensor_io.write_tensor(labels, sdir / "aux_labels.suqt")
            tensor_io.write_tensor(raw, sdir / "aux_unc.suqt")
            methods["auxiliary"] = {
                "kind": "auxiliary",
                "labels": f"{sid}/aux_labels.suqt",
                "uncertainty": f"{sid}/aux_unc.suqt",
            }
        subjects.append(
            {"subject_id": sid, "ground_truth": f"{sid}/gt.suqt", "methods": methods}
        )

    manifest = {
        "dataset_name": config.dataset_name,
        "declared_T": config.t_samples,
        "declared_K": config.k_models,
        "subjects": subjects,
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path
