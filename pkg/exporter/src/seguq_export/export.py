"""Export jobs: run a model over images and write evaluation-ready files.

One run exports one uncertainty method (one mode) for every image/ground
truth pair and writes or extends `manifest.json` in the output directory, so
several runs with different modes build up a multi-method dataset.  Exports
are deterministic given model weights, the seed, and the input files.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import load_model
from .tensorfmt import ExportError, read_tensor, write_tensor

MODES = ("single", "mc", "ensemble", "aleatoric", "auxiliary")

MODE_KINDS = {
    "single": "single_prob",
    "mc": "sample_stack",
    "ensemble": "ensemble_stack",
    "aleatoric": "aleatoric",
    "auxiliary": "auxiliary",
}


@dataclass(frozen=True)
class ExportJob:
    mode: str
    model_refs: tuple[str, ...]
    t: int = 20
    k: int = 10
    seed: int = 0
    dataset_name: str = "exported"
    method_name: str | None = None
    error_model_ref: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ExportError(f"unknown mode '{self.mode}'; choose from {MODES}")
        if self.t < 1 or self.k < 1:
            raise ExportError("t and k must be >= 1")
        if self.mode == "ensemble":
            if len(self.model_refs) != self.k:
                raise ExportError(
                    f"ensemble mode needs k={self.k} model references, "
                    f"got {len(self.model_refs)}"
                )
        elif len(self.model_refs) != 1:
            raise ExportError(f"mode '{self.mode}' takes exactly one model reference")
        if self.mode == "auxiliary" and not self.error_model_ref:
            raise ExportError("auxiliary mode needs --error-model")

    @property
    def method(self) -> str:
        return self.method_name or self.mode


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
    elif path.suffix == ".suqt":
        arr = read_tensor(path)
    else:
        raise ExportError(f"{path}: unsupported image format (use .npy or .suqt)")
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ExportError(f"{path}: non-finite image values")
    return arr


def load_labels(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.asarray(np.load(path))
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        if arr.dtype.kind not in "iu":
            raise ExportError(f"{path}: ground truth must be integer or boolean")
        arr = arr.astype(np.uint8)
    elif path.suffix == ".suqt":
        arr = read_tensor(path)
        if arr.dtype != np.uint8:
            raise ExportError(f"{path}: ground truth tensor must be uint8")
    else:
        raise ExportError(f"{path}: unsupported label format (use .npy or .suqt)")
    if arr.size and arr.max() > 1:
        raise ExportError(f"{path}: ground truth must be binary")
    return arr


def run_model(model, image: np.ndarray, rng=None) -> np.ndarray:
    out = model(image, rng) if rng is not None else model(image)
    return _to_probabilities(model, out, image.shape)


def _to_probabilities(model, out, shape) -> np.ndarray:
    probs = np.asarray(out, dtype=np.float64)
    if probs.shape != shape:
        raise ExportError(f"model output shape {probs.shape} != image shape {shape}")
    if not np.isfinite(probs).all():
        raise ExportError("model produced non-finite outputs")
    if getattr(model, "outputs_logits", False):
        probs = 1.0 / (1.0 + np.exp(-probs))
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ExportError("model probabilities fall outside [0, 1]")
    return probs


def _rng(seed: int, subject_index: int, sample: int) -> np.random.Generator:
    key = np.array([seed, (subject_index << 16) | sample], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def export_subject(job: ExportJob, subject_index: int, image_path, gt_path, out_dir) -> dict:
    """Run one subject through the job's mode; returns its manifest entry."""
    image = load_image(image_path)
    gt = load_labels(gt_path)
    if gt.shape != image.shape:
        raise ExportError(
            f"{image_path}: ground truth shape {gt.shape} != image shape {image.shape}"
        )
    sid = Path(image_path).stem
    sdir = Path(out_dir) / sid
    sdir.mkdir(parents=True, exist_ok=True)
    write_tensor(gt, sdir / "gt.suqt")

    method = job.method
    entry: dict = {"subject_id": sid, "ground_truth": f"{sid}/gt.suqt", "methods": {}}
    if job.mode == "single":
        probs = run_model(load_model(job.model_refs[0]), image)
        write_tensor(probs.astype(np.float32), sdir / f"{method}_prob.suqt")
        entry["methods"][method] = {
            "kind": "single_prob",
            "prob": f"{sid}/{method}_prob.suqt",
        }
    elif job.mode == "mc":
        model = load_model(job.model_refs[0])
        if not getattr(model, "stochastic", False):
            warnings.warn(
                f"mc mode with a non-stochastic model '{job.model_refs[0]}': "
                "all samples will be identical"
            )
        samples = [
            run_model(model, image, _rng(job.seed, subject_index, t))
            for t in range(job.t)
        ]
        stack = np.stack(samples).astype(np.float32)
        if all(np.array_equal(stack[t], stack[0]) for t in range(1, job.t)):
            warnings.warn(f"{sid}: all {job.t} MC samples are identical; is dropout active?")
        write_tensor(stack, sdir / f"{method}_stack.suqt")
        entry["methods"][method] = {
            "kind": "sample_stack",
            "stack": f"{sid}/{method}_stack.suqt",
        }
    elif job.mode == "ensemble":
        members = [run_model(load_model(ref), image) for ref in job.model_refs]
        stack = np.stack(members).astype(np.float32)
        write_tensor(stack, sdir / f"{method}_stack.suqt")
        entry["methods"][method] = {
            "kind": "ensemble_stack",
            "stack": f"{sid}/{method}_stack.suqt",
        }
    elif job.mode == "aleatoric":
        model = load_model(job.model_refs[0])
        out = model(image)
        if not (isinstance(out, tuple) and len(out) == 2):
            raise ExportError("aleatoric mode needs a model returning (probs, variance)")
        probs = _to_probabilities(model, out[0], image.shape)
        variance = np.asarray(out[1], dtype=np.float64)
        if variance.shape != image.shape:
            raise ExportError("variance shape does not match the image")
        if not np.isfinite(variance).all() or variance.min() < 0.0:
            raise ExportError("variance must be finite and >= 0")
        write_tensor(probs.astype(np.float32), sdir / f"{method}_prob.suqt")
        write_tensor(variance.astype(np.float32), sdir / f"{method}_var.suqt")
        entry["methods"][method] = {
            "kind": "aleatoric",
            "prob": f"{sid}/{method}_prob.suqt",
            "variance": f"{sid}/{method}_var.suqt",
        }
    else:  # auxiliary
        probs = run_model(load_model(job.model_refs[0]), image)
        labels = (probs >= 0.5).astype(np.uint8)
        predictor = load_model(job.error_model_ref)
        raw = np.asarray(predictor(image, labels), dtype=np.float64)
        if raw.shape != image.shape:
            raise ExportError("error predictor output shape does not match the image")
        if not np.isfinite(raw).all() or raw.min() < 0.0:
            raise ExportError("error predictor output must be finite and >= 0")
        write_tensor(labels, sdir / f"{method}_labels.suqt")
        write_tensor(raw.astype(np.float32), sdir / f"{method}_unc.suqt")
        entry["methods"][method] = {
            "kind": "auxiliary",
            "labels": f"{sid}/{method}_labels.suqt",
            "uncertainty": f"{sid}/{method}_unc.suqt",
        }
    return entry


def _gt_key(path) -> str:
    stem = Path(path).stem
    return stem[: -len("_gt")] if stem.endswith("_gt") else stem


def export_dataset(job: ExportJob, image_paths, gt_paths, out_dir) -> Path:
    """Export every subject, pre-validate, and write/extend the manifest.

    Ground truth files pair with images by filename stem; a trailing "_gt"
    suffix on the ground-truth stem is ignored.
    """
    images = sorted(Path(p) for p in image_paths)
    gts = {_gt_key(p): Path(p) for p in gt_paths}
    if not images:
        raise ExportError("no input images")
    missing = [p.stem for p in images if p.stem not in gts]
    if missing:
        raise ExportError(f"no ground truth provided for subjects: {missing}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = [
        export_subject(job, i, image, gts[image.stem], out)
        for i, image in enumerate(images)
    ]
    return write_manifest(job, entries, out)


def _prevalidate(declared_t: int, declared_k: int, subjects, out: Path) -> None:
    """Check every referenced file against the manifest contract before writing it."""
    for entry in subjects:
        gt = read_tensor(out / entry["ground_truth"])
        spatial = gt.shape
        for spec in entry["methods"].values():
            for role, rel in spec.items():
                if role == "kind":
                    continue
                arr = read_tensor(out / rel)
                dims = arr.shape
                if spec["kind"] in ("sample_stack", "ensemble_stack"):
                    want = declared_t if spec["kind"] == "sample_stack" else declared_k
                    if dims[0] != want:
                        raise ExportError(
                            f"{rel}: stack holds {dims[0]} samples, manifest declares {want}"
                        )
                    dims = dims[1:]
                if dims != spatial:
                    raise ExportError(f"{rel}: dims {dims} != ground truth dims {spatial}")


def write_manifest(job: ExportJob, entries, out_dir) -> Path:
    """Write manifest.json, merging methods into an existing manifest if present.

    declared_T is pinned only by mc runs and declared_K only by ensemble runs;
    other modes adopt whatever an existing manifest declares.  After merging,
    every referenced file is validated against the final declarations, so two
    stack methods needing different sample counts cannot end up in one
    manifest.
    """
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    declared_t, declared_k = job.t, job.k
    dataset_name = job.dataset_name
    subjects = entries
    if manifest_path.exists():
        previous = json.loads(manifest_path.read_text(encoding="utf-8"))
        declared_t = job.t if job.mode == "mc" else previous["declared_T"]
        declared_k = job.k if job.mode == "ensemble" else previous["declared_K"]
        dataset_name = previous["dataset_name"]
        by_id = {s["subject_id"]: s for s in previous["subjects"]}
        if set(by_id) != {e["subject_id"] for e in entries}:
            raise ExportError("existing manifest covers different subjects")
        for entry in entries:
            by_id[entry["subject_id"]]["methods"].update(entry["methods"])
        subjects = previous["subjects"]
    _prevalidate(declared_t, declared_k, subjects, out)
    doc = {
        "dataset_name": dataset_name,
        "declared_T": declared_t,
        "declared_K": declared_k,
        "subjects": subjects,
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path
