"""Binary tensor files and dataset manifests.

Tensor file layout, little-endian throughout:

    magic    4 bytes   b"SUQT"
    version  1 byte    0x01
    kind     1 byte    0x01 = float32, 0x02 = uint8
    ndim     1 byte    number of axes (>= 1)
    extents  ndim x u32
    payload  raw element data, row major (last axis fastest)

float32 payloads must be finite.  uint8 payloads are binary label maps and
may only contain 0 and 1.  A manifest is a JSON document binding subjects to
their ground truth and per-method input files; the schema is documented in
docs/manifest.md and shared with the exporter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SUQT"
VERSION = 1
KIND_FLOAT32 = 0x01
KIND_UINT8 = 0x02

_KIND_TO_DTYPE = {KIND_FLOAT32: np.dtype("<f4"), KIND_UINT8: np.dtype("u1")}
_DTYPE_TO_KIND = {np.dtype("float32"): KIND_FLOAT32, np.dtype("uint8"): KIND_UINT8}

# method kind -> required path fields in a manifest entry
METHOD_KINDS = {
    "single_prob": ("prob",),
    "sample_stack": ("stack",),
    "ensemble_stack": ("stack",),
    "aleatoric": ("prob", "variance"),
    "auxiliary": ("labels", "uncertainty"),
}

MAX_NDIM = 8


class ValidationError(Exception):
    """A toolkit input violated a documented invariant."""


class TensorFormatError(ValidationError):
    """Tensor file is malformed or holds out-of-contract values."""


class ManifestError(ValidationError):
    """Manifest is malformed or references inconsistent inputs."""


def write_tensor(array: np.ndarray, path) -> None:
    """Write an array as a tensor file.  Bytes are deterministic per input.

    Accepts float32 or uint8 arrays (float64 input is narrowed to float32).
    """
    arr = np.asarray(array)
    if arr.dtype == np.float64:
        arr = arr.astype(np.float32)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype not in _DTYPE_TO_KIND:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32 or uint8")
    if arr.ndim == 0 or arr.size == 0:
        raise TensorFormatError("tensor must have at least one axis and one element")
    if arr.ndim > MAX_NDIM:
        raise TensorFormatError(f"ndim {arr.ndim} exceeds limit {MAX_NDIM}")
    if any(d <= 0 or d > 0xFFFFFFFF for d in arr.shape):
        raise TensorFormatError(f"extents out of range: {arr.shape}")
    _check_values(arr, path)

    kind = _DTYPE_TO_KIND[arr.dtype]
    out = np.ascontiguousarray(arr, dtype=_KIND_TO_DTYPE[kind])
    header = MAGIC + struct.pack("<BBB", VERSION, kind, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header)
        out.tofile(f)


def read_tensor_header(path) -> tuple[int, tuple[int, ...], int]:
    """Parse the header only.  Returns (kind byte, dims, header size in bytes)."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(7)
        if len(head) < 7 or head[:4] != MAGIC:
            raise TensorFormatError(f"{path}: not a SUQT tensor file")
        version, kind, ndim = struct.unpack("<BBB", head[4:7])
        if version != VERSION:
            raise TensorFormatError(f"{path}: unsupported version {version}")
        if kind not in _KIND_TO_DTYPE:
            raise TensorFormatError(f"{path}: unknown element kind 0x{kind:02x}")
        if ndim == 0 or ndim > MAX_NDIM:
            raise TensorFormatError(f"{path}: bad ndim {ndim}")
        raw = f.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise TensorFormatError(f"{path}: truncated header")
        dims = struct.unpack(f"<{ndim}I", raw)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: zero extent in {dims}")
    return kind, dims, 7 + 4 * ndim


def read_tensor(path) -> np.ndarray:
    """Read a tensor file, validating size and value invariants."""
    path = Path(path)
    kind, dims, header_size = read_tensor_header(path)
    dtype = _KIND_TO_DTYPE[kind]
    n = 1
    for d in dims:
        n *= d
    expected = header_size + n * dtype.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise TensorFormatError(
            f"{path}: payload size mismatch (dims {dims} need {expected} bytes, file has {actual})"
        )
    with open(path, "rb") as f:
        f.seek(header_size)
        data = np.fromfile(f, dtype=dtype, count=n)
    if data.size != n:
        raise TensorFormatError(f"{path}: short read")
    arr = data.reshape(dims)
    if kind == KIND_FLOAT32:
        arr = arr.view(np.float32)
    _check_values(arr, path)
    return arr


def _check_values(arr: np.ndarray, path) -> None:
    if arr.dtype == np.uint8:
        if arr.max(initial=0) > 1:
            raise TensorFormatError(f"{path}: uint8 label values must be 0 or 1")
    else:
        if not np.isfinite(arr).all():
            raise TensorFormatError(f"{path}: non-finite float values")


def read_prob_map(path) -> np.ndarray:
    """Read a float32 tensor holding per-voxel probabilities in [0, 1]."""
    arr = read_tensor(path)
    if arr.dtype != np.float32:
        raise TensorFormatError(f"{path}: probability map must be float32")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise TensorFormatError(f"{path}: probability values outside [0, 1]")
    return arr


def read_nonnegative_map(path) -> np.ndarray:
    """Read a float32 tensor with values >= 0 (variances, raw uncertainties)."""
    arr = read_tensor(path)
    if arr.dtype != np.float32:
        raise TensorFormatError(f"{path}: expected float32 payload")
    if arr.min() < 0.0:
        raise TensorFormatError(f"{path}: negative values in nonnegative map")
    return arr


def read_label_map(path) -> np.ndarray:
    """Read a uint8 binary label tensor."""
    arr = read_tensor(path)
    if arr.dtype != np.uint8:
        raise TensorFormatError(f"{path}: label map must be uint8")
    return arr


@dataclass(frozen=True)
class MethodInput:
    """One method's input files for one subject; paths are resolved."""

    kind: str
    paths: dict[str, Path]

    def path(self, role: str) -> Path:
        return self.paths[role]


@dataclass(frozen=True)
class SubjectEntry:
    subject_id: str
    ground_truth: Path
    methods: dict[str, MethodInput]
    mask: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    subjects: list[SubjectEntry]
    declared_T: int
    declared_K: int
    method_kinds: dict[str, str] = field(default_factory=dict)

    def method_names(self) -> list[str]:
        return sorted(self.method_kinds)


def load_manifest(path, eager: bool = True) -> DatasetManifest:
    """Load and validate a manifest.

    With eager=True (default) every referenced tensor header is read so that
    missing files, spatial dim mismatches within a subject, and stack extents
    inconsistent with declared_T/declared_K are reported up front.  With
    eager=False these checks are deferred to first use.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ManifestError(f"{path}: cannot read manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON: {e}") from e

    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest root must be a JSON object")
    for key in ("dataset_name", "declared_T", "declared_K", "subjects"):
        if key not in doc:
            raise ManifestError(f"{path}: missing field '{key}'")
    name = doc["dataset_name"]
    declared_t = doc["declared_T"]
    declared_k = doc["declared_K"]
    if not isinstance(name, str) or not name:
        raise ManifestError(f"{path}: dataset_name must be a non-empty string")
    for label, v in (("declared_T", declared_t), ("declared_K", declared_k)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ManifestError(f"{path}: {label} must be a positive integer")
    raw_subjects = doc["subjects"]
    if not isinstance(raw_subjects, list) or not raw_subjects:
        raise ManifestError(f"{path}: subjects must be a non-empty list")

    base = path.parent
    subjects: list[SubjectEntry] = []
    seen_ids: set[str] = set()
    method_kinds: dict[str, str] = {}
    for i, raw in enumerate(raw_subjects):
        if not isinstance(raw, dict):
            raise ManifestError(f"{path}: subjects[{i}] must be an object")
        sid = raw.get("subject_id")
        if not isinstance(sid, str) or not sid:
            raise ManifestError(f"{path}: subjects[{i}] needs a subject_id string")
        if sid in seen_ids:
            raise ManifestError(f"{path}: duplicate subject_id '{sid}'")
        seen_ids.add(sid)
        gt = raw.get("ground_truth")
        if not isinstance(gt, str) or not gt:
            raise ManifestError(f"{path}: subject '{sid}' needs a ground_truth path")
        raw_methods = raw.get("methods")
        if not isinstance(raw_methods, dict) or not raw_methods:
            raise ManifestError(f"{path}: subject '{sid}' needs a non-empty methods map")
        methods: dict[str, MethodInput] = {}
        for mname, spec in raw_methods.items():
            if not isinstance(spec, dict) or "kind" not in spec:
                raise ManifestError(f"{path}: method '{mname}' of '{sid}' needs a kind")
            kind = spec["kind"]
            if kind not in METHOD_KINDS:
                raise ManifestError(
                    f"{path}: method '{mname}' of '{sid}' has unknown kind '{kind}'"
                )
            prev = method_kinds.setdefault(mname, kind)
            if prev != kind:
                raise ManifestError(
                    f"{path}: method '{mname}' is '{prev}' elsewhere but '{kind}' in '{sid}'"
                )
            paths: dict[str, Path] = {}
            for role in METHOD_KINDS[kind]:
                p = spec.get(role)
                if not isinstance(p, str) or not p:
                    raise ManifestError(
                        f"{path}: method '{mname}' of '{sid}' ({kind}) needs a '{role}' path"
                    )
                paths[role] = base / p
            methods[mname] = MethodInput(kind=kind, paths=paths)
        mask = raw.get("mask")
        if mask is not None and (not isinstance(mask, str) or not mask):
            raise ManifestError(f"{path}: subject '{sid}' mask must be a path string")
        subjects.append(
            SubjectEntry(
                subject_id=sid,
                ground_truth=base / gt,
                methods=methods,
                mask=base / mask if mask else None,
            )
        )

    manifest = DatasetManifest(
        dataset_name=name,
        subjects=subjects,
        declared_T=declared_t,
        declared_K=declared_k,
        method_kinds=method_kinds,
    )
    if eager:
        validate_subject_files(manifest)
    return manifest


def validate_subject_files(manifest: DatasetManifest) -> None:
    """Header-level cross-file checks for every subject (cheap, no payload reads)."""
    for subject in manifest.subjects:
        _validate_one_subject(subject, manifest.declared_T, manifest.declared_K)


def _validate_one_subject(subject: SubjectEntry, declared_t: int, declared_k: int) -> None:
    sid = subject.subject_id
    gt_kind, gt_dims, _ = _header_of(subject.ground_truth, sid)
    if gt_kind != KIND_UINT8:
        raise ManifestError(f"subject '{sid}': ground truth must be a uint8 tensor")
    spatial = gt_dims
    if subject.mask is not None:
        m_kind, m_dims, _ = _header_of(subject.mask, sid)
        if m_kind != KIND_UINT8:
            raise ManifestError(f"subject '{sid}': mask must be a uint8 tensor")
        if m_dims != spatial:
            raise ManifestError(
                f"subject '{sid}': mask dims {m_dims} != ground truth dims {spatial}"
            )
    for mname, mi in subject.methods.items():
        for role in METHOD_KINDS[mi.kind]:
            kind, dims, _ = _header_of(mi.path(role), sid)
            if mi.kind in ("sample_stack", "ensemble_stack") and role == "stack":
                if len(dims) < 2:
                    raise ManifestError(
                        f"subject '{sid}' method '{mname}': stack needs a sample axis"
                    )
                want = declared_t if mi.kind == "sample_stack" else declared_k
                if dims[0] != want:
                    raise ManifestError(
                        f"subject '{sid}' method '{mname}': stack has {dims[0]} samples, "
                        f"manifest declares {want}"
                    )
                dims = dims[1:]
            if dims != spatial:
                raise ManifestError(
                    f"subject '{sid}' method '{mname}': {role} dims {dims} "
                    f"!= ground truth dims {spatial}"
                )
            want_kind = KIND_UINT8 if role == "labels" else KIND_FLOAT32
            if kind != want_kind:
                raise ManifestError(
                    f"subject '{sid}' method '{mname}': {role} has wrong element kind"
                )


def _header_of(path: Path, sid: str):
    try:
        return read_tensor_header(path)
    except FileNotFoundError as e:
        raise ManifestError(f"subject '{sid}': missing file {path}") from e
