"""Manifest-driven evaluation: derive uncertainties, score them, emit reports.

Subjects can be processed by a thread pool, but every reduction (bin pooling,
means, BnF proportions) runs in manifest order over exact or fixed-order
accumulators, so reports are byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calibration, error_analysis, measures, tensor_io
from .calibration import CalibrationClass, CalibrationReport, ReliabilityBins
from .error_analysis import DEFAULT_TAU_GRID, ConfusionCounts, ThresholdSweep
from .tensor_io import DatasetManifest, SubjectEntry, ValidationError

METRIC_DIRECTIONS = {"ece": "lower", "u_e": "higher", "bnf": "higher", "dice": "higher"}

METRICS_COLUMNS = [
    "method",
    "subject_id",
    "status",
    "reason",
    "n_voxels",
    "ece",
    "ece_pooled",
    "signed_gap",
    "calibration_class",
    "dice",
    "dice_pooled",
    "dice_degenerate",
    "u_e_overlap",
    "ue_degenerate",
    "benefit_fp_removal",
    "bnf",
    "best_tau_ue",
    "best_tau_bnf",
]


@dataclass(frozen=True)
class EvaluateOptions:
    n_bins: int = calibration.DEFAULT_BINS
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID
    epsilon: float = 0.02
    use_mask: bool = False
    workers: int = 1
    eager_validation: bool = True

    def to_dict(self) -> dict:
        # provenance echo: analysis parameters only (worker count cannot
        # change results, so it must not change report bytes either)
        return {
            "n_bins": self.n_bins,
            "tau_grid": list(self.tau_grid),
            "epsilon": self.epsilon,
            "use_mask": self.use_mask,
            "eager_validation": self.eager_validation,
        }


@dataclass
class SubjectMetrics:
    subject_id: str
    n_voxels: int
    bins: ReliabilityBins
    report: CalibrationReport
    calibration_class: CalibrationClass
    counts: ConfusionCounts
    dice: float
    dice_degenerate: bool
    sweep_data: error_analysis.SubjectSweepData


@dataclass
class MethodResult:
    method: str
    kind: str
    subjects: list[SubjectMetrics] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    dataset_bins: ReliabilityBins | None = None
    pooled_ece: float | None = None
    pooled_signed_gap: float | None = None
    mean_subject_ece: float | None = None
    sweep: ThresholdSweep | None = None
    mean_dice: float | None = None
    pooled_dice: float | None = None
    pooled_dice_degenerate: bool = False
    bnf_at_best: float | None = None
    mean_ue_at_best: float | None = None
    best_tau_ue: float | None = None
    best_tau_bnf: float | None = None


@dataclass
class RankEntry:
    method: str
    mean: float
    rank: int


@dataclass
class EvalResult:
    dataset_name: str
    options: EvaluateOptions
    methods: list[MethodResult]
    ranks: dict[str, list[RankEntry]]

    @property
    def has_failures(self) -> bool:
        return any(m.skipped for m in self.methods)


def evaluate(manifest_path, options: EvaluateOptions | None = None) -> EvalResult:
    options = options or EvaluateOptions()
    manifest = tensor_io.load_manifest(manifest_path, eager=options.eager_validation)
    return evaluate_manifest(manifest, options)


def evaluate_manifest(manifest: DatasetManifest, options: EvaluateOptions) -> EvalResult:
    methods = [
        _evaluate_method(manifest, name, options) for name in manifest.method_names()
    ]
    return EvalResult(
        dataset_name=manifest.dataset_name,
        options=options,
        methods=methods,
        ranks=build_rank_table(methods),
    )


def _evaluate_method(
    manifest: DatasetManifest, method: str, options: EvaluateOptions
) -> MethodResult:
    kind = manifest.method_kinds[method]
    result = MethodResult(method=method, kind=kind)
    present = [s for s in manifest.subjects if method in s.methods]
    for s in manifest.subjects:
        if method not in s.methods:
            result.skipped.append((s.subject_id, "method not provided for subject"))
    if not present:
        return result

    aleatoric_stats = None
    if kind == "aleatoric":
        try:
            aleatoric_stats = measures.collect_aleatoric_stats(present, method)
        except ValidationError as e:
            for s in present:
                result.skipped.append((s.subject_id, f"aleatoric prepass failed: {e}"))
            return result

    def worker(subject: SubjectEntry):
        try:
            return _subject_metrics(subject, method, options, aleatoric_stats)
        except ValidationError as e:
            return (subject.subject_id, str(e))

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            outcomes = list(pool.map(worker, present))
    else:
        outcomes = [worker(s) for s in present]

    for outcome in outcomes:  # manifest order
        if isinstance(outcome, SubjectMetrics):
            result.subjects.append(outcome)
        else:
            result.skipped.append(outcome)
    if not result.subjects:
        return result

    ok = result.subjects
    result.dataset_bins = calibration.merge_bins([s.bins for s in ok])
    result.pooled_ece = calibration.ece(result.dataset_bins)
    result.pooled_signed_gap = calibration.signed_gap(result.dataset_bins)
    result.mean_subject_ece = sum(s.report.ece for s in ok) / len(ok)
    result.mean_dice = sum(s.dice for s in ok) / len(ok)
    pooled_counts = ConfusionCounts(
        tp=sum(s.counts.tp for s in ok),
        tn=sum(s.counts.tn for s in ok),
        fp=sum(s.counts.fp for s in ok),
        fn=sum(s.counts.fn for s in ok),
    )
    result.pooled_dice = error_analysis.dice(pooled_counts)
    result.pooled_dice_degenerate = error_analysis.dice_degenerate(pooled_counts)
    sweep = error_analysis.sweep_thresholds([s.sweep_data for s in ok], options.tau_grid)
    result.sweep = sweep
    result.best_tau_ue = sweep.best_tau_ue
    result.best_tau_bnf = sweep.best_tau_bnf
    if sweep.best_tau_ue is not None:
        j = sweep.taus.index(sweep.best_tau_ue)
        result.mean_ue_at_best = sweep.mean_ue[j]
    result.bnf_at_best = sweep.bnf[sweep.taus.index(sweep.best_tau_bnf)]
    return result


def _subject_metrics(
    subject: SubjectEntry,
    method: str,
    options: EvaluateOptions,
    aleatoric_stats,
) -> SubjectMetrics:
    output = measures.derive_method_outputs(subject, method, aleatoric_stats)
    gt = tensor_io.read_label_map(subject.ground_truth)
    if gt.shape != output.labels.shape:
        raise ValidationError(
            f"subject '{subject.subject_id}': ground truth dims {gt.shape} "
            f"!= method dims {output.labels.shape}"
        )
    mask = None
    if options.use_mask and subject.mask is not None:
        mask = tensor_io.read_label_map(subject.mask).astype(bool)
    bins = calibration.bin_predictions(output.confidence, gt, options.n_bins, mask)
    report = calibration.make_report(bins, "subject", subject.subject_id)
    sweep_data = error_analysis.prepare_sweep_subject(
        output.uncertainty, output.labels, gt, options.tau_grid, mask
    )
    counts = sweep_data.counts
    return SubjectMetrics(
        subject_id=subject.subject_id,
        n_voxels=counts.total,
        bins=bins,
        report=report,
        calibration_class=calibration.classify_subject_calibration(report, options.epsilon),
        counts=counts,
        dice=error_analysis.dice(counts),
        dice_degenerate=error_analysis.dice_degenerate(counts),
        sweep_data=sweep_data,
    )


# -- ranking ------------------------------------------------------------------


def build_rank_table(methods: list[MethodResult]) -> dict[str, list[RankEntry]]:
    """Dense ranks over per-method means rounded to 3 decimals.

    ECE ranks on its percent display value, lower is better; U-E, BnF and
    Dice rank on fractions, higher is better.  Equal rounded means share a
    rank and the next distinct mean takes the next integer (dense ranking).
    """
    table: dict[str, list[RankEntry]] = {}
    scored = [m for m in methods if m.subjects]
    values: dict[str, list[tuple[str, float]]] = {"ece": [], "u_e": [], "bnf": [], "dice": []}
    for m in scored:
        values["ece"].append((m.method, 100.0 * m.mean_subject_ece))
        if m.mean_ue_at_best is not None:
            values["u_e"].append((m.method, m.mean_ue_at_best))
        values["bnf"].append((m.method, m.bnf_at_best))
        values["dice"].append((m.method, m.mean_dice))
    for metric, pairs in values.items():
        if not pairs:
            table[metric] = []
            continue
        reverse = METRIC_DIRECTIONS[metric] == "higher"
        rounded = [(method, round(v, 3)) for method, v in pairs]
        distinct = sorted({r for _, r in rounded}, reverse=reverse)
        rank_of = {r: i + 1 for i, r in enumerate(distinct)}
        table[metric] = [
            RankEntry(method=method, mean=r, rank=rank_of[r])
            for method, r in sorted(rounded, key=lambda mr: (rank_of[mr[1]], mr[0]))
        ]
    return table


# -- report emission ----------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_rows(result: EvalResult) -> list[list[str]]:
    rows = [METRICS_COLUMNS]
    for m in result.methods:
        best_ue_idx = (
            m.sweep.taus.index(m.best_tau_ue)
            if m.sweep is not None and m.best_tau_ue is not None
            else None
        )
        best_bnf_idx = (
            m.sweep.taus.index(m.best_tau_bnf) if m.sweep is not None else None
        )
        for i, s in enumerate(m.subjects):
            ue = m.sweep.per_subject_ue[i][best_ue_idx] if best_ue_idx is not None else None
            benefit = (
                m.sweep.per_subject_benefit[i][best_bnf_idx]
                if best_bnf_idx is not None
                else None
            )
            rows.append(
                [
                    m.method,
                    s.subject_id,
                    "ok",
                    "",
                    _fmt(s.n_voxels),
                    _fmt(s.report.ece),
                    "",
                    _fmt(s.report.signed_gap),
                    s.calibration_class.label,
                    _fmt(s.dice),
                    "",
                    _fmt(s.dice_degenerate),
                    _fmt(ue),
                    _fmt(ue is None),
                    _fmt(benefit),
                    "",
                    "",
                    "",
                ]
            )
        for sid, reason in m.skipped:
            rows.append(
                [m.method, sid, "skipped", reason] + [""] * (len(METRICS_COLUMNS) - 4)
            )
        if m.subjects:
            rows.append(
                [
                    m.method,
                    "ALL",
                    "ok",
                    "",
                    _fmt(sum(s.n_voxels for s in m.subjects)),
                    _fmt(m.mean_subject_ece),
                    _fmt(m.pooled_ece),
                    _fmt(m.pooled_signed_gap),
                    "",
                    _fmt(m.mean_dice),
                    _fmt(m.pooled_dice),
                    _fmt(m.pooled_dice_degenerate),
                    _fmt(m.mean_ue_at_best),
                    _fmt(m.best_tau_ue is None),
                    "",
                    _fmt(m.bnf_at_best),
                    _fmt(m.best_tau_ue),
                    _fmt(m.best_tau_bnf),
                ]
            )
        else:
            rows.append(
                [m.method, "ALL", "skipped", "no successful subjects"]
                + [""] * (len(METRICS_COLUMNS) - 4)
            )
    return rows


def ranks_rows(ranks: dict[str, list[RankEntry]]) -> list[list[str]]:
    rows = [["metric", "direction", "method", "mean", "rank"]]
    for metric in ("ece", "u_e", "bnf", "dice"):
        for entry in ranks.get(metric, []):
            rows.append(
                [
                    metric,
                    METRIC_DIRECTIONS[metric],
                    entry.method,
                    _fmt(entry.mean),
                    str(entry.rank),
                ]
            )
    return rows


def reliability_csv(bins: ReliabilityBins) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["bin_lower", "bin_upper", "count", "mean_confidence", "accuracy"])
    for lo, hi, count, mean_conf, acc in calibration.reliability_rows(bins):
        writer.writerow([_fmt(lo), _fmt(hi), str(count), _fmt(mean_conf), _fmt(acc)])
    return out.getvalue()


def _csv_text(rows: list[list[str]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerows(rows)
    return out.getvalue()


def emit_reports(result: EvalResult, out_dir) -> list[Path]:
    """Write metrics.csv, ranks.csv, reliability CSVs, and summary.json.

    Output bytes are a pure function of inputs and options.  Refuses to write
    anything when no method produced results.
    """
    if not result.methods:
        raise ValidationError("no methods evaluated; refusing to write reports")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    metrics_path = out / "metrics.csv"
    metrics_path.write_text(_csv_text(metrics_rows(result)), encoding="utf-8")
    written.append(metrics_path)

    ranks_path = out / "ranks.csv"
    ranks_path.write_text(_csv_text(ranks_rows(result.ranks)), encoding="utf-8")
    written.append(ranks_path)

    rel_dir = out / "reliability"
    rel_dir.mkdir(exist_ok=True)
    for m in result.methods:
        if m.dataset_bins is not None:
            p = rel_dir / f"{m.method}_dataset.csv"
            p.write_text(reliability_csv(m.dataset_bins), encoding="utf-8")
            written.append(p)
        for s in m.subjects:
            p = rel_dir / f"{m.method}_subject_{s.subject_id}.csv"
            p.write_text(reliability_csv(s.bins), encoding="utf-8")
            written.append(p)

    summary = {
        "dataset_name": result.dataset_name,
        "options": result.options.to_dict(),
        "methods": {
            m.method: {
                "kind": m.kind,
                "n_subjects": len(m.subjects),
                "n_skipped": len(m.skipped),
                "skipped": [{"subject_id": sid, "reason": r} for sid, r in m.skipped],
                "mean_subject_ece": m.mean_subject_ece,
                "pooled_ece": m.pooled_ece,
                "pooled_signed_gap": m.pooled_signed_gap,
                "mean_dice": m.mean_dice,
                "pooled_dice": m.pooled_dice,
                "mean_ue_at_best": m.mean_ue_at_best,
                "bnf_at_best": m.bnf_at_best,
                "best_tau_ue": m.best_tau_ue,
                "best_tau_bnf": m.best_tau_bnf,
                "calibration_classes": {
                    s.subject_id: s.calibration_class.label for s in m.subjects
                },
            }
            for m in result.methods
        },
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(summary_path)
    return written


# -- diagram + rank helpers for the CLI ----------------------------------------


def diagram_bins(
    manifest: DatasetManifest,
    method: str,
    subject_id: str | None,
    options: EvaluateOptions,
) -> ReliabilityBins:
    """Bins for one subject's reliability diagram, or pooled bins without an id."""
    if method not in manifest.method_kinds:
        raise ValidationError(f"manifest has no method '{method}'")
    kind = manifest.method_kinds[method]
    present = [s for s in manifest.subjects if method in s.methods]
    aleatoric_stats = (
        measures.collect_aleatoric_stats(present, method) if kind == "aleatoric" else None
    )
    if subject_id is None:
        parts = [
            _subject_metrics(s, method, options, aleatoric_stats).bins for s in present
        ]
        if not parts:
            raise ValidationError(f"no subjects provide method '{method}'")
        return calibration.merge_bins(parts)
    for s in present:
        if s.subject_id == subject_id:
            return _subject_metrics(s, method, options, aleatoric_stats).bins
    raise ValidationError(f"subject '{subject_id}' not found for method '{method}'")


def rank_table_from_metrics_csv(path) -> dict[str, list[RankEntry]]:
    """Recompute the rank table from an existing metrics.csv."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: metrics.csv not found")
    methods: list[MethodResult] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValidationError(f"{path}: unexpected metrics.csv columns")
        for row in reader:
            if row["subject_id"] != "ALL" or row["status"] != "ok":
                continue
            m = MethodResult(method=row["method"], kind="")
            m.subjects = [None]  # type: ignore[list-item]  # marks "has results"
            m.mean_subject_ece = float(row["ece"])
            m.mean_ue_at_best = float(row["u_e_overlap"]) if row["u_e_overlap"] else None
            m.bnf_at_best = float(row["bnf"])
            m.mean_dice = float(row["dice"])
            methods.append(m)
    if not methods:
        raise ValidationError(f"{path}: no dataset-level rows to rank")
    return build_rank_table(methods)
