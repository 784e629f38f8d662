"""Command-line entry points: evaluate, synth, diagram, rank."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluate as ev
from . import synth as sy
from . import tensor_io
from .tensor_io import ValidationError


def parse_tau_grid(text: str) -> tuple[float, ...]:
    """Parse 'a:b:step' (inclusive of b up to rounding) or 'v1,v2,...'."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"tau grid '{text}' must be a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise ValidationError(f"bad tau grid '{text}'")
        n = int((b - a) / step + 1e-9) + 1
        return tuple(round(a + i * step, 10) for i in range(n))
    return tuple(float(p) for p in text.split(","))


def _evaluate_options(args) -> ev.EvaluateOptions:
    base = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            base = json.load(f)
        if not isinstance(base, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
        unknown = set(base) - {
            "n_bins", "tau_grid", "epsilon", "use_mask", "workers", "eager_validation",
        }
        if unknown:
            raise ValidationError(f"{args.config}: unknown config keys {sorted(unknown)}")
        if isinstance(base.get("tau_grid"), str):
            base["tau_grid"] = list(parse_tau_grid(base["tau_grid"]))
    # explicit flags override config-file values
    if args.bins is not None:
        base["n_bins"] = args.bins
    if args.tau_grid is not None:
        base["tau_grid"] = list(parse_tau_grid(args.tau_grid))
    if args.epsilon is not None:
        base["epsilon"] = args.epsilon
    if args.mask:
        base["use_mask"] = True
    if args.workers is not None:
        base["workers"] = args.workers
    if args.lazy:
        base["eager_validation"] = False
    if "tau_grid" in base:
        base["tau_grid"] = tuple(base["tau_grid"])
    return ev.EvaluateOptions(**base)


def cmd_evaluate(args) -> int:
    options = _evaluate_options(args)
    result = ev.evaluate(args.manifest, options)
    written = ev.emit_reports(result, args.out)
    for path in written:
        print(path)
    if result.has_failures:
        skipped = sum(len(m.skipped) for m in result.methods)
        print(f"warning: {skipped} subject evaluations skipped; see metrics.csv", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        doc = json.load(f)
    config = sy.SynthDatasetConfig.from_dict(doc)
    manifest_path = sy.write_synth_dataset(config, args.out)
    print(manifest_path)
    return 0


def cmd_diagram(args) -> int:
    options = ev.EvaluateOptions(n_bins=args.bins if args.bins is not None else 10)
    manifest = tensor_io.load_manifest(args.manifest)
    bins = ev.diagram_bins(manifest, args.method, args.subject, options)
    text = ev.reliability_csv(bins)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_rank(args) -> int:
    results_dir = Path(args.results_dir)
    ranks = ev.rank_table_from_metrics_csv(results_dir / "metrics.csv")
    text = ev._csv_text(ev.ranks_rows(ranks))
    (results_dir / "ranks.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seguq",
        description="Derive voxel-wise uncertainty maps and evaluate their reliability",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="evaluate every method in a manifest")
    p_eval.add_argument("manifest")
    p_eval.add_argument("--out", required=True, help="report output directory")
    p_eval.add_argument("--config", help="JSON options file; flags override it")
    p_eval.add_argument("--bins", type=int, default=None)
    p_eval.add_argument("--tau-grid", default=None, help="a:b:step or comma list")
    p_eval.add_argument("--epsilon", type=float, default=None)
    p_eval.add_argument("--mask", action="store_true", help="apply per-subject masks")
    p_eval.add_argument("--workers", type=int, default=None)
    p_eval.add_argument("--lazy", action="store_true", help="defer file validation")
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset from a config")
    p_synth.add_argument("config", help="JSON synth dataset config")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_diag = sub.add_parser("diagram", help="emit reliability-diagram data as CSV")
    p_diag.add_argument("manifest")
    p_diag.add_argument("--method", required=True)
    p_diag.add_argument("--subject", default=None, help="omit for the dataset level")
    p_diag.add_argument("--bins", type=int, default=None)
    p_diag.add_argument("--out", default=None)
    p_diag.set_defaults(func=cmd_diagram)

    p_rank = sub.add_parser("rank", help="recompute ranks.csv from metrics.csv")
    p_rank.add_argument("results_dir")
    p_rank.set_defaults(func=cmd_rank)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
