"""Exporter CLI: run models over images, emit tensors + manifest, convert files."""

from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

import numpy as np

from .export import MODES, ExportError, ExportJob, export_dataset
from .tensorfmt import read_tensor, write_tensor


def cmd_export(args) -> int:
    job = ExportJob(
        mode=args.mode,
        model_refs=tuple(args.model.split(",")),
        t=args.t,
        k=args.k,
        seed=args.seed,
        dataset_name=args.dataset_name,
        method_name=args.method_name,
        error_model_ref=args.error_model,
    )
    images = sorted(glob.glob(args.images))
    gts = sorted(glob.glob(args.gt))
    manifest = export_dataset(job, images, gts, args.out)
    print(manifest)
    return 0


def cmd_convert(args) -> int:
    src, dst = Path(args.src), Path(args.dst)
    if src.suffix == ".npy" and dst.suffix == ".suqt":
        arr = np.load(src)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.uint8)
        else:
            arr = arr.astype(np.float32)
        write_tensor(arr, dst)
    elif src.suffix == ".suqt" and dst.suffix == ".npy":
        np.save(dst, read_tensor(src))
    else:
        raise ExportError("convert supports .npy <-> .suqt")
    print(dst)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seguq-export",
        description="Export segmentation-model outputs in the seguq tensor/manifest formats",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="run a model over images and export one method")
    p_exp.add_argument("--mode", required=True, choices=MODES)
    p_exp.add_argument(
        "--model",
        required=True,
        help="model reference ('toy', 'toy:dropout=0.5', 'pkg.module:attr'); "
        "comma-separated list for ensemble mode",
    )
    p_exp.add_argument("--error-model", default=None, help="auxiliary-mode error predictor")
    p_exp.add_argument("--images", required=True, help="glob of .npy or .suqt images")
    p_exp.add_argument("--gt", required=True, help="glob of ground-truth files (paired by stem)")
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--t", type=int, default=20, help="MC samples per subject")
    p_exp.add_argument("--k", type=int, default=10, help="ensemble size")
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--dataset-name", default="exported")
    p_exp.add_argument("--method-name", default=None, help="manifest method name (default: mode)")
    p_exp.set_defaults(func=cmd_export)

    p_conv = sub.add_parser("convert", help="convert between .npy and .suqt")
    p_conv.add_argument("src")
    p_conv.add_argument("dst")
    p_conv.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
