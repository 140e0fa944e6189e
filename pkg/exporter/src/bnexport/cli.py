"""Entry points: export-model and export-dataset."""

from __future__ import annotations

import argparse
import json
import sys

from .convert import (VerificationError, export_dataset, export_model,
                      write_manifest)
from .ir import UnsupportedLayerError


def main_model(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="export-model",
        description="Convert a Keras HDF5 or ONNX checkpoint into a portable "
                    ".bnm container, verifying the round trip")
    ap.add_argument("checkpoint")
    ap.add_argument("out")
    ap.add_argument("--manifest", help="write the export manifest as JSON")
    ap.add_argument("--domain", default="0,1",
                    help="input domain as LO,HI (default 0,1)")
    ap.add_argument("--labels", type=int, help="label count (default: last layer)")
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args(argv)
    lo, hi = (float(t) for t in args.domain.split(","))
    try:
        manifest = export_model(args.checkpoint, args.out, input_domain=(lo, hi),
                                label_count=args.labels, dtype=args.dtype)
    except FileNotFoundError as e:
        print(f"export-model: {e}", file=sys.stderr)
        return 2
    except (UnsupportedLayerError, VerificationError, ValueError) as e:
        print(f"export-model: {e}", file=sys.stderr)
        return 1
    if args.manifest:
        write_manifest(manifest, args.manifest)
    print(json.dumps(manifest.as_dict(), indent=2, sort_keys=True))
    return 0


def main_dataset(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="export-dataset",
        description="Convert an MNIST-style IDX image/label pair into a "
                    "portable .bnd container")
    ap.add_argument("images")
    ap.add_argument("labels")
    ap.add_argument("out")
    ap.add_argument("--limit", type=int, help="keep only the first N items")
    args = ap.parse_args(argv)
    try:
        info = export_dataset(args.images, args.labels, args.out, limit=args.limit)
    except FileNotFoundError as e:
        print(f"export-dataset: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"export-dataset: {e}", file=sys.stderr)
        return 1
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main_model())
