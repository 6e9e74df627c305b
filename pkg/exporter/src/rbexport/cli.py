"""Command line entry points.

Exit codes: 0 success, 1 missing file or failed validation, 2 bad
arguments or job configuration, 3 malformed input file.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError, FormatError
from .export import MODALITIES, ExportJob, export_descriptors, validate_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbexport",
        description="Embed frames with a backbone network and write descriptor files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="embed a directory of frames into one descriptor file")
    exp.add_argument("--input-dir", required=True, help="directory of images or raster files")
    exp.add_argument("--modality", required=True, choices=MODALITIES)
    exp.add_argument(
        "--weights",
        required=True,
        help="state-dict path, or seed:<int> for a fresh deterministic network",
    )
    exp.add_argument("--output", required=True, help="descriptor file to write")
    exp.add_argument("--batch-size", type=int, default=8)
    exp.add_argument("--image-size", type=int, default=224)

    val = sub.add_parser("validate", help="check a descriptor file against the load contract")
    val.add_argument("path", help="descriptor file to check")
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "export":
        job = ExportJob(
            input_dir=args.input_dir,
            modality=args.modality,
            weights=args.weights,
            output_path=args.output,
            batch_size=args.batch_size,
            image_size=args.image_size,
        )
        result = export_descriptors(job)
        print(f"wrote {result.count} descriptors to {result.output_path}")
        if result.skipped:
            print(
                f"skipped {len(result.skipped)} frames (see {result.error_report_path})",
                file=sys.stderr,
            )
        return 0
    report = validate_export(args.path)
    print(report.summary())
    return 0 if report.ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
