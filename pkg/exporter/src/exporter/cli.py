"""Command line: run an export job file."""

import argparse
import sys

from .export import ExportJob, export, load_job


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="telemetry-export",
        description="train a small model on synthetic two-modality data and "
        "write a rundiag telemetry bundle",
    )
    parser.add_argument("--job", help="job JSON file (defaults apply for missing fields)")
    parser.add_argument("--modality", choices=("ir_like", "rgb_like"))
    parser.add_argument("--out", required=True, help="output bundle directory")
    parser.add_argument("--seed", type=int)
    args = parser.parse_args(argv)

    job = load_job(args.job) if args.job else ExportJob()
    overrides = {}
    if args.modality:
        overrides["modality"] = args.modality
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        job = ExportJob(**{**job.__dict__, **overrides})
    manifests = export(job, args.out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
