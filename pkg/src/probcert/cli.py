"""``certify`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .driver import CertificationRequest, inputs_from_dir, report_csv, report_json, run_batch


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="certify",
        description="Worst-case and probabilistic robustness radii for a dense classifier.",
    )
    ap.add_argument("--model", required=True, help="model JSON file")
    ap.add_argument("--input", action="append", default=[], help="input JSON file (repeatable)")
    ap.add_argument("--inputs", help="directory of input JSON files")
    ap.add_argument("--norm", default="inf", choices=["inf", "1", "2"])
    ap.add_argument("--mode", default="adaptive", choices=["fastlin", "adaptive"])
    ap.add_argument("--noise", default="bounded", choices=["bounded", "gaussian"])
    ap.add_argument("--cov", help='covariance JSON: {"diag": [...]} or {"full": [[...]]}')
    ap.add_argument("--method", choices=["hoeffding", "gaussian", "convolution"])
    ap.add_argument("--confidences", default="0.9999,0.75,0.5,0.25,0.05")
    ap.add_argument("--targets", default="all", help="all | random | comma-separated classes")
    ap.add_argument("--agg", default="min", choices=["min", "union"])
    ap.add_argument("--eps-max", type=float, default=1.0)
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grid-points", type=int, default=2**14)
    ap.add_argument("--out", required=True, help="JSON report path")
    ap.add_argument("--csv", help="also write a CSV table")
    ap.add_argument("--validate-mc", type=int, default=0, metavar="N",
                    help="Monte-Carlo check of each certificate with N samples")
    ap.add_argument("--dump-bounds", metavar="DIR", help="write per-layer bounds at the worst-case radius")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def request_from_args(args) -> CertificationRequest:
    inputs = list(args.input)
    if args.inputs:
        inputs.extend(inputs_from_dir(args.inputs))
    if not inputs:
        raise ValueError("no inputs given (use --input or --inputs)")
    if args.targets in ("all", "random"):
        policy, explicit = args.targets, ()
    else:
        policy, explicit = "explicit", tuple(int(t) for t in args.targets.split(","))
    return CertificationRequest(
        model=args.model,
        inputs=inputs,
        norm=args.norm,
        mode=args.mode,
        noise=args.noise,
        method=args.method,
        covariance=args.cov,
        confidences=_floats(args.confidences),
        target_policy=policy,
        explicit_targets=explicit,
        aggregation=args.agg,
        eps_max=args.eps_max,
        tol=args.tol,
        seed=args.seed,
        grid_points=args.grid_points,
        validate_mc=args.validate_mc,
        jobs=args.jobs,
        dump_bounds=args.dump_bounds,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run_batch(request_from_args(args))
        Path(args.out).write_text(report_json(report), encoding="utf-8")
        if args.csv:
            Path(args.csv).write_text(report_csv(report), encoding="utf-8")
    except Exception as exc:
        print(f"certify: error: {exc}", file=sys.stderr)
        return 1
    failed = report["summary"]["n_failed"]
    if failed:
        print(f"certify: {failed} input(s) failed; see {args.out}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
