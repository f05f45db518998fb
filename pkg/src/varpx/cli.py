"""Command-line entry point.

Subcommands
-----------
- ``converge``: mesh-refinement study, writes report.csv / report.json
- ``verify``: orlicz property suite, projection assumptions, inf-sup scan
- ``infsup``: inf-sup scan only
- ``solve``: single solve with mesh and field export

Exit codes: 0 all verdicts pass, 2 some verdict failed, 1 runtime error.
`--threads 1` pins the BLAS thread pools before numpy is imported, which
(together with a fixed seed) makes reports byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varpx",
        description="Variable-exponent p(x)-Stokes experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("converge", "run a convergence study"),
        ("verify", "run verification suites"),
        ("infsup", "scan discrete inf-sup constants"),
        ("solve", "single solve with field export"),
    ]:
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
        p.add_argument("--out-dir", type=str, default="out", help="output directory")
    return parser


def _pin_threads(n: int | None):
    if n is None:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = str(n)


def _load_config(path, seed_override):
    from varpx.harness import ExperimentConfig

    if path is None:
        data = {}
    else:
        with open(path) as fh:
            data = json.load(fh)
    if seed_override is not None:
        data["seed"] = seed_override
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _pin_threads(args.threads)

    # numpy and scipy are imported only after the thread pools are pinned
    from varpx import harness

    try:
        config = _load_config(args.config, args.seed)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "converge":
            report = harness.run_convergence(config)
            paths = harness.emit(report, args.out_dir)
            for v in report.verdicts:
                status = "pass" if v["passed"] else "FAIL"
                print(
                    f"{v['name']}: observed {v['observed']:.4f} vs "
                    f"theoretical {v['theoretical']:.4f} (tol {v['tolerance']}) -> {status}"
                )
            for p in paths:
                print(f"wrote {p}")
            if not report.completed:
                print(f"aborted: {report.failure}", file=sys.stderr)
                return 1
            return 0 if report.all_passed else 2

        if args.command == "verify":
            report = harness.run_verification(config)
            paths = harness.emit(report, args.out_dir, stem="verification")
            for item in report["items"]:
                print(f"{item['name']}: {'pass' if item['passed'] else 'FAIL'}")
            for p in paths:
                print(f"wrote {p}")
            return 0 if report["all_passed"] else 2

        if args.command == "infsup":
            scan = harness.run_infsup_scan()
            report = {
                "schema": harness.SCHEMA,
                "kind": "infsup",
                "config": config.to_dict(),
                "scan": scan,
                "environment": harness.environment_stamp(),
            }
            paths = harness.emit(report, args.out_dir, stem="infsup")
            for kind, betas in scan["details"]["beta"].items():
                print(f"{kind}: beta_h = {['%.5f' % b for b in betas]}")
            for p in paths:
                print(f"wrote {p}")
            return 0 if scan["passed"] else 2

        if args.command == "solve":
            report = harness.run_single_solve(config, args.out_dir)
            paths = harness.emit(report, args.out_dir, stem="solve")
            rec = report["record"]
            print(
                f"n={rec['n']} h={rec['h']:.5f} "
                f"err_v={rec['err_v_quasinorm']:.6e} err_q={rec['err_q_luxemburg']:.6e}"
            )
            for p in paths:
                print(f"wrote {p}")
            return 0
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
