"""``gortho`` command line: run experiments, verify invariants, align vectors.

Exit codes: 0 ok, 1 verification failure, 2 bad config or arguments,
3 training diverged (NaN), 4 null-cone input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import quadform as qf

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN, EXIT_NULL = 0, 1, 2, 3, 4


def _read_form(path: str) -> qf.QuadraticForm:
    text = Path(path).read_text()
    if text.lstrip().startswith("n="):
        return qf.from_csv(text)
    rows = [[float(v) for v in ln.replace(",", " ").split()] for ln in text.splitlines() if ln.strip()]
    return qf.symmetrize(rows)


def _read_vector(path: str) -> np.ndarray:
    text = Path(path).read_text()
    return np.array([float(v) for v in text.replace(",", " ").split()])


def cmd_run(args) -> int:
    from .experiment import ConfigError, load_config, run_experiment
    from .training import TrainingDiverged

    try:
        configs = [load_config(p) for p in args.config]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    dirs = [c.output_dir for c in configs]
    if len(set(dirs)) != len(dirs):
        print("config error: output_dir must differ between configs", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.jobs > 1 and len(configs) > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(run_experiment, configs))
        else:
            results = [run_experiment(c, jobs=args.jobs) for c in configs]
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NAN
    for cfg, reports in zip(configs, results):
        for rep in reports:
            keys = ("task", "noise_sigma", "test_loss", "test_accuracy", "abs_cos", "d_pa", "wall_clock_s")
            print(json.dumps({"output_dir": cfg.output_dir, **{k: rep[k] for k in keys if k in rep}}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    try:
        results = verify.run(args.suites, seed=args.seed, full=args.full)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_CONFIG
    failed = 0
    for c in results:
        print(json.dumps(verify.as_dict(c)))
        failed += c.passed is False
    skipped = sum(c.passed is None for c in results)
    print(f"# {len(results) - failed - skipped} passed, {failed} failed, {skipped} skipped")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_align(args) -> int:
    from .group import canonical_align, membership_residual

    try:
        form = _read_form(args.form)
        x = _read_vector(args.x)
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = canonical_align(form, x)
    except qf.NearNullCone as exc:
        print(f"null-cone input: {exc}", file=sys.stderr)
        return EXIT_NULL
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    np.set_printoptions(precision=12, suppress=True)
    print("W =")
    print(res.w.g)
    print(f"gamma = {res.gamma!r}")
    print(f"target axis = {res.target_axis + 1}")
    print(f"membership residual = {membership_residual(form, res.w.g):.3e}")
    print(f"alignment residual = {res.align_residual:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gortho", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments from INI configs")
    run.add_argument("--config", action="append", required=True, help="config file (repeatable)")
    run.add_argument("--jobs", type=int, default=1, help="parallel processes across configs / noise levels")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run invariant suites")
    ver.add_argument("suites", nargs="*", default=["all"], help="suite names or 'all'")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--full", action="store_true", help="full fuzz counts and the training-based checks")
    ver.set_defaults(func=cmd_verify)

    al = sub.add_parser("align", help="canonical alignment of a vector under a diagonal form")
    al.add_argument("--form", required=True, help="form CSV (optional 'n=<dim>' header)")
    al.add_argument("--x", required=True, help="vector CSV")
    al.set_defaults(func=cmd_align)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
