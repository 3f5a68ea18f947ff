"""Command-line interface: ``brex gen | certify | solve | verify | sweep``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, guard
violation or a contradicted certificate, 4 certificate not applicable.
"""

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .errors import DomainError, GuardError, NumericalFailure
from .instances import save_instance
from .pipeline import (
    CSV_COLUMNS, TheoryViolation, build_problem, certification_summary, certify, condition_report,
    instance_from_config, instance_summary, lambda_values, run_trial, run_verification, solve_at,
    sweep_plan, timed,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_APPLICABLE = 4


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _setup(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out)
    return cfg, out


def _report_base(command, args, instance):
    return {"command": command, "config": str(args.config), "seed": args.seed,
            "instance": instance_summary(instance)}


def cmd_gen(args):
    cfg, out = _setup(args)
    instance = instance_from_config(cfg)
    paths = save_instance(instance, out)
    report = _report_base("gen", args, instance)
    report["files"] = {k: str(v) for k, v in paths.items()}
    write_json(out / "report.json", report)
    print(f"wrote instance to {out}")
    return EXIT_OK


def _certified_setup(args, command):
    cfg, out = _setup(args)
    timings = {}
    instance = instance_from_config(cfg)
    p = build_problem(instance, cfg)
    with timed(timings, "certify"):
        cert = certify(instance, p, cfg)
    report = _report_base(command, args, instance)
    report["certification"] = certification_summary(cert)
    report["timings"] = timings
    return cfg, out, instance, p, cert, report


def _not_applicable(out, report, cert):
    report["status"] = "skipped"
    write_json(out / "report.json", report)
    print(f"certificate not applicable: {cert.reason or 'empty interval'}")
    return EXIT_NOT_APPLICABLE


def cmd_certify(args):
    cfg, out, instance, p, cert, report = _certified_setup(args, "certify")
    lambdas = lambda_values(cfg, cert)
    report["lambda0_values"] = lambdas
    report["conditions"] = [dict(lambda0=lam, certified=cert.certifies(lam),
                                 check=condition_report(p, instance, cert, lam)) for lam in lambdas]
    if any(c["certified"] and c["check"] and c["check"]["falsified"] for c in report["conditions"]):
        raise TheoryViolation("sampling found a safe-region point in a forbidden set", report)
    if not cert.applicable:
        return _not_applicable(out, report, cert)
    report["status"] = "certified"
    write_json(out / "report.json", report)
    iv = cert.interval
    print(f"certified interval ({iv.lower:.6g}, {iv.upper:.6g}) via {cert.route}")
    return EXIT_OK


def cmd_solve(args):
    cfg, out, instance, p, cert, report = _certified_setup(args, "solve")
    lambdas = lambda_values(cfg, cert)
    if not lambdas:
        return _not_applicable(out, report, cert)
    with timed(report["timings"], "solve"):
        results = [solve_at(p, cfg, lam) for lam in lambdas]
    report["solver"] = results
    report["status"] = "solved" if all(r["converged"] for r in results) else "not converged"
    write_json(out / "report.json", report)
    for r in results:
        print(f"lambda0={r['lambda0']:.6g} objective={r['objective']:.10g} support={r['support']} "
              f"critical={r['critical']}")
    return EXIT_OK


def cmd_verify(args):
    cfg, out, instance, p, cert, report = _certified_setup(args, "verify")
    lambdas = lambda_values(cfg, cert)
    if not lambdas:
        return _not_applicable(out, report, cert)
    with timed(report["timings"], "verify"):
        rows = run_verification(instance, cfg, lambdas, cert, p)
    report["brute_force"] = rows
    report["status"] = "verified"
    write_json(out / "report.json", report)
    for r in rows:
        print(f"lambda0={r['lambda0']:.6g} certified={r['certified']} support={r['best_support']} "
              f"oracle_match={r['oracle_match']}")
    return EXIT_OK


def _trial_rows(job):
    cfg, plan = job
    return run_trial(cfg, plan)


def cmd_sweep(args):
    cfg, out = _setup(args)
    base_seed = args.seed if args.seed is not None else cfg.instance.seed if cfg.instance else 0
    plans = sweep_plan(cfg, base_seed)
    jobs = [(cfg, plan) for plan in plans]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_trial_rows, jobs))
    else:
        results = [_trial_rows(job) for job in jobs]
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rows in results:
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    n_rows = sum(len(r) for r in results)
    print(f"wrote {n_rows} rows for {len(plans)} trials to {path}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "certify": cmd_certify, "solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep}


HELP = {
    "gen": "write a synthetic instance as CSV files",
    "certify": "compute the certified lambda0 interval and check its conditions",
    "solve": "run forward-backward splitting at each lambda0",
    "verify": "brute-force the l0 problem at each lambda0 and check the oracle support",
    "sweep": "run many seeded trials and write a CSV of outcomes",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--seed", type=int, help="64-bit seed overriding the config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="brex", description="Certify, solve and brute-force verify sparse "
                                     "regression instances with exact l0 relaxations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except TheoryViolation as exc:
        dump = Path(args.out) / "reproducer.json"
        write_json(dump, exc.reproducer)
        print(f"error: theory violated: {exc} (reproducer in {dump})", file=sys.stderr)
        return EXIT_NUMERICAL
    except GuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DomainError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
