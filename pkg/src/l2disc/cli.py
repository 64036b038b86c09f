"""Command-line interface.

Subcommands: ``run`` (signed-series walk), ``komlos`` (row-cover walk),
``conc-validate`` (Monte-Carlo tail validation), ``baseline`` (reference
signers), ``bench`` (experiment suites) and ``verify`` (certify a
constraint system from files).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .baselines import brute_force_min_prefix, greedy_signing, random_signing
from .bench import run_benchmark
from .conc import mc_tail_validate
from .constraints import ConstraintSet
from .core import Coloring, RunConfig, load_matrix, save_coloring
from .errors import L2DiscError
from .komlos import load_cover, run_komlos
from .metrics import max_prefix_discrepancy
from .uvc import construct_uvc, verify_uvc
from .walk import run_signed_series


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--delta-prime", type=float, default=1.0 / 16.0)
    p.add_argument("--alpha1", type=float, default=1.0 / 16.0)
    p.add_argument("--alpha2", type=float, default=1.0 / 8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--uvc-method", choices=["projection", "certified_feasibility"],
                   default="projection")
    p.add_argument("--verify-every", type=int, default=25)
    p.add_argument("--monitor-prefixes", type=str, default=None,
                   help="comma-separated prefix lengths, e.g. 128,256,512")
    p.add_argument("--record-unorms", action="store_true",
                   help="record per-step ||U_t||_F^2 in the trace")


def _config_from_args(args) -> RunConfig:
    prefixes = None
    if args.monitor_prefixes:
        prefixes = tuple(int(tok) for tok in args.monitor_prefixes.split(",") if tok.strip())
    return RunConfig(
        gamma=args.gamma,
        beta=args.beta,
        delta=args.delta,
        delta_prime=args.delta_prime,
        alpha1=args.alpha1,
        alpha2=args.alpha2,
        seed=args.seed,
        max_steps=args.max_steps,
        uvc_method=args.uvc_method,
        verify_every=args.verify_every,
        monitored_prefixes=prefixes,
        record_unorms=args.record_unorms,
    )


def _write_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="l2disc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the signed-series walk")
    p_run.add_argument("--input", required=True, help="instance matrix file")
    _add_config_flags(p_run)
    p_run.add_argument("--diag", help="write the diagnostics CSV here")
    p_run.add_argument("--summary", help="write the summary JSON here")
    p_run.add_argument("--out", help="write the +-1 coloring here")

    p_kom = sub.add_parser("komlos", help="run the row-cover walk")
    p_kom.add_argument("--input", required=True)
    p_kom.add_argument("--cover", required=True, help="cover file: one set per line, 0-based rows")
    _add_config_flags(p_kom)
    p_kom.add_argument("--diag")
    p_kom.add_argument("--summary")
    p_kom.add_argument("--out")

    p_conc = sub.add_parser("conc-validate", help="Monte-Carlo tail validation")
    p_conc.add_argument("--which", required=True, choices=["freedman", "mfreedman", "hw"])
    p_conc.add_argument("--trials", type=int, default=100_000)
    p_conc.add_argument("--seed", type=int, default=0)
    p_conc.add_argument("--out", help="write the report JSON here")

    p_base = sub.add_parser("baseline", help="reference signers")
    p_base.add_argument("--input", required=True)
    p_base.add_argument("--method", required=True, choices=["random", "greedy", "brute"])
    p_base.add_argument("--seed", type=int, default=0)
    p_base.add_argument("--out", help="write the +-1 coloring here")

    p_bench = sub.add_parser("bench", help="experiment suites")
    p_bench.add_argument("--suite", required=True,
                         choices=["scaling_signed_series", "komlos_cover", "conc_suite", "uvc_cert"])
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--grid", default=None,
                         help="grid override, e.g. 'd:4,16;n:128;seeds:3'")

    p_ver = sub.add_parser("verify", help="certify a constraint system")
    p_ver.add_argument("--input", required=True, help="instance matrix file")
    p_ver.add_argument("--constraints", required=True,
                       help="JSON file with 'active' (0-based) and 'constraints' entries")
    p_ver.add_argument("--beta", type=float, default=0.25)
    p_ver.add_argument("--delta", type=float, default=0.25)
    p_ver.add_argument("--uvc-method", choices=["projection", "certified_feasibility"],
                       default="projection")
    p_ver.add_argument("--out", help="write the certificate JSON here")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except L2DiscError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "run":
        inst = load_matrix(args.input)
        config = _config_from_args(args)
        coloring, trace = run_signed_series(inst, config)
        if args.out:
            save_coloring(coloring, args.out)
        if args.diag:
            trace.to_csv(args.diag)
        summary = trace.summary_dict()
        _write_json(summary, args.summary)
        return 0

    if args.command == "komlos":
        inst = load_matrix(args.input)
        cover = load_cover(args.cover)
        config = _config_from_args(args)
        coloring, per_set, trace = run_komlos(inst, cover, config)
        if args.out:
            save_coloring(coloring, args.out)
        if args.diag:
            trace.to_csv(args.diag)
        summary = trace.summary_dict()
        summary["per_set"] = per_set
        _write_json(summary, args.summary)
        return 0

    if args.command == "conc-validate":
        report = mc_tail_validate(args.which, trials=args.trials, seed=args.seed)
        _write_json(report.to_dict(), args.out)
        return 0 if report.all_passed else 2

    if args.command == "baseline":
        inst = load_matrix(args.input)
        if args.method == "random":
            coloring = random_signing(inst, args.seed)
        elif args.method == "greedy":
            coloring = greedy_signing(inst)
        else:
            value, signs = brute_force_min_prefix(inst)
            coloring = Coloring(signs=signs, forced_alive=np.zeros(inst.n, dtype=bool))
        disc, arg = max_prefix_discrepancy(inst, coloring.signs.astype(float))
        if args.out:
            save_coloring(coloring, args.out)
        _write_json(
            {"method": args.method, "max_prefix_discrepancy": disc, "argmax_prefix": arg},
            None,
        )
        return 0

    if args.command == "bench":
        bundle = run_benchmark(args.suite, out_dir=args.out, master_seed=args.seed,
                               grid=args.grid)
        _write_json(bundle.summary, None)
        return 0

    if args.command == "verify":
        inst = load_matrix(args.input)
        with open(args.constraints, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        active = np.asarray(payload["active"], dtype=np.intp)
        entries = payload.get("constraints", [])
        if entries:
            vectors = np.array([e["vector"] for e in entries], dtype=np.float64)
            family = tuple(e.get("family", "row") for e in entries)
        else:
            vectors = np.zeros((0, 0))
            family = ()
        cs = ConstraintSet(vectors=vectors, family=family, active=active)
        config = RunConfig(beta=args.beta, delta=args.delta, uvc_method=args.uvc_method)
        uvc = construct_uvc(cs, config)
        report = verify_uvc(uvc, cs, config)
        _write_json(report.to_dict(), args.out)
        return 0 if report.passed else 2

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
