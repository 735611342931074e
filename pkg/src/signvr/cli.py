"""Command-line entry point.

Subcommands:
  run     --config FILE [--out DIR] [--jobs K] [--seed-offset K]
  sweep   --config FILE [--out DIR] [--jobs K] [--seed-offset K]
  verify  run the independent oracle cross-checks, one pass/fail line each
  presets print every named hyperparameter rule for given T, d [, m, n, G]
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import bench, majority_vote, optimizers, verify


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signvr",
                                     description="Sign-based variance-reduced optimization benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, txt in (("run", "run one experiment config"),
                      ("sweep", "run an experiment over its T grid and fit the rate exponent")):
        p = sub.add_parser(name, help=txt)
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--out", default=None, help="output directory for CSVs and manifests")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")

    sub.add_parser("verify", help="run the brute-force oracle checks")

    p = sub.add_parser("presets", help="print the named hyperparameter rules")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--m", type=int, default=None, help="component count (finite-sum rules)")
    p.add_argument("--n", type=int, default=None, help="node count (vote rules)")
    p.add_argument("--G", type=float, default=1.0, help="gradient bound (vote rules)")
    p.add_argument("--scale-constants", type=float, default=1.0)
    return parser


def _cmd_run(args) -> int:
    cfg = bench.ExperimentConfig.from_file(args.config)
    rows_by_seed = bench.run_experiment(cfg, out_dir=args.out, seed_offset=args.seed_offset)
    for seed, rows in sorted(rows_by_seed.items()):
        last = rows[-1]
        print(f"{cfg.name} seed={seed}: rows={len(rows)} "
              f"final grad_l1={last.grad_l1:.6g} grad_l2={last.grad_l2:.6g} loss={last.loss:.6g}")
    if args.out:
        print(f"wrote CSVs and manifest to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = bench.ExperimentConfig.from_file(args.config)
    summary = bench.sweep_experiment(cfg, out_dir=args.out, jobs=args.jobs,
                                     seed_offset=args.seed_offset)
    for point in summary["points"]:
        print(f"T={point['T']:>8d}  {summary['metric']}={point['mean']:.6g}")
    fit = summary["fit"]
    print(f"fitted exponent {fit['exponent']:+.4f}  (R^2 = {fit['r_squared']:.4f})")
    return 0


def _cmd_verify() -> int:
    results = verify.run_all_checks()
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        print(f"[{status}] {name}{suffix}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def _print_cfg(label: str, cfg) -> None:
    fields = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)
              if f.name not in ("seed", "x0")}
    body = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in fields.items())
    print(f"{label}: {body}")


def _cmd_presets(args) -> int:
    c = args.scale_constants
    _print_cfg("theorem1", optimizers.preset("theorem1", args.T, args.d, scale_constants=c))
    _print_cfg("theorem5", optimizers.preset("theorem5", args.T, args.d, scale_constants=c))
    if args.m is not None:
        _print_cfg("theorem2", optimizers.preset("theorem2", args.T, args.d, m=args.m,
                                                 scale_constants=c))
        _print_cfg("theorem6", optimizers.preset("theorem6", args.T, args.d, m=args.m,
                                                 scale_constants=c))
    if args.n is not None:
        _print_cfg("theorem3", majority_vote.preset_mv("theorem3", args.T, args.d, args.n,
                                                       args.G, scale_constants=c))
        _print_cfg("theorem4", majority_vote.preset_mv("theorem4", args.T, args.d, args.n,
                                                       args.G, scale_constants=c))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "verify":
            return _cmd_verify()
        if args.command == "presets":
            return _cmd_presets(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
