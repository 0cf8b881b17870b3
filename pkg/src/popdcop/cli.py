"""Command line entry point: ``popdcop generate | run | compare | export``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .benchgen import FAMILIES, GenSpec, generate
from .experiment import (
    ExperimentConfig,
    aggregate,
    mean_curves,
    read_finals,
    read_traces,
    run_experiment,
)
from .model import save_instance


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _cmd_generate(args: argparse.Namespace) -> int:
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        params[key.replace("-", "_")] = _parse_value(value)
    for extra in ("n", "density", "rows", "cols", "m", "m0", "colors", "domain_size", "positions"):
        value = getattr(args, extra)
        if value is not None:
            params[extra] = value
    if args.cap is not None:
        params["global_cap"] = {"cap": args.cap, "penalty": args.cap_penalty}
    instance = generate(GenSpec(args.family, args.seed, params))
    if args.out == "-":
        sys.stdout.write(instance.to_json() + "\n")
    else:
        save_instance(instance, args.out)
        print(f"wrote {args.out}: {instance.n_agents} agents, {len(instance.edges)} constraints")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    if args.out is not None:
        config.output_dir = Path(args.out)
    results = run_experiment(config, progress=None if args.quiet else print)
    print(f"{len(results)} runs written to {config.output_dir}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    finals = read_finals(args.traces)
    if not finals:
        print(f"no traces found in {args.traces}", file=sys.stderr)
        return 1
    summary = aggregate(finals, rs_mode=args.rs_mode)
    out = Path(args.out) if args.out else Path(args.traces) / "summary.csv"
    summary.write_csv(out)
    for alg, rs in sorted(summary.rs.items()):
        print(f"{alg:12s} RS={rs:7.2f}")
    for (a, b), p in sorted(summary.pvalues.items()):
        print(f"{a} vs {b}: Welch p={p:.3g}")
    print(f"summary written to {out}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    if args.format != "csv":
        print(f"unsupported format {args.format!r}", file=sys.stderr)
        return 2
    traces = read_traces(args.traces)
    if not traces:
        print(f"no traces found in {args.traces}", file=sys.stderr)
        return 1
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "iteration", "mean_cost", "ci99_lo", "ci99_hi"])
        for alg, rows in sorted(mean_curves(traces).items()):
            for it, m, lo, hi in rows:
                w.writerow([alg, it, f"{m:.6f}", f"{lo:.6f}", f"{hi:.6f}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popdcop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark instance as JSON")
    g.add_argument("--family", required=True, choices=sorted(FAMILIES))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-", help="output path, '-' for stdout")
    g.add_argument("--n", type=int)
    g.add_argument("--density", type=float)
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--m0", type=int)
    g.add_argument("--colors", type=int)
    g.add_argument("--domain-size", dest="domain_size", type=int)
    g.add_argument("--positions", type=int)
    g.add_argument("--cap", type=int, help="soft cap on agents per value (coloring)")
    g.add_argument("--cap-penalty", type=int, default=500)
    g.add_argument("--param", action="append", metavar="KEY=VALUE", help="any other generator argument")
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="run an experiment grid from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="override the output directory")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="summarise final costs of a run directory")
    c.add_argument("--traces", required=True, help="run output directory")
    c.add_argument("--out", help="summary CSV path (default: <traces>/summary.csv)")
    c.add_argument("--rs-mode", dest="rs_mode", default="per_instance", choices=["per_instance", "pooled"])
    c.set_defaults(func=_cmd_compare)

    e = sub.add_parser("export", help="export per-iteration mean curves")
    e.add_argument("--format", default="csv", choices=["csv"])
    e.add_argument("--traces", required=True, help="run output directory")
    e.add_argument("--out", default="-")
    e.set_defaults(func=_cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
