"""Command line front end: run experiments, print load reports, compare runs."""

from __future__ import annotations

import argparse
import os
import sys

from .load_model import (estimate_cqi_load, estimate_lsa_load,
                         estimate_traffic_map_load, format_load_report)
from .runner import compare_arms, run_experiment
from .scenario import ScenarioError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsmsim")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--scenario", default=None, help="scenario JSON file")
    run.add_argument("--use-case", default="baseline",
                     choices=["A", "B", "C", "baseline"])
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--duration", type=float, default=None, metavar="S")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--i-max-dbm", type=float, default=None,
                     help="aggregate interference cap at the protected user")
    run.add_argument("--policies", default=None, help="policy store JSON file")
    run.add_argument("--dump-channel", action="store_true",
                     help="also write per-RB serving-link gains for victims")

    load = sub.add_parser("load-report", help="print the worst-case load table")
    load.add_argument("--n-bs", type=int, default=12)
    load.add_argument("--n-rb", type=int, default=100)
    load.add_argument("--raster-m", type=float, default=1.0)
    load.add_argument("--area-m", type=float, default=40.0,
                      help="square map side used for the cell count")

    cmp_ = sub.add_parser("compare", help="align windowed summaries of runs")
    cmp_.add_argument("--arms", nargs="+", required=True, metavar="DIR")
    cmp_.add_argument("--out", default=None, help="optional comparison CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = os.environ.get("RSMSIM_VERBOSE", "") not in ("", "0")
    if args.command == "load-report":
        cells = int((args.area_m / args.raster_m) ** 2)
        print(format_load_report(
            estimate_lsa_load(n_bs=args.n_bs, n_rb=args.n_rb),
            estimate_cqi_load(n_rb=args.n_rb, n_bs=args.n_bs),
            estimate_traffic_map_load(n_cells=cells, n_rb=args.n_rb)))
        return 0
    if args.command == "compare":
        try:
            rows = compare_arms(args.arms, out_path=args.out)
        except (ValueError, OSError) as e:
            print("comparison failed: %s" % e, file=sys.stderr)
            return 2
        for r in rows:
            print(r)
        return 0
    try:
        result = run_experiment(
            use_case=args.use_case, seed=args.seed, duration_s=args.duration,
            out_dir=args.out, scenario_path=args.scenario,
            i_max_dbm=args.i_max_dbm, policy_path=args.policies,
            dump_channel=args.dump_channel)
    except ScenarioError as e:
        print("scenario error at %s: %s" % (e.field_path, e), file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print("run failed: %s" % e, file=sys.stderr)
        return 2
    if verbose:
        print("metadata: %s" % result.metadata)
    print("results written to %s" % result.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
