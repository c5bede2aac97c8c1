"""Command-line entry point.

Subcommands map onto experiment kinds; each writes CSV tables, figures and
a manifest to ``--out`` and exits 0 only if every gate passed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments as ex
from .config import dump_config, load_config
from .percolation import explore_cluster, write_cluster_csv

SEED_ENV = "ANISOPERC_SEED"

_SUBCOMMANDS = {
    "scan": ["kappa_scan", "exponent_fit"],
    "branching": ["branching_suite", "dominating_branching"],
    "cluster": ["cluster_scaling"],
    "spde": ["spde_suite"],
    "renorm": ["renorm_suite"],
}


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anisoperc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="key = value or JSON config file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
        sp.add_argument("--scale", type=float, default=1.0, help="replicate-count multiplier")
        sp.add_argument("--no-figures", action="store_true", help="skip SVG/PNG output")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name in _SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiments")
        common(sp)
        sp.add_argument("--plan", type=Path, help="JSON experiment plan (overrides the default plan)")
        if name == "cluster":
            sp.add_argument("--explore", action="store_true",
                            help="also explore the layer-0 cluster of the config lattice and write it")
    rp = sub.add_parser("report", help="run every suite, or replay a manifest")
    common(rp)
    rp.add_argument("--manifest", type=Path, help="replay the plans recorded in this manifest")
    rp.add_argument("--kinds", nargs="*", default=None, help="restrict to these experiment kinds")
    return p


def _plans(args, kinds) -> list:
    seed = _seed(args)
    extra = {}
    if args.config is not None:
        run = load_config(args.config)
        extra = dict(run.extra)
    plans = []
    for kind in kinds:
        params = dict(extra.get(kind, {})) if isinstance(extra.get(kind), dict) else {}
        plans.append(ex.default_plan(kind, seed=seed, out=str(args.out), scale=args.scale, **params))
    return plans


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    if args.command == "report":
        if args.manifest is not None:
            plans = ex.plans_from_manifest(args.manifest)
            for pl in plans:
                pl.out = str(args.out)
        else:
            kinds = args.kinds or [k for ks in _SUBCOMMANDS.values() for k in ks]
            plans = _plans(args, kinds)
    elif getattr(args, "plan", None) is not None:
        data = json.loads(args.plan.read_text())
        plans = [ex.ExperimentPlan.from_dict(d) for d in (data if isinstance(data, list) else [data])]
    else:
        plans = _plans(args, _SUBCOMMANDS[args.command])

    results = []
    shared = {}
    for pl in plans:
        if pl.kind in ("kappa_scan", "exponent_fit"):
            key = (tuple(pl.grid.get("N", [32, 128, 512])), pl.seed, pl.reps, pl.scale,
                   json.dumps(pl.params.get("box", {}), sort_keys=True))
            if key not in shared:
                shared[key] = ex.scan_thresholds(pl)
            fn = ex.run_kappa_scan if pl.kind == "kappa_scan" else ex.run_exponent_fit
            results.append(fn(pl, shared[key]))
        else:
            results.append(ex.run_plan(pl))

    if getattr(args, "explore", False) and args.config is not None:
        run = load_config(args.config)
        cl = explore_cluster(run.lattice, caps=run.caps)
        write_cluster_csv(cl, args.out / "cluster_sites.csv")
        (args.out / "cluster_config.txt").write_text(dump_config(run))

    manifest = ex.emit_report(results, args.out, figures=not args.no_figures)
    for kind, gates in manifest["gates"].items():
        for name, g in gates.items():
            print(f"{'PASS' if g['passed'] else 'FAIL'} {kind}.{name}: {g['detail']}")
    print(f"wrote {len(manifest['files'])} files to {args.out}")
    return 0 if manifest["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
