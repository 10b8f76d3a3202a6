"""
Command-line entry point.

    python iob.py ingest --input checkins.tsv --bbox 39.433333,41.05,115.416666,117.5 --out nodes.csv
    python iob.py cluster --nodes nodes.csv --eps1 20000 --eps2 4 --minpts 3
    python iob.py exp consensus --config exp.env --seed 7 --out results
    python iob.py synth --out checkins.tsv --locations 6000
"""
import argparse
import sys
from pathlib import Path

from config.experiment_defaults import BEIJING_BBOX, EXPERIMENTS
from config.settings import SEED
from src.core.clustering import DbscanParams, assign_roles, cluster
from src.core.errors import IobError
from src.core.logger.log_setup import log_setup
from src.core.logger.logger import Logger
from src.harness.config import load_config
from src.harness.experiments import run_experiment
from src.harness.ingest import BBox, ingest, synthetic_checkins, write_checkins
from src.harness.metrics import write_result
from src.models.node import read_nodes, write_nodes

log = Logger("cli").log


def cmd_ingest(args: argparse.Namespace):
    nodes = ingest(args.input, BBox.parse(args.bbox), seed=args.seed,
                   capability_range=(args.cap_low, args.cap_high))
    write_nodes(nodes, args.out)
    log.info(f"✅ {len(nodes)} nodes written to {args.out}")


def cmd_cluster(args: argparse.Namespace):
    nodes = read_nodes(args.nodes)
    assignment = cluster(nodes, DbscanParams(args.eps1, args.eps2, args.minpts, args.metric))
    roles = assign_roles(assignment, nodes)
    if args.out:
        assignment.to_csv(args.out, roles)
        log.info(f"✅ Assignment written to {args.out}")
    else:
        assignment.to_frame(roles).to_csv(sys.stdout, index=False)
    log.info(f"{assignment.count} clusters, {len(assignment.noise())} noise nodes, "
             f"largest cluster {assignment.largest_fraction():.2%}")


def cmd_exp(args: argparse.Namespace):
    overrides = {"sim.seed": args.seed, "output.dir": args.out}
    cfg = load_config(args.experiment, args.config, **overrides)
    result = run_experiment(cfg)
    write_result(result, cfg)


def cmd_synth(args: argparse.Namespace):
    df = synthetic_checkins(args.locations, args.seed, BBox.parse(args.bbox))
    write_checkins(df, args.out)
    log.info(f"✅ {len(df)} synthetic check-ins written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iob", description="Decentralized IoB stack: simulation and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Gowalla check-ins -> node table")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--bbox", default=BEIJING_BBOX, help="lat1,lat2,lon1,lon2")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=SEED, help="Seed of the capability draw")
    p.add_argument("--cap-low", type=float, default=1.0)
    p.add_argument("--cap-high", type=float, default=10.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", help="Dual-metric DBSCAN over a node table")
    p.add_argument("--nodes", required=True, type=Path)
    p.add_argument("--eps1", required=True, type=float, help="Spatial radius, metres")
    p.add_argument("--eps2", required=True, type=float, help="Capability radius")
    p.add_argument("--minpts", required=True, type=int)
    p.add_argument("--metric", default="haversine", choices=["haversine", "planar"])
    p.add_argument("--out", type=Path, help="CSV path; stdout when omitted")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("exp", help="Run an experiment and write its metrics")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="key=value configuration file")
    p.add_argument("--seed", type=int, help="Overrides sim.seed")
    p.add_argument("--out", help="Overrides output.dir")
    p.set_defaults(func=cmd_exp)

    p = sub.add_parser("synth", help="Write a synthetic Gowalla-layout check-in file")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--locations", type=int, default=6000)
    p.add_argument("--bbox", default=BEIJING_BBOX, help="lat1,lat2,lon1,lon2")
    p.add_argument("--seed", type=int, default=SEED)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    log_setup()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (IobError, ValueError) as e:
        log.error(f"❌ {args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
