"""
Command line entry point.

    fedmr run CONFIG            train and write rounds.jsonl + summary.json
    fedmr verify                run the property battery
    fedmr dump-features CONFIG  train, then write unit-sphere features as CSV
    fedmr partition-stats CONFIG  per-client class histogram as CSV

Exit status: 0 success, 1 failure (including failed checks), 2 bad config.
Errors go to stderr as one JSON object with ``category`` and ``message``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from fedmr.config import ExperimentConfig, parse_config
from fedmr.data import class_histogram
from fedmr.errors import ConfigError, FedMRError
from fedmr.experiments import build, execute, sphere_projection
from fedmr.federation import write_reports
from fedmr.losses import STD_FLOOR
from fedmr.model import features

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.out is not None:
        changes["output"] = args.out
    return cfg.with_overrides(**changes) if changes else cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_features(path: Path, points, labels) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        names = ["x", "y", "z"] if points.shape[1] == 3 else [f"f{i}" for i in range(points.shape[1])]
        w.writerow(names + ["label"])
        for p, c in zip(points, labels):
            w.writerow([format(v, ".17g") for v in p] + [int(c)])


def _features(setup, params, out: Path, figures: bool) -> dict:
    if params.spec.feature_dim == 3:
        points, labels, skipped = sphere_projection(params, setup.test)
    else:
        # no sphere for other widths: raw dump
        points, labels, skipped = features(params, setup.test.features), setup.test.labels, 0
    _write_features(out / "features.csv", points, labels)
    if figures and points.shape[1] == 3:
        from fedmr.plots import sphere_scatter

        sphere_scatter(points, labels, out / "features.png")
    return {"features_csv": str(out / "features.csv"), "rows": int(len(labels)), "skipped_zero_norm": skipped}


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    setup, result = execute(cfg)
    write_reports(result.reports, out / "rounds.jsonl")
    summary = {"algorithm": cfg.algorithm, "partition": cfg.partition.label, "seed": cfg.seed, **result.summary}
    if cfg.feature_dump:
        summary["feature_dump"] = _features(setup, result.final.params, out, args.figures)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.figures:
        from fedmr.plots import accuracy_curve

        accuracy_curve([r.accuracy for r in result.reports], out / "accuracy.png", label=cfg.algorithm)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_dump_features(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    setup, result = execute(cfg)
    info = _features(setup, result.final.params, out, args.figures)
    if info["skipped_zero_norm"]:
        print(json.dumps({"warning": "zero-norm features skipped", "count": info["skipped_zero_norm"]}), file=sys.stderr)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_partition_stats(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    setup = build(cfg)
    hist = class_histogram(setup.shards, setup.train)
    path = out / "partition.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client"] + [f"c{c}" for c in range(hist.shape[1])])
        for shard, row in zip(setup.shards, hist):
            w.writerow([shard.client_id, *map(int, row)])
    if args.figures:
        from fedmr.plots import partition_heatmap

        partition_heatmap(hist, out / "partition.png")
    print(json.dumps({"partition_csv": str(path), "clients": len(setup.shards), "label": cfg.partition.label}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from fedmr.verify import run_checks

    results = run_checks(eps=args.std_floor)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:6.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(json.dumps({"category": "verification", "message": "failed: " + ", ".join(failed)}), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="clients trained in parallel per round")
    common.add_argument("--out", help="output directory (overrides config 'output')")
    common.add_argument("--figures", action="store_true", help="also render PNG figures")

    parser = argparse.ArgumentParser(prog="fedmr", description="Federated manifold-reshaping simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="train and write round reports").set_defaults(func=cmd_run)
    sub.add_parser("dump-features", parents=[common], help="train, then dump sphere-projected features").set_defaults(
        func=cmd_dump_features
    )
    sub.add_parser("partition-stats", parents=[common], help="per-client class histogram").set_defaults(
        func=cmd_partition_stats
    )
    verify = sub.add_parser("verify", help="run the property-verification battery")
    verify.add_argument("--std-floor", type=float, default=STD_FLOOR, help=argparse.SUPPRESS)
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"category": exc.category, "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except FedMRError as exc:
        print(json.dumps({"category": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(json.dumps({"category": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
