"""Command-line entry point (``wavesim``)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, dominance, harness, plots, tracking
from .config import load_config
from .errors import ConfigError, IoError, SchemaError, WavesimError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _add_run_options(p):
    p.add_argument("--config", required=True, type=Path, help="TOML experiment file")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out", type=Path, help="override the output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def _load(args, kinds):
    cfg = load_config(args.config).with_overrides(args.seed, args.out)
    if cfg.kind not in kinds:
        raise ConfigError(f"{args.config.name}.kind",
                          f"{cfg.kind!r} cannot run here (expected {' | '.join(kinds)})")
    return cfg


def cmd_sweep(args):
    cfg = _load(args, ("two_state", "joint", "pmiss", "short_horizon"))
    _, path = harness.run_sweep(cfg, args.jobs)
    print(path)


def _print_summary(rows):
    for r in rows:
        print(f"{r['x']:>15} ~ {r['y']:<28} pearson={analysis.format_value(r['pearson'])}"
              f"  spearman={analysis.format_value(r['spearman'])}")


def cmd_ensemble(args):
    cfg = _load(args, ("ensemble",))
    res = harness.run_ensemble(cfg, args.jobs)
    for path in res["paths"].values():
        print(path)
    _print_summary(res["summary"])


def cmd_tracking(args):
    if args.scene is not None:
        scene = tracking.load_scene_config(args.scene)
        rng = np.random.default_rng(args.seed)
        if args.policy == "rule":
            policy = tracking.RuleBasedPolicy(tracking.make_rule_lookup(scene))
        elif args.policy == "ts":
            policy = tracking.tracking_ts_policy(scene)
        else:
            policy = tracking.TrackingRandomPolicy(scene.n_waveforms)
        trace = tracking.run_tracking_episode(scene, policy, args.n, rng)
        out = args.episode or Path("tracking_episode.csv")
        trace.to_csv(out)
        print(f"{out}  K={scene.K}  R={scene.diagonal_dominance():.4f}  mean_loss={trace.mean_loss:.4f}")
        return
    if args.config is None:
        raise ConfigError("tracking", "give --config or --scene")
    cfg = _load(args, ("tracking_ensemble",))
    res = harness.run_tracking_ensemble(cfg, args.jobs)
    for path in res["paths"].values():
        print(path)
    _print_summary(res["summary"])


def _loss_column(path, column):
    table = analysis.read_table(path)
    if column is None:
        column = next((c for c in ("loss", "mean_loss_a") if c in table), None)
        if column is None:
            raise SchemaError(["loss"])
    analysis.require(table, [column])
    return table[column]


def cmd_dominance(args):
    a = _loss_column(args.a, args.column)
    b = _loss_column(args.b, args.column)
    rep = dominance.compare(a, b)
    print(f"mean_a={rep.mean_1:.6g} mean_b={rep.mean_2:.6g} fosd={rep.fosd} sosd={rep.sosd}")


def cmd_analyze(args):
    rows = analysis.analyze(args.csv, args.out)
    print(analysis.format_summary(rows))


def cmd_plot(args):
    for path in plots.render_plots(args.csv, args.kind, args.out, args.x, args.y):
        print(path)


def build_parser():
    parser = argparse.ArgumentParser(prog="wavesim", description="Waveform selection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="two-state parameter sweep")
    _add_run_options(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ensemble", help="random-channel ensemble")
    _add_run_options(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("tracking", help="tracking ensemble, or one scene episode")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--scene", type=Path, help="single scene TOML")
    p.add_argument("--policy", choices=("rule", "ts", "random"), default="rule")
    p.add_argument("-n", type=int, default=10_000)
    p.add_argument("--episode", type=Path, help="episode CSV path")
    p.set_defaults(func=cmd_tracking)

    p = sub.add_parser("dominance", help="FOSD/SOSD verdict between two loss samples")
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--b", required=True, type=Path)
    p.add_argument("--column", help="loss column (default: loss or mean_loss_a)")
    p.set_defaults(func=cmd_dominance)

    p = sub.add_parser("analyze", help="means and correlations of a result CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--out", type=Path, help="summary CSV path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="render SVG charts")
    p.add_argument("csv", type=Path)
    p.add_argument("--kind", action="append", required=True, choices=plots.KINDS)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--x")
    p.add_argument("--y")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WavesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
