"""Seeded experiment runs: parameter sweeps, channel ensembles, tracking ensembles.

Every replication draws its random stream from a seed derived by hashing the
base seed with the task's indices, so results do not depend on execution
order and parallel runs write the same bytes as serial ones.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dominance, markov, policies, tracking
from .analysis import UNDEFINED, correlation
from .bands import LossParams, SinrParams
from .errors import IoError
from .spectrum import ChannelModel, random_channel, run_episode

METRICS = ("collision_rate", "mo_rate", "mean_loss", "mean_sinr_db")


def seed_for(base, *parts):
    """Stable 64-bit seed: the base seed plus a hash of the task indices."""
    key = ":".join(str(p) for p in parts).encode()
    h = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return (int(base) + h) % 2**64


def _fmt(v):
    if v is None:
        return UNDEFINED
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_rows(rows, path, columns=None):
    path = Path(path)
    columns = columns or list(rows[0])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in columns])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def _map(fn, tasks, jobs):
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [fn(t) for t in tasks]


# -- spectrum policies -------------------------------------------------------

def bellman_policy(channel, params, alpha):
    """Table policy from discounted value iteration; a missed observation
    falls back to the arm with the least stationary expected loss."""
    L = channel.loss_table(params)
    vf = policies.value_iteration(channel, L, alpha)
    mu = markov.stationary_distribution(channel.P)
    miss = int(np.argmin(mu @ channel.P @ L))
    return policies.TablePolicy(channel, vf.policy, miss_arm=miss)


def make_policy(name, channel, cfg_or_scale, params=None, alpha=0.9):
    scale = getattr(cfg_or_scale, "ts_scale", cfg_or_scale)
    if name == "saa":
        return policies.SaaPolicy(channel.d)
    if name == "ts":
        return policies.TsPolicy.for_channel(channel, scale)
    if name == "random":
        return policies.RandomPolicy(channel.n_arms)
    if name == "bellman":
        return bellman_policy(channel, params or LossParams(), alpha)
    raise ValueError(f"unknown policy {name!r}")


def _point_params(cfg, point):
    p = cfg.params
    vals = {"p12": p.p12, "p21": p.p21, "p_miss": p.p_miss, "eta": p.eta}
    if "p" in point:
        vals["p12"] = vals["p21"] = point["p"]
    vals.update({k: v for k, v in point.items() if k != "p"})
    return vals


def _policy_metrics(name, trace):
    return {f"{name}_{m}": getattr(trace, m) for m in METRICS}


def _sweep_task(task):
    cfg, g, r, point = task
    vals = _point_params(cfg, point)
    channel = ChannelModel.two_state(vals["p12"], vals["p21"], cfg.params.states)
    params = LossParams(vals["eta"])
    sinr = SinrParams(cfg.params.snr0_db, cfg.params.inr_db)
    seed = seed_for(cfg.seed, g, r)
    row = {"grid_index": g, "replication": r, "seed": seed}
    row.update({a.name: point[a.name] for a in cfg.grid})
    row.update({k: vals[k] for k in ("p12", "p21", "p_miss", "eta")})
    row["n"] = cfg.n
    row["entropy_rate"] = markov.entropy_rate(channel.P)
    row["diag_dominance"] = markov.diagonal_dominance(channel.P)
    for name in cfg.policies:
        pol = make_policy(name, channel, cfg, params, cfg.params.alpha)
        trace = run_episode(channel, pol, params, vals["p_miss"], cfg.n,
                            np.random.default_rng(seed), sinr)
        row.update(_policy_metrics(name, trace))
    return row


def sweep_columns(cfg):
    cols = ["grid_index", "replication", "seed"]
    cols += [a.name for a in cfg.grid if a.name not in ("p12", "p21", "p_miss", "eta")]
    cols += ["p12", "p21", "p_miss", "eta", "n", "entropy_rate", "diag_dominance"]
    cols += [f"{p}_{m}" for p in cfg.policies for m in METRICS]
    return cols


def run_sweep(cfg, jobs=1):
    """Run a two-state parameter sweep; one result row per (grid point, replication).

    Returns the rows and writes ``<out>/<kind>.csv``.
    """
    tasks = [(cfg, g, r, pt) for g, pt in enumerate(cfg.points())
             for r in range(cfg.replications)]
    rows = _map(_sweep_task, tasks, jobs)
    rows.sort(key=lambda row: (row["grid_index"], row["replication"]))
    path = write_rows(rows, Path(cfg.out) / f"{cfg.kind}.csv", sweep_columns(cfg))
    return rows, path


# -- channel ensemble --------------------------------------------------------

def ensemble_channel(cfg, c):
    e = cfg.ensemble
    rng = np.random.default_rng(seed_for(cfg.seed, "channel", c))
    return random_channel(e.K, rng, e.d, e.profile, width=e.width, cover=e.cover)


def _ensemble_task(task):
    cfg, c = task
    e = cfg.ensemble
    channel = ensemble_channel(cfg, c)
    params = LossParams(cfg.params.eta)
    sinr = SinrParams(cfg.params.snr0_db, cfg.params.inr_db)
    H = markov.entropy_rate(channel.P)
    R = markov.diagonal_dominance(channel.P)
    names = list(dict.fromkeys([*cfg.policies, e.policy_a, e.policy_b]))
    rows = []
    for r in range(cfg.replications):
        seed = seed_for(cfg.seed, c, r)
        row = {"channel_id": c, "replication": r, "seed": seed,
               "entropy_rate": H, "diag_dominance": R}
        for name in names:
            pol = make_policy(name, channel, cfg, params, cfg.params.alpha)
            trace = run_episode(channel, pol, params, cfg.params.p_miss, cfg.n,
                                np.random.default_rng(seed), sinr)
            row.update(_policy_metrics(name, trace))
        rows.append(row)
    la = [row[f"{e.policy_a}_mean_loss"] for row in rows]
    lb = [row[f"{e.policy_b}_mean_loss"] for row in rows]
    boot = np.random.default_rng(seed_for(cfg.seed, "bootstrap", c))
    dom = dominance.dominance_from_samples(c, channel.P, la, lb, boot, e.n_boot)
    return rows, dom


ENSEMBLE_DOMINANCE_COLUMNS = ["channel_id", "entropy_rate_bits", "diag_dominance",
                              "policy_a", "policy_b", "fosd", "sosd",
                              "p_fosd_a", "p_fosd_b", "p_sosd_a", "p_sosd_b"]


def run_ensemble(cfg, jobs=1):
    """Random-channel ensemble.

    Writes ``scatter.csv`` (one row per channel), ``ensemble_metrics.csv``
    (one row per channel and replication), ``dominance.csv`` (verdicts and
    bootstrap verdict probabilities) and ``summary.csv`` (correlations of
    the channel analytics with per-channel mean metrics). Returns a dict of
    the written paths and the summary rows.
    """
    e = cfg.ensemble
    results = _map(_ensemble_task, [(cfg, c) for c in range(e.count)], jobs)
    out = Path(cfg.out)
    metrics = [row for rows, _ in results for row in rows]
    doms = [d for _, d in results]
    names = list(dict.fromkeys([*cfg.policies, e.policy_a, e.policy_b]))
    mcols = ["channel_id", "replication", "seed", "entropy_rate", "diag_dominance"]
    mcols += [f"{p}_{m}" for p in names for m in METRICS]
    paths = {
        "metrics": write_rows(metrics, out / "ensemble_metrics.csv", mcols),
        "scatter": write_rows([d.scatter_row() for d in doms], out / "scatter.csv",
                              dominance.SCATTER_COLUMNS),
    }
    dom_rows = [{**d.scatter_row(), "policy_a": e.policy_a, "policy_b": e.policy_b,
                 "p_fosd_a": d.p_fosd_a, "p_fosd_b": d.p_fosd_b,
                 "p_sosd_a": d.p_sosd_a, "p_sosd_b": d.p_sosd_b} for d in doms]
    paths["dominance"] = write_rows(dom_rows, out / "dominance.csv", ENSEMBLE_DOMINANCE_COLUMNS)

    per_channel = channel_means(metrics, [f"{p}_{m}" for p in names for m in METRICS])
    summary = correlation_summary(per_channel, ["diag_dominance", "entropy_rate"],
                                  [f"{p}_{m}" for p in names for m in ("collision_rate", "mean_loss")])
    paths["summary"] = write_rows(summary, out / "summary.csv", SUMMARY_COLUMNS)
    return {"paths": paths, "summary": summary, "dominance": doms, "per_channel": per_channel}


def channel_means(rows, metric_cols, key="channel_id"):
    """Average metric columns over replications, one dict per channel."""
    groups = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row)
    out = []
    for cid in sorted(groups):
        g = groups[cid]
        rec = {key: cid, "entropy_rate": g[0]["entropy_rate"],
               "diag_dominance": g[0]["diag_dominance"]}
        rec.update({c: float(np.mean([r[c] for r in g])) for c in metric_cols})
        out.append(rec)
    return out


SUMMARY_COLUMNS = ["x", "y", "n", "pearson", "spearman"]


def correlation_summary(rows, xs, ys):
    out = []
    for x in xs:
        for y in ys:
            a = np.array([r[x] for r in rows], dtype=float)
            b = np.array([r[y] for r in rows], dtype=float)
            out.append({"x": x, "y": y, "n": len(a),
                        "pearson": correlation(a, b, "pearson"),
                        "spearman": correlation(a, b, "spearman")})
    return out


# -- tracking ensemble -------------------------------------------------------

def tracking_scene(cfg, s):
    t = cfg.tracking
    rng = np.random.default_rng(seed_for(cfg.seed, "scene", s))
    band = int(rng.choice(np.asarray(t.bands)))
    beta = float(rng.random())
    profile = tracking.LossProfile(**t.loss_profile)
    scene = tracking.random_scene(rng, t.targets, t.n_pos, t.n_vel, band, beta,
                                  t.n_waveforms, profile, tuple(t.accuracy), t.cap)
    return scene, band, beta, rng


def make_tracking_policy(name, scene, cfg, lookup=None):
    t = cfg.tracking
    if name == "rule":
        return tracking.RuleBasedPolicy(tracking.make_rule_lookup(scene) if lookup is None else lookup)
    if name == "ts":
        return tracking.tracking_ts_policy(scene, cfg.ts_scale, t.n_buckets, t.features)
    if name == "random":
        return tracking.TrackingRandomPolicy(scene.n_waveforms)
    raise ValueError(f"unknown tracking policy {name!r}")


def _tracking_task(task):
    cfg, s = task
    scene, band, beta, _ = tracking_scene(cfg, s)
    t = cfg.tracking
    lookup = tracking.make_rule_lookup(
        scene, t.lookup, t.perturb, np.random.default_rng(seed_for(cfg.seed, "lookup", s)))
    base = {"scene_id": s, "band": band, "beta": beta, "K": scene.K,
            "entropy_rate": scene.entropy_rate(),
            "diag_dominance": scene.diagonal_dominance()}
    rows = []
    for r in range(cfg.replications):
        seed = seed_for(cfg.seed, s, r)
        row = {**base, "replication": r, "seed": seed}
        losses = {}
        for name in cfg.policies:
            pol = make_tracking_policy(name, scene, cfg, lookup)
            trace = tracking.run_tracking_episode(scene, pol, cfg.n, np.random.default_rng(seed))
            row[f"{name}_mean_loss"] = trace.mean_loss
            losses[name] = trace.loss
        if "ts" in losses and "rule" in losses:
            rep = dominance.compare(losses["ts"], losses["rule"])
            row["fosd"], row["sosd"] = str(rep.fosd), str(rep.sosd)
        else:
            row["fosd"] = row["sosd"] = str(dominance.Verdict.NONE)
        rows.append(row)
    return rows


def run_tracking_ensemble(cfg, jobs=1):
    """Random banded tracking scenes; writes ``tracking.csv`` and
    ``tracking_summary.csv``. Verdict columns compare TS (first) with the
    rule (second) on per-CPI losses."""
    results = _map(_tracking_task, [(cfg, s) for s in range(cfg.tracking.scenes)], jobs)
    rows = [row for rs in results for row in rs]
    cols = ["scene_id", "replication", "seed", "band", "beta", "K", "entropy_rate",
            "diag_dominance"] + [f"{p}_mean_loss" for p in cfg.policies] + ["fosd", "sosd"]
    out = Path(cfg.out)
    paths = {"results": write_rows(rows, out / "tracking.csv", cols)}
    per_scene = channel_means(rows, [f"{p}_mean_loss" for p in cfg.policies], key="scene_id")
    summary = correlation_summary(per_scene, ["diag_dominance", "entropy_rate"],
                                  [f"{p}_mean_loss" for p in cfg.policies])
    paths["summary"] = write_rows(summary, out / "tracking_summary.csv", SUMMARY_COLUMNS)
    return {"paths": paths, "rows": rows, "per_scene": per_scene, "summary": summary}


def run(cfg, jobs=1):
    """Dispatch on the configured kind."""
    if cfg.kind == "ensemble":
        return run_ensemble(cfg, jobs)
    if cfg.kind == "tracking_ensemble":
        return run_tracking_ensemble(cfg, jobs)
    return run_sweep(cfg, jobs)
