"""Stochastic-dominance comparisons of policy loss distributions.

Samples are losses, so smaller is better: ``A`` first-order dominates ``B``
when its CDF lies on or above ``B``'s everywhere.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from . import markov
from .errors import IoError

TOL = 1e-9


class Verdict(str, enum.Enum):
    FIRST = "first_dominates"
    SECOND = "second_dominates"
    NONE = "none"

    def __str__(self):
        return self.value


class Ecdf:
    """Right-continuous empirical CDF, ``F(x) = #{samples <= x} / n``."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empirical CDF needs at least one sample")
        self.samples = x

    def __call__(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.samples.size

    def __len__(self):
        return self.samples.size

    @property
    def mean(self):
        return float(self.samples.mean())


def _as_ecdf(F):
    return F if isinstance(F, Ecdf) else Ecdf(F)


def _grid(F1, F2):
    return np.union1d(F1.samples, F2.samples)


def _verdict(diff, tol):
    if np.all(diff >= -tol) and np.any(diff > tol):
        return Verdict.FIRST
    if np.all(diff <= tol) and np.any(diff < -tol):
        return Verdict.SECOND
    return Verdict.NONE


def fosd(F1, F2, tol=TOL):
    """First-order dominance between two loss samples.

    ``F1(x) >= F2(x)`` at every pooled sample point, strictly at one. The ECDFs
    are step functions that change only at sample points, so the pooled grid
    covers every x.
    """
    F1, F2 = _as_ecdf(F1), _as_ecdf(F2)
    g = _grid(F1, F2)
    return _verdict(F1(g) - F2(g), tol)


def upper_tail_integral(F1, F2):
    """``I(x) = integral_x^inf (F1 - F2) dt`` at each pooled grid point.

    Exact for the step ECDFs (the difference is constant between grid
    points). ``I(min)`` equals ``mean_2 - mean_1``.
    """
    F1, F2 = _as_ecdf(F1), _as_ecdf(F2)
    g = _grid(F1, F2)
    diff = F1(g) - F2(g)
    pieces = diff[:-1] * np.diff(g)
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return g, tail


def sosd(F1, F2, tol=TOL):
    """Second-order (risk-averse) dominance between two loss samples.

    For losses every increasing convex penalty prefers ``F1`` exactly when
    ``E[(L1 - x)+] <= E[(L2 - x)+]`` for all x, i.e. when the upper-tail
    integral of ``F1 - F2`` is non-negative everywhere.
    """
    _, tail = upper_tail_integral(F1, F2)
    return _verdict(tail, tol)


@dataclass
class DominanceReport:
    fosd: Verdict
    sosd: Verdict
    mean_1: float
    mean_2: float
    statewise: dict | None = None
    lta: tuple | None = None


def compare(samples_1, samples_2, tol=TOL):
    F1, F2 = Ecdf(samples_1), Ecdf(samples_2)
    return DominanceReport(fosd(F1, F2, tol), sosd(F1, F2, tol), F1.mean, F2.mean)


def statewise_dominance(channel, policy1, policy2, params=None, loss_table=None):
    """Per-state expected one-transition loss of two state-to-arm maps.

    Returns ``(table, overall)`` where ``table`` has the per-state losses of
    each policy and the boolean ``loss_1 <= loss_2``.
    """
    P = np.asarray(channel.P)
    if loss_table is None:
        loss_table = channel.loss_table(params) if params is not None else channel.loss_table()
    L = np.asarray(loss_table, dtype=float)

    def expected(arms):
        arms = np.asarray(arms, dtype=np.int64)
        return np.einsum("ij,ji->i", P, L[:, arms])

    l1, l2 = expected(policy1), expected(policy2)
    holds = l1 <= l2 + TOL
    table = {"loss_1": l1, "loss_2": l2, "dominates": holds}
    return table, bool(np.all(holds))


@dataclass
class DominanceProbability:
    channel_id: int
    entropy_rate_bits: float
    diag_dominance: float
    report: DominanceReport
    p_fosd_a: float
    p_fosd_b: float
    p_sosd_a: float
    p_sosd_b: float

    def scatter_row(self):
        return {
            "channel_id": self.channel_id,
            "entropy_rate_bits": self.entropy_rate_bits,
            "diag_dominance": self.diag_dominance,
            "mean_loss_a": self.report.mean_1,
            "mean_loss_b": self.report.mean_2,
            "fosd": str(self.report.fosd),
            "sosd": str(self.report.sosd),
        }


SCATTER_COLUMNS = ["channel_id", "entropy_rate_bits", "diag_dominance",
                   "mean_loss_a", "mean_loss_b", "fosd", "sosd"]


def bootstrap_verdicts(samples_a, samples_b, rng, n_boot=200, tol=TOL):
    """Fractions of bootstrap resamples in which each side dominates.

    Returns ``(p_fosd_a, p_fosd_b, p_sosd_a, p_sosd_b)``.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    counts = np.zeros(4)
    for _ in range(n_boot):
        ra = a[rng.integers(a.size, size=a.size)]
        rb = b[rng.integers(b.size, size=b.size)]
        F1, F2 = Ecdf(ra), Ecdf(rb)
        first = fosd(F1, F2, tol)
        second = sosd(F1, F2, tol)
        counts += [first is Verdict.FIRST, first is Verdict.SECOND,
                   second is Verdict.FIRST, second is Verdict.SECOND]
    return tuple(float(c) for c in counts / n_boot)


def dominance_from_samples(channel_id, P, samples_a, samples_b, rng, n_boot=200):
    return DominanceProbability(
        channel_id,
        markov.entropy_rate(P),
        markov.diagonal_dominance(P),
        compare(samples_a, samples_b),
        *bootstrap_verdicts(samples_a, samples_b, rng, n_boot),
    )


def dominance_probability(channels, policy_factories, n, replications, rng,
                          params=None, n_boot=200):
    """Dominance of policy ``a`` over ``b`` on each channel of an ensemble.

    Each replication contributes one sample per policy: its episode-average
    loss. ``policy_factories`` is a pair of callables ``channel -> policy``.
    """
    from .bands import LossParams
    from .spectrum import run_episode

    if replications < 2:
        raise ValueError("need at least two replications per channel")
    params = params or LossParams()
    make_a, make_b = policy_factories
    out = []
    for cid, channel in enumerate(channels):
        seeds = rng.integers(2**63, size=replications)
        la = [run_episode(channel, make_a(channel), params, n=n,
                          rng=np.random.default_rng(s)).mean_loss for s in seeds]
        lb = [run_episode(channel, make_b(channel), params, n=n,
                          rng=np.random.default_rng(s)).mean_loss for s in seeds]
        out.append(dominance_from_samples(cid, channel.P, la, lb, rng, n_boot))
    return out


def write_scatter(rows, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SCATTER_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow(r.scatter_row() if isinstance(r, DominanceProbability) else r)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
