"""Markov-chain engine: sampling, stationary distributions and channel analytics.

Transition matrices are plain ``numpy`` arrays of shape ``(K, K)`` whose rows
are probability vectors (``P[i, j] = P(s_t = j | s_{t-1} = i)``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bands
from .errors import (
    DegenerateVariance,
    EmptyRow,
    IoError,
    NegativeEntry,
    NonConvergence,
    RowSumError,
)

ROW_TOL = 1e-9


def validate(P, tol=ROW_TOL):
    """Check that ``P`` is a row-stochastic square matrix.

    Returns the matrix as a float array. Raises :class:`NegativeEntry` or
    :class:`RowSumError` when the matrix is not stochastic.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {P.shape}")
    if P.shape[0] == 0:
        raise ValueError("transition matrix is empty")
    if np.any(P < 0):
        i, j = np.argwhere(P < 0)[0]
        raise NegativeEntry(f"entry ({i}, {j}) is negative: {P[i, j]!r}")
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise RowSumError(bad[0], sums[bad[0]])
    return P


def sample_next(P, i, rng):
    """Draw the successor of state ``i``; consumes exactly one uniform."""
    u = rng.random()
    row = np.cumsum(P[i])
    j = int(np.searchsorted(row, u, side="right"))
    return min(j, len(row) - 1)


def _stationary_residual(mu, P):
    return float(np.max(np.abs(mu @ P - mu)))


def stationary_distribution(P, tol=1e-10, max_iter=10**6):
    """Stationary distribution by power iteration on the lazy chain.

    The iteration runs on ``0.01 I + 0.99 P``, which has the same fixed points
    as ``P`` but is aperiodic, so periodic chains such as ``[[0, 1], [1, 0]]``
    converge too. For moderate ``K`` the iteration operator is squared after
    every pass, so the number of chain steps applied doubles each time; the
    ``max_iter`` cap counts chain steps.
    """
    P = np.asarray(P, dtype=float)
    K = P.shape[0]
    step = 0.01 * np.eye(K) + 0.99 * P
    mu = np.full(K, 1.0 / K)
    steps, block = 0, 1
    square = K <= 1024
    residual = _stationary_residual(mu, P)
    while residual > tol:
        if steps >= max_iter:
            raise NonConvergence(steps, residual)
        mu = mu @ step
        mu /= mu.sum()
        steps += block
        residual = _stationary_residual(mu, P)
        if square:
            step = step @ step
            block *= 2
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def entropy_rate(P, mu=None):
    """Entropy rate of the chain in bits per step (``0 log 0 = 0``)."""
    P = np.asarray(P, dtype=float)
    if mu is None:
        mu = stationary_distribution(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log2(np.where(P > 0, P, 1.0)), 0.0)
    h = -float(mu @ terms.sum(axis=1))
    return max(h, 0.0)


def diagonal_dominance(P):
    """Correlation between row and column index, weighting cells by ``P``.

    Uses 1-based indices ``r = [1..K]`` and the aggregate sums
    ``n, sum x, sum y, sum x^2, sum y^2, sum xy`` of the Pearson formula.
    Equals 1 for a diagonal matrix and -1 for the anti-diagonal permutation.
    """
    A = np.asarray(P, dtype=float)
    K = A.shape[0]
    if A.ndim != 2 or K < 2 or A.shape[1] != K:
        raise ValueError("diagonal dominance needs a square matrix with K >= 2")
    r = np.arange(1, K + 1, dtype=float)
    r2 = r * r
    ones = np.ones(K)
    n = ones @ A @ ones
    sx = r @ A @ ones
    sy = ones @ A @ r
    sx2 = r2 @ A @ ones
    sy2 = ones @ A @ r2
    sxy = r @ A @ r
    var_x = n * sx2 - sx * sx
    var_y = n * sy2 - sy * sy
    scale = max(n * sx2, n * sy2, 1.0)
    if var_x <= 1e-12 * scale or var_y <= 1e-12 * scale:
        raise DegenerateVariance("row or column index has zero variance")
    value = (n * sxy - sx * sy) / (math.sqrt(var_x) * math.sqrt(var_y))
    return float(np.clip(value, -1.0, 1.0))


def is_diagonally_dominant(P):
    """Row test ``|P(m,m)| >= sum_{n != m} |P(m,n)|`` for every row (non-strict)."""
    A = np.abs(np.asarray(P, dtype=float))
    diag = np.diag(A)
    off = A.sum(axis=1) - diag
    return bool(np.all(diag >= off - 1e-12))


def expected_visits(P, s0, n):
    """Expected visits ``V_n(i) = sum_{t=1..n} (e_{s0} P^t)(i)``."""
    if n < 1:
        raise ValueError("horizon must be >= 1")
    P = np.asarray(P, dtype=float)
    dist = np.zeros(P.shape[0])
    dist[s0] = 1.0
    visits = np.zeros_like(dist)
    for _ in range(n):
        dist = dist @ P
        visits += dist
    return visits


def random_transition_matrix(K, rng, profile="dense", *, width=1, beta=0.0):
    """Random row-stochastic matrix.

    ``profile`` is one of

    * ``"dense"``: each row uniform on the simplex (normalized unit exponentials);
    * ``"banded"``: dense rows with entries outside ``|i - j| <= width`` zeroed,
      then renormalized;
    * ``"diagonal_weight"``: ``beta * I + (1 - beta) * dense``.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    E = rng.exponential(size=(K, K))
    if profile == "dense":
        pass
    elif profile == "banded":
        if width < 1:
            raise ValueError("band width must be >= 1")
        idx = np.arange(K)
        E = np.where(np.abs(idx[:, None] - idx[None, :]) <= width, E, 0.0)
    elif profile == "diagonal_weight":
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
    else:
        raise ValueError(f"unknown profile {profile!r}")
    sums = E.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise EmptyRow(f"row {int(np.flatnonzero(sums <= 0)[0])} is empty")
    P = E / sums
    if profile == "diagonal_weight":
        P = beta * np.eye(K) + (1.0 - beta) * P
    return validate(P)


@dataclass
class MarkovStats:
    stationary: np.ndarray
    entropy_rate_bits: float
    diagonal_dominance: float


def markov_stats(P):
    mu = stationary_distribution(P)
    return MarkovStats(mu, entropy_rate(P, mu), diagonal_dominance(P))


@dataclass
class TransitionClassification:
    """Transitions grouped by the outcome of acting on the SAA rule.

    ``setA`` holds collisions, ``setB`` missed opportunities without a
    collision, ``setC`` everything else.
    """

    setA: list = field(default_factory=list)
    setB: list = field(default_factory=list)
    setC: list = field(default_factory=list)

    def mass(self, P, which="A", mu=None):
        """Stationary probability ``sum mu_i P(i, j)`` of one set."""
        if mu is None:
            mu = stationary_distribution(P)
        pairs = getattr(self, "set" + which)
        return float(sum(mu[i] * P[i, j] for i, j in pairs))


def classify_transitions(channel):
    """Split the supported transitions of a channel by SAA outcome.

    The SAA action for each state uses the lowest-start widest vacancy, so the
    split is exact on channels whose states have a unique widest vacancy. The
    test is a direct overlap/vacancy check of that action against the next
    state.
    """
    P = np.asarray(channel.P)
    states = [np.asarray(s) for s in channel.states]
    actions = [bands.saa_waveform(s) for s in states]
    out = TransitionClassification()
    K = len(states)
    for i in range(K):
        for j in range(K):
            if P[i, j] <= 0:
                continue
            _, nc = bands.collision(actions[i], states[j])
            _, nmo = bands.missed_opportunity(actions[i], states[j])
            if nc > 0:
                out.setA.append((i, j))
            elif nmo > 0:
                out.setB.append((i, j))
            else:
                out.setC.append((i, j))
    return out


def saa_loss_bound(P, n, s0=0):
    """Upper bounds on the n-step expected SAA loss.

    Returns ``(exact_bound, stationary_bound, r_approx)``: the bound from the
    expected visit counts, its stationary limit ``n sum mu_i (1 - p_ii)``, and
    the ``n (1 - R)`` approximation.
    """
    P = np.asarray(P, dtype=float)
    stay = 1.0 - np.diag(P)
    visits = expected_visits(P, s0, n)
    exact = float(visits @ stay)
    mu = stationary_distribution(P)
    stationary = float(n * (mu @ stay))
    r_approx = float(n * (1.0 - diagonal_dominance(P)))
    return exact, stationary, r_approx


def save_csv(P, path):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in np.asarray(P):
                writer.writerow([repr(float(x)) for x in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_csv(path):
    """Load a K x K matrix written as K lines of comma-separated values."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = [
        [float(x) for x in line.split(",")]
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    return validate(np.array(rows, dtype=float))
