"""Waveform-selection policies and policy evaluation.

Policies share a two-method interface::

    select(obs, rng) -> waveform index
    update(obs, action, loss) -> None

``obs`` is whatever the environment shows the policy before it acts: the
previous observation vector for spectrum access, the belief vector for
tracking. Fixed rules ignore ``update``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bands, kernels, markov
from .bands import LossParams
from .errors import IoError, NonConvergence, NumericalError

TS_SCALE = 0.75


class SaaPolicy:
    """Sense-and-avoid: transmit in the widest vacancy of the last observation."""

    kernel_kind = kernels.SAA

    def __init__(self, d):
        self.d = d

    def select(self, obs, rng):
        return bands.waveform_index(bands.saa_waveform(obs, rng), self.d)

    def update(self, obs, action, loss):
        pass


def saa_select(o, rng):
    return bands.waveform_index(bands.saa_waveform(o, rng), len(o))


class RandomPolicy:
    kernel_kind = kernels.RANDOM

    def __init__(self, n_arms):
        self.n_arms = n_arms

    def select(self, obs, rng):
        return random_select(rng, self.n_arms)

    def update(self, obs, action, loss):
        pass


def random_select(rng, n_arms):
    """Uniform arm from one uniform draw."""
    return min(int(rng.random() * n_arms), n_arms - 1)


class TablePolicy:
    """Fixed map from the previous channel state to an arm.

    The observation is matched against the channel's state vectors; an
    unmatched observation (a missed detection) uses ``miss_arm``.
    """

    kernel_kind = kernels.TABLE

    def __init__(self, channel, arms, miss_arm=None):
        self.arms = np.asarray(arms, dtype=np.int64)
        if len(self.arms) != channel.K:
            raise ValueError("need one arm per channel state")
        self.miss_arm = int(self.arms[0] if miss_arm is None else miss_arm)
        self._lookup = {tuple(int(b) for b in s): int(a) for s, a in zip(channel.states, self.arms)}
        self._channel = channel

    def select(self, obs, rng):
        return self._lookup.get(tuple(int(b) for b in obs), self.miss_arm)

    def update(self, obs, action, loss):
        pass

    def table_for(self, channel):
        """Per observation-pattern arm (K states, then all zeros) for the kernel."""
        out = [self.select(p, None) for p in channel.patterns()]
        return np.array(out, dtype=np.int64)


@dataclass
class TsPosterior:
    """Per-arm Bayesian linear model ``E[loss | x, arm] = x . theta_arm``.

    ``B`` is the precision matrix (identity prior), ``f`` the moment vector,
    ``B_inv`` the maintained inverse; ``scale`` multiplies the posterior
    standard deviation when sampling.
    """

    B: np.ndarray
    f: np.ndarray
    B_inv: np.ndarray
    scale: float = TS_SCALE

    @classmethod
    def fresh(cls, n_arms, dim, scale=TS_SCALE):
        if scale <= 0:
            raise ValueError("sampling scale must be positive")
        eye = np.broadcast_to(np.eye(dim), (n_arms, dim, dim))
        return cls(eye.copy(), np.zeros((n_arms, dim)), eye.copy(), float(scale))

    @property
    def n_arms(self):
        return self.f.shape[0]

    @property
    def dim(self):
        return self.f.shape[1]

    def mean(self):
        """Posterior means ``B_a^-1 f_a`` as an ``(arms, dim)`` array."""
        return np.einsum("akl,al->ak", self.B_inv, self.f)

    def predicted_loss(self, x):
        return self.mean() @ np.asarray(x, dtype=float)

    def copy(self):
        return TsPosterior(self.B.copy(), self.f.copy(), self.B_inv.copy(), self.scale)


def ts_select(context, post, rng):
    """Thompson draw: arm minimizing ``context . theta_a`` for sampled ``theta_a``.

    Only the projection of each sampled parameter onto the context matters,
    so the projection is sampled directly: one standard normal per arm.
    Ties go to the lowest index.
    """
    x = np.asarray(context, dtype=float)
    means = post.mean() @ x
    var = np.einsum("k,akl,l->a", x, post.B_inv, x)
    if not np.all(var > 0):
        raise NumericalError("posterior precision lost positive definiteness")
    z = rng.standard_normal(post.n_arms)
    scores = means + post.scale * np.sqrt(var) * z
    return int(np.argmin(scores))


def ts_update(post, context, arm, loss):
    """Rank-one update of arm ``arm``; modifies ``post`` in place and returns it."""
    x = np.asarray(context, dtype=float)
    bx = post.B_inv[arm] @ x
    post.B[arm] += np.outer(x, x)
    post.f[arm] += x * loss
    post.B_inv[arm] -= np.outer(bx, bx) / (1.0 + x @ bx)
    return post


def bias_features(obs):
    return np.append(np.asarray(obs, dtype=float), 1.0)


class TsPolicy:
    """Contextual Thompson Sampling over the waveform catalog.

    The default context is the observation vector with a constant 1 appended.
    """

    def __init__(self, n_arms, dim, scale=TS_SCALE, features=None, posterior=None):
        self.posterior = posterior or TsPosterior.fresh(n_arms, dim, scale)
        self.features = features or bias_features
        self.kernel_kind = kernels.TS if features is None else None

    @classmethod
    def for_channel(cls, channel, scale=TS_SCALE):
        return cls(channel.n_arms, channel.d + 1, scale)

    def select(self, obs, rng):
        return ts_select(self.features(obs), self.posterior, rng)

    def update(self, obs, action, loss):
        ts_update(self.posterior, self.features(obs), action, loss)


def save_posterior(post, path):
    """Write a posterior as CSV blocks: a header line, then per arm B rows and f."""
    buf = io.StringIO()
    buf.write(f"tsposterior,arms={post.n_arms},dim={post.dim},scale={post.scale!r}\n")
    for a in range(post.n_arms):
        buf.write(f"arm,{a}\n")
        for row in post.B[a]:
            buf.write("B," + ",".join(repr(float(v)) for v in row) + "\n")
        buf.write("f," + ",".join(repr(float(v)) for v in post.f[a]) + "\n")
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_posterior(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    head = dict(item.split("=") for item in lines[0].split(",")[1:])
    arms, dim = int(head["arms"]), int(head["dim"])
    B = np.zeros((arms, dim, dim))
    f = np.zeros((arms, dim))
    arm, row = -1, 0
    for line in lines[1:]:
        tag, *vals = line.split(",")
        if tag == "arm":
            arm, row = int(vals[0]), 0
        elif tag == "B":
            B[arm, row] = [float(v) for v in vals]
            row += 1
        elif tag == "f":
            f[arm] = [float(v) for v in vals]
    return TsPosterior(B, f, np.linalg.inv(B), float(head["scale"]))


@dataclass
class ValueFunction:
    values: np.ndarray
    policy: np.ndarray
    alpha: float
    residuals: list = field(default_factory=list)


def _transition_matrix(channel):
    return np.asarray(getattr(channel, "P", channel), dtype=float)


def value_iteration(channel, loss_table, alpha, tol=1e-10, max_iter=100_000):
    """Discounted value iteration for the waveform-selection MDP.

    The policy maps the current state to the next transmission, whose loss is
    realized in the following state:
    ``V(i) = min_a sum_j P(i, j) [loss(j, a) + alpha V(j)]``.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    P = _transition_matrix(channel)
    L = np.asarray(loss_table, dtype=float)
    expected = P @ L
    V = np.zeros(P.shape[0])
    residuals = []
    for _ in range(max_iter):
        V_new = (expected + alpha * (P @ V)[:, None]).min(axis=1)
        residuals.append(float(np.max(np.abs(V_new - V))))
        V = V_new
        if residuals[-1] <= tol:
            break
    else:
        raise NonConvergence(max_iter, residuals[-1])
    q = expected + alpha * (P @ V)[:, None]
    return ValueFunction(V, np.argmin(q, axis=1), alpha, residuals)


def bellman_residual(channel, loss_table, vf):
    P = _transition_matrix(channel)
    q = P @ np.asarray(loss_table) + vf.alpha * (P @ vf.values)[:, None]
    return float(np.max(np.abs(q.min(axis=1) - vf.values)))


def long_term_average_cost(channel, fixed_policy, params=LossParams(), loss_table=None):
    """Stationary per-step loss of a state-to-arm map acting on the previous state."""
    P = _transition_matrix(channel)
    if loss_table is None:
        loss_table = channel.loss_table(params)
    L = np.asarray(loss_table, dtype=float)
    arms = np.asarray(fixed_policy, dtype=np.int64)
    mu = markov.stationary_distribution(P)
    per_state = np.einsum("ij,ji->i", P, L[:, arms])
    return float(mu @ per_state)
