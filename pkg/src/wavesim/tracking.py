"""Abstract multi-target tracking scene with an exact discrete belief filter.

Each target moves on a grid of positions and velocities per axis (state
``[x, y, vx, vy]`` flattened in C order) under a banded random Markov kernel.
Targets move independently, so the scene kernel is the Kronecker product of
the per-target kernels. Waveforms differ in how their loss depends on the
scene state and in how accurately they measure each target.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np

from . import kernels, markov
from .errors import ConfigError, DimCap, IoError, NumericalError, ZeroLikelihood
from .policies import TS_SCALE, TsPolicy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_CAP = 4096


def grid_coords(n_pos, n_vel):
    """Multi-index ``(x, y, vx, vy)`` of every flattened target state."""
    shape = (n_pos, n_pos, n_vel, n_vel)
    return np.array(np.unravel_index(np.arange(np.prod(shape)), shape)).T


def band_mask(n_pos, n_vel, band):
    c = grid_coords(n_pos, n_vel)
    jump = np.abs(c[:, None, :] - c[None, :, :]).max(axis=2)
    return jump <= band


@dataclass(eq=False)
class TargetModel:
    n_pos: int
    n_vel: int
    band: int
    P: np.ndarray

    def __post_init__(self):
        self.P = markov.validate(self.P)
        if self.P.shape[0] != self.dim:
            raise ValueError(f"kernel is {self.P.shape}, expected dimension {self.dim}")
        if np.any(self.P[~band_mask(self.n_pos, self.n_vel, self.band)] > 0):
            raise ValueError("kernel has mass outside the allowed band")

    @property
    def dim(self):
        return self.n_pos ** 2 * self.n_vel ** 2

    def neighbors(self):
        mask = band_mask(self.n_pos, self.n_vel, self.band)
        np.fill_diagonal(mask, False)
        return mask


def random_target(rng, n_pos=3, n_vel=1, band=1, beta=0.0):
    """Banded random kernel mixed with the identity by weight ``beta``."""
    mask = band_mask(n_pos, n_vel, band)
    E = rng.exponential(size=mask.shape) * mask
    P = E / E.sum(axis=1, keepdims=True)
    P = beta * np.eye(len(P)) + (1.0 - beta) * P
    return TargetModel(n_pos, n_vel, band, P)


@dataclass(frozen=True)
class LossProfile:
    """Synthetic loss table layout.

    ``n_generalist`` waveforms behave the same in every state (loss
    ``generalist_loss +- generalist_jitter``). Each scene state has one best
    among the remaining specialist waveforms (loss uniform on
    ``[0, best_max]``); mismatched specialists draw uniformly from
    ``[1 - spread, 1]``.
    """

    best_max: float = 0.05
    spread: float = 0.5
    n_generalist: int = 2
    generalist_loss: float = 0.35
    generalist_jitter: float = 0.05


def make_loss_table(K, n_waveforms, rng, profile=LossProfile()):
    n_specialist = n_waveforms - profile.n_generalist
    if n_specialist < 1:
        raise ValueError("need at least one specialist waveform")
    L = rng.uniform(1.0 - profile.spread, 1.0, size=(K, n_waveforms))
    best = rng.integers(n_specialist, size=K)
    L[np.arange(K), best] = rng.uniform(0.0, profile.best_max, size=K)
    if profile.n_generalist:
        level = profile.generalist_loss + rng.uniform(
            -profile.generalist_jitter, profile.generalist_jitter,
            size=profile.n_generalist,
        )
        L[:, n_specialist:] = np.clip(level, 0.0, 1.0)
    return np.clip(L, 0.0, 1.0)


def confusion(target, accuracy):
    """Measurement kernel: ``accuracy`` on the truth, the rest spread uniformly
    over band neighbours."""
    K = target.dim
    if not 1.0 / K < accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in (1/{K}, 1], got {accuracy}")
    nbr = target.neighbors()
    q = np.zeros((K, K))
    for i in range(K):
        js = np.flatnonzero(nbr[i])
        if js.size == 0:
            q[i, i] = 1.0
        else:
            q[i, i] = accuracy
            q[i, js] = (1.0 - accuracy) / js.size
    return q


def kron_all(mats):
    return reduce(np.kron, mats)


@dataclass(eq=False)
class CompositeScene:
    targets: list
    loss_table: np.ndarray
    accuracy: np.ndarray
    q_targets: np.ndarray = field(repr=False)
    _P: np.ndarray | None = field(default=None, init=False, repr=False)

    @property
    def dims(self):
        return np.array([t.dim for t in self.targets], dtype=np.int64)

    @property
    def K(self):
        return int(np.prod(self.dims))

    @property
    def M(self):
        return len(self.targets)

    @property
    def n_waveforms(self):
        return self.loss_table.shape[1]

    @property
    def P(self):
        if self._P is None:
            self._P = kron_all([t.P for t in self.targets])
        return self._P

    def stationary(self):
        return kron_all([markov.stationary_distribution(t.P) for t in self.targets])

    def entropy_rate(self):
        """Sum of per-target entropy rates (exact for independent targets)."""
        return float(sum(markov.entropy_rate(t.P) for t in self.targets))

    def diagonal_dominance(self):
        return markov.diagonal_dominance(self.P)

    def q(self, w):
        """Composite measurement kernel ``q(w)`` (``K x K``)."""
        return kron_all([self.q_targets[w, m, :d, :d] for m, d in enumerate(self.dims)])

    def encode(self, parts):
        return int(np.ravel_multi_index(tuple(parts), tuple(self.dims)))

    def decode(self, index):
        return np.array(np.unravel_index(index, tuple(self.dims)))

    def padded_kernels(self):
        kmax = int(self.dims.max())
        mats = np.zeros((self.M, kmax, kmax))
        for m, t in enumerate(self.targets):
            mats[m, : t.dim, : t.dim] = t.P
        return mats

    def likelihood(self, w, obs_parts):
        return kernels.observation_likelihood(
            self.q_targets, w, np.asarray(obs_parts, dtype=np.int64), self.dims
        )

    def predict(self, b):
        """``b @ P`` without forming the Kronecker product."""
        return kernels.predict_belief(np.asarray(b, dtype=float), self.padded_kernels(), self.dims)

    def correct(self, prior, w, obs_parts):
        post = np.asarray(prior) * self.likelihood(w, obs_parts)
        total = post.sum()
        if not total > 0:
            raise ZeroLikelihood("observation has zero likelihood under the belief")
        return post / total

    def update_belief(self, b, w, obs_parts):
        """Factorized version of :func:`belief_update` for this scene."""
        return self.correct(self.predict(b), w, obs_parts)


def build_composite(targets, rng, loss_profile=LossProfile(), n_waveforms=20,
                    accuracy=(0.6, 1.0), cap=DEFAULT_CAP):
    """Assemble a scene from independent targets.

    ``accuracy`` is either explicit per-waveform accuracies or a ``(low, high)``
    range to draw them from.
    """
    if len(targets) < 2:
        raise ValueError("a scene needs at least two targets")
    dims = [t.dim for t in targets]
    K = int(np.prod(dims))
    if K > cap:
        raise DimCap(f"composite dimension {K} exceeds cap {cap}")
    table = make_loss_table(K, n_waveforms, rng, loss_profile)
    acc = np.asarray(accuracy, dtype=float)
    if acc.shape == (2,) and n_waveforms != 2:
        acc = rng.uniform(acc[0], acc[1], size=n_waveforms)
    if acc.shape != (n_waveforms,):
        raise ValueError("need one accuracy per waveform or a (low, high) range")
    kmax = max(dims)
    q = np.zeros((n_waveforms, len(targets), kmax, kmax))
    for w in range(n_waveforms):
        for m, t in enumerate(targets):
            q[w, m, : t.dim, : t.dim] = confusion(t, acc[w])
    return CompositeScene(list(targets), table, acc, q)


def random_scene(rng, M=3, n_pos=3, n_vel=1, band=None, beta=None,
                 n_waveforms=20, loss_profile=LossProfile(), accuracy=(0.6, 1.0),
                 cap=DEFAULT_CAP):
    """Random scene; ``band`` defaults to a draw from {1, 2} and ``beta``, the
    shared identity weight of all target kernels, to a uniform draw."""
    if band is None:
        band = int(rng.integers(1, 3))
    if beta is None:
        beta = float(rng.random())
    targets = [random_target(rng, n_pos, n_vel, band, beta) for _ in range(M)]
    return build_composite(targets, rng, loss_profile, n_waveforms, accuracy, cap)


def belief_update(b, P, qw, o):
    """Exact Bayes filter step: ``b' ~ q(w)[:, o] * (b P)``."""
    post = np.asarray(qw)[:, o] * (np.asarray(b) @ np.asarray(P))
    total = post.sum()
    if not total > 0:
        raise ZeroLikelihood("observation has zero likelihood under the belief")
    return post / total


def rule_based_select(b, lookup):
    """Waveform of the most probable state (lowest index on ties)."""
    return int(np.asarray(lookup)[int(np.argmax(b))])


def make_rule_lookup(scene, mode="oracle", k=0.0, rng=None):
    """State-to-waveform table for the rule-based policy.

    ``"oracle"`` picks each state's loss minimizer; ``"perturbed"`` then
    reassigns ``ceil(k * K)`` randomly chosen states to a different waveform.
    """
    lookup = np.argmin(scene.loss_table, axis=1)
    if mode == "oracle":
        return lookup
    if mode != "perturbed":
        raise ValueError(f"unknown lookup mode {mode!r}")
    n_bad = math.ceil(k * scene.K)
    if n_bad == 0:
        return lookup
    if rng is None:
        raise ValueError("perturbed lookup needs an rng")
    W = scene.n_waveforms
    lookup = lookup.copy()
    for i in rng.choice(scene.K, size=n_bad, replace=False):
        other = int(rng.integers(W - 1))
        lookup[i] = other + (other >= lookup[i])
    return lookup


class RuleBasedPolicy:
    kernel_kind = kernels.TABLE

    def __init__(self, lookup):
        self.lookup = np.asarray(lookup, dtype=np.int64)

    def select(self, belief, rng):
        return rule_based_select(belief, self.lookup)

    def update(self, belief, action, loss):
        pass


class BeliefFeatures:
    """Compress a belief vector to ``n_buckets`` sums plus a bias term.

    ``mode="hash"`` sends each state to a bucket through a fixed seeded
    permutation of the state ordering; ``"truncate"`` keeps the first
    ``n_buckets`` components only.
    """

    def __init__(self, K, n_buckets=8, mode="hash", seed=0):
        if mode == "hash":
            order = np.random.default_rng(seed).permutation(K)
            self.buckets = (order % n_buckets).astype(np.int64)
        elif mode == "truncate":
            self.buckets = np.where(np.arange(K) < n_buckets, np.arange(K), n_buckets).astype(np.int64)
        else:
            raise ValueError(f"unknown feature mode {mode!r}")
        self.n_buckets = n_buckets
        self.mode = mode

    @property
    def dim(self):
        return self.n_buckets + 1

    def __call__(self, belief):
        # truncate mode parks the tail states in a spare slot that is dropped
        x = np.zeros(self.n_buckets + 2)
        np.add.at(x, self.buckets, belief)
        x = x[: self.n_buckets + 1]
        x[self.n_buckets] = 1.0
        return x


def tracking_ts_policy(scene, scale=TS_SCALE, n_buckets=8, mode="truncate", seed=0):
    feats = BeliefFeatures(scene.K, n_buckets, mode, seed)
    return TsPolicy(scene.n_waveforms, feats.dim, scale, features=feats)


class TrackingRandomPolicy:
    kernel_kind = kernels.RANDOM

    def __init__(self, n_waveforms):
        self.n_waveforms = n_waveforms

    def select(self, belief, rng):
        return min(int(rng.random() * self.n_waveforms), self.n_waveforms - 1)

    def update(self, belief, action, loss):
        pass


@dataclass(frozen=True)
class TrackingTrace:
    true_state: np.ndarray
    obs: np.ndarray
    wf: np.ndarray
    loss: np.ndarray

    def __len__(self):
        return len(self.true_state)

    @property
    def mean_loss(self):
        return float(self.loss.mean())

    def equals(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("true_state", "obs", "wf", "loss"))

    def to_csv(self, path):
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "true_state", "obs", "wf", "loss"])
                for t in range(len(self)):
                    w.writerow([t + 1, int(self.true_state[t]), int(self.obs[t]),
                                int(self.wf[t]), repr(float(self.loss[t]))])
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc


def _initial_parts(scene, env_rng):
    return np.array([int(env_rng.integers(d)) for d in scene.dims], dtype=np.int64)


def _run_tracking_python(scene, policy, n, env_rng, pol_rng, s0):
    M = scene.M
    s = s0.copy()
    b = scene.predict(np.full(scene.K, 1.0 / scene.K))
    rows = np.empty((n, 3), dtype=np.int64)
    losses = np.empty(n)
    for t in range(n):
        a = policy.select(b, pol_rng)
        for m, target in enumerate(scene.targets):
            s[m] = markov.sample_next(target.P, s[m], env_rng)
        idx = scene.encode(s)
        value = float(scene.loss_table[idx, a])
        o = np.empty(M, dtype=np.int64)
        for m, d in enumerate(scene.dims):
            o[m] = markov.sample_next(scene.q_targets[a, m, :d, :d], s[m], env_rng)
        policy.update(b, a, value)
        b = scene.predict(scene.correct(b, a, o))
        rows[t] = idx, scene.encode(o), a
        losses[t] = value
    return TrackingTrace(rows[:, 0], rows[:, 1], rows[:, 2], losses)


def _run_tracking_kernel(scene, policy, n, env_rng, pol_rng, s0):
    kind = policy.kernel_kind
    M, W = scene.M, scene.n_waveforms
    u_env = env_rng.random((n, 2 * M))
    u_pol = np.zeros(0)
    z_pol = np.zeros((0, 0))
    lookup = np.zeros(1, dtype=np.int64)
    buckets = np.zeros(scene.K, dtype=np.int64)
    n_buckets = 0
    B = B_inv = np.zeros((1, 1, 1))
    f = np.zeros((1, 1))
    scale = 0.0
    if kind == kernels.RANDOM:
        u_pol = pol_rng.random(n)
    elif kind == kernels.TS:
        z_pol = pol_rng.standard_normal((n, W))
        post = policy.posterior
        B, B_inv, f, scale = post.B, post.B_inv, post.f, post.scale
        buckets = policy.features.buckets
        n_buckets = policy.features.n_buckets
    else:
        lookup = policy.lookup
    mats = scene.padded_kernels()
    status, states, obs, acts, losses = kernels.tracking_episode(
        mats, np.cumsum(mats, axis=2), scene.dims, s0, scene.q_targets,
        np.cumsum(scene.q_targets, axis=3), scene.loss_table, u_env, kind,
        lookup, buckets, n_buckets, u_pol, z_pol, float(scale), B, B_inv, f,
    )
    if status == kernels.NOT_PD:
        raise NumericalError("posterior precision lost positive definiteness")
    if status == kernels.ZERO_LIKELIHOOD:
        raise ZeroLikelihood("observation has zero likelihood under the belief")
    return TrackingTrace(states, obs, acts, losses)


def _kernel_kind(policy):
    if isinstance(policy, TsPolicy):
        feats = policy.features
        if isinstance(feats, BeliefFeatures):
            return kernels.TS
        return None
    return getattr(policy, "kernel_kind", None)


class _KernelView:
    def __init__(self, policy, kind):
        self._policy = policy
        self.kernel_kind = kind

    def __getattr__(self, name):
        return getattr(self._policy, name)


def run_tracking_episode(scene, policy, n=10_000, rng=None, engine="auto"):
    """Simulate ``n`` CPIs of waveform selection on a tracking scene.

    Each CPI the policy acts on the predicted belief ``P(s_t | o_1..o_{t-1})``
    (the initial state is uniform), every target moves, the loss is read from
    the loss table at the true scene state, each target is measured through
    the chosen waveform's confusion kernel and the exact filter folds the
    measurement in and predicts the next CPI.
    """
    if n < 1:
        raise ValueError("horizon must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    env_rng, pol_rng = rng.spawn(2)
    s0 = _initial_parts(scene, env_rng)
    kind = _kernel_kind(policy)
    if engine == "python" or (engine == "auto" and kind is None):
        return _run_tracking_python(scene, policy, n, env_rng, pol_rng, s0)
    if kind is None:
        raise ValueError(f"{type(policy).__name__} has no compiled kernel")
    return _run_tracking_kernel(scene, _KernelView(policy, kind), n, env_rng, pol_rng, s0)


def load_scene_config(path, rng=None):
    """Build a scene from TOML.

    Keys: ``targets`` (count M), ``n_pos``, ``n_vel``, ``band``, ``beta``,
    ``seed``, ``n_waveforms``, ``accuracy`` (list or ``[low, high]`` range),
    and a ``[loss_profile]`` table with :class:`LossProfile` fields.
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from exc
    return scene_from_mapping(raw, rng, where=str(path))


def scene_from_mapping(raw, rng=None, where="scene"):
    if rng is None:
        rng = np.random.default_rng(int(raw.get("seed", 0)))
    known = set(LossProfile.__dataclass_fields__)
    prof = raw.get("loss_profile", {})
    unknown = set(prof) - known
    if unknown:
        raise ConfigError(f"{where}.loss_profile.{sorted(unknown)[0]}", "unknown field")
    try:
        return random_scene(
            rng,
            M=int(raw.get("targets", 3)),
            n_pos=int(raw.get("n_pos", 3)),
            n_vel=int(raw.get("n_vel", 1)),
            band=raw.get("band"),
            beta=raw.get("beta"),
            n_waveforms=int(raw.get("n_waveforms", 20)),
            loss_profile=LossProfile(**prof),
            accuracy=raw.get("accuracy", (0.6, 1.0)),
            cap=int(raw.get("cap", DEFAULT_CAP)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from exc
