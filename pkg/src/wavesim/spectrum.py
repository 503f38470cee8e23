"""Dynamic spectrum access environment and episode execution."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bands, kernels, markov
from .bands import LossParams, SinrParams
from .errors import ConfigError, IoError, NumericalError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXAMPLE1_STATES = ("11000", "11100")


@dataclass(eq=False)
class ChannelModel:
    """Markov interference channel over ``d`` sub-bands.

    ``states[i]`` is the occupancy vector of Markov state ``i``; ``s0`` is the
    initial state index, or ``None`` to draw it uniformly per episode.
    """

    d: int
    states: np.ndarray
    P: np.ndarray
    s0: int | None = None
    _tables: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.states = np.array([bands.as_bits(s, self.d) for s in self.states], dtype=np.int8)
        self.P = markov.validate(self.P)
        if self.P.shape[0] != len(self.states):
            raise ValueError(
                f"{len(self.states)} states but transition matrix is {self.P.shape}"
            )
        if self.s0 is not None and not 0 <= self.s0 < len(self.states):
            raise ValueError(f"initial state {self.s0} out of range")

    @property
    def K(self):
        return len(self.states)

    @property
    def catalog(self):
        return bands.enumerate_waveforms(self.d)

    @property
    def n_arms(self):
        return self.d * (self.d + 1) // 2

    def patterns(self):
        """Observation patterns: the K states followed by the all-zeros vector."""
        return np.vstack([self.states, np.zeros((1, self.d), dtype=np.int8)])

    def tables(self, params=LossParams(), sinr=SinrParams()):
        """Per (state, waveform) loss, collision count, missed bands and SINR."""
        key = (params, sinr)
        if key not in self._tables:
            cat = self.catalog
            shape = (self.K, len(cat))
            loss = np.empty(shape)
            nc = np.empty(shape, dtype=np.int64)
            nmo = np.empty(shape, dtype=np.int64)
            snr = np.empty(shape)
            for j, s in enumerate(self.states):
                for a, w in enumerate(cat):
                    loss[j, a] = bands.loss(w, s, params)
                    nc[j, a] = bands.collision(w, s)[1]
                    nmo[j, a] = bands.missed_opportunity(w, s)[1]
                    snr[j, a] = bands.sinr_db(w, s, sinr)
            self._tables[key] = {"loss": loss, "nc": nc, "nmo": nmo, "sinr": snr}
        return self._tables[key]

    def loss_table(self, params=LossParams()):
        return self.tables(params)["loss"]

    def saa_map(self):
        """Deterministic SAA arm per state (leftmost widest vacancy)."""
        d = self.d
        return np.array(
            [bands.waveform_index(bands.saa_waveform(s), d) for s in self.states]
        )

    @classmethod
    def two_state(cls, p12, p21, states=EXAMPLE1_STATES, s0=None):
        P = np.array([[1.0 - p12, p12], [p21, 1.0 - p21]])
        bits = [bands.as_bits(s) for s in states]
        return cls(len(bits[0]), bits, P, s0)


def candidate_states(d, unique_vacancy=True):
    """All length-``d`` vectors with at least one free band.

    With ``unique_vacancy`` only vectors whose widest vacancy is unique are
    kept, so the sense-and-avoid action is deterministic.
    """
    out = []
    for code in range(2 ** d):
        bits = np.array([(code >> (d - 1 - k)) & 1 for k in range(d)], dtype=np.int8)
        runs = bands.widest_runs(bits)
        if not runs or (unique_vacancy and len(runs) > 1):
            continue
        out.append(bits)
    return out


def random_states(K, d, rng, unique_vacancy=True, cover=False, max_tries=1000):
    """Draw ``K`` distinct interference states.

    When ``K <= d + 1`` the draw is repeated until the states, with a bias
    column appended, are linearly independent, so a linear model on the
    observation distinguishes every state. ``cover=True`` also requires every
    sub-band to be occupied in at least one state.
    """
    pool = candidate_states(d, unique_vacancy)
    if K > len(pool):
        raise ValueError(f"only {len(pool)} admissible states for d={d}, need {K}")
    for _ in range(max_tries):
        pick = rng.choice(len(pool), size=K, replace=False)
        states = np.array([pool[i] for i in pick])
        if cover and not np.all(states.max(axis=0) == 1):
            continue
        if K > d + 1:
            return states
        design = np.hstack([states, np.ones((K, 1))])
        if np.linalg.matrix_rank(design) == K:
            return states
    raise ValueError("could not draw admissible states")


def random_channel(K, rng, d=5, profile="diagonal_weight", beta=None, width=1,
                   s0=None, unique_vacancy=True, cover=False):
    """Random channel: random distinct states and a random transition matrix.

    With the ``diagonal_weight`` profile and ``beta=None`` the weight is drawn
    uniformly from [0, 1] so an ensemble sweeps diagonal dominance.
    """
    states = random_states(K, d, rng, unique_vacancy, cover)
    if profile == "diagonal_weight" and beta is None:
        beta = float(rng.random())
    P = markov.random_transition_matrix(K, rng, profile, width=width, beta=beta or 0.0)
    return ChannelModel(d, states, P, s0)


@dataclass(frozen=True)
class EpisodeTrace:
    """Per-PRI record of one episode (all columns are read-only arrays)."""

    d: int
    state: np.ndarray
    obs: np.ndarray
    waveform: np.ndarray
    wf_start: np.ndarray
    wf_width: np.ndarray
    C: np.ndarray
    Nc: np.ndarray
    M: np.ndarray
    Nmo: np.ndarray
    loss: np.ndarray
    sinr_db: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    def __len__(self):
        return len(self.state)

    @property
    def collision_rate(self):
        return float(self.C.mean())

    @property
    def mo_rate(self):
        return float(self.M.mean())

    @property
    def mean_loss(self):
        return float(self.loss.mean())

    @property
    def mean_sinr_db(self):
        return float(self.sinr_db.mean())

    def summary(self):
        return {
            "collision_rate": self.collision_rate,
            "mo_rate": self.mo_rate,
            "mean_loss": self.mean_loss,
            "mean_sinr_db": self.mean_sinr_db,
        }

    def equals(self, other):
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in self.__dataclass_fields__
            if k != "d"
        )

    def to_csv(self, path):
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "state", "obs", "wf_start", "wf_width",
                            "C", "Nc", "M", "Nmo", "loss", "sinr_db"])
                for t in range(len(self)):
                    w.writerow([
                        t + 1, int(self.state[t]), bands.bit_string(self.obs[t]),
                        int(self.wf_start[t]), int(self.wf_width[t]),
                        int(self.C[t]), int(self.Nc[t]), int(self.M[t]),
                        int(self.Nmo[t]), repr(float(self.loss[t])),
                        repr(float(self.sinr_db[t])),
                    ])
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc


def _build_trace(channel, states, obs_bits, acts, losses, params, sinr):
    tab = channel.tables(params, sinr)
    cat = channel.catalog
    starts = np.array([w.start for w in cat])
    widths = np.array([w.width for w in cat])
    nc = tab["nc"][states, acts]
    nmo = tab["nmo"][states, acts]
    return EpisodeTrace(
        d=channel.d,
        state=np.asarray(states, dtype=np.int64),
        obs=np.asarray(obs_bits, dtype=np.int8),
        waveform=np.asarray(acts, dtype=np.int64),
        wf_start=starts[acts],
        wf_width=widths[acts],
        C=(nc > 0).astype(np.int8),
        Nc=nc,
        M=(nmo > 0).astype(np.int8),
        Nmo=nmo,
        loss=np.asarray(losses, dtype=float),
        sinr_db=tab["sinr"][states, acts],
    )


def _episode_streams(channel, rng):
    env_rng, pol_rng = rng.spawn(2)
    s0 = channel.s0 if channel.s0 is not None else int(env_rng.integers(channel.K))
    return env_rng, pol_rng, s0


def _run_python(channel, policy, params, p_miss, n, env_rng, pol_rng, s0, sinr):
    cat = channel.catalog
    s = s0
    o = channel.states[s0].copy()
    states = np.empty(n, dtype=np.int64)
    obs = np.empty((n, channel.d), dtype=np.int8)
    acts = np.empty(n, dtype=np.int64)
    losses = np.empty(n)
    for t in range(n):
        a = policy.select(o, pol_rng)
        s = markov.sample_next(channel.P, s, env_rng)
        truth = channel.states[s]
        value = bands.loss(cat[a], truth, params)
        o_next = bands.observe(truth, p_miss, env_rng)
        policy.update(o, a, value)
        states[t], acts[t], losses[t] = s, a, value
        obs[t] = o_next
        o = o_next
    return _build_trace(channel, states, obs, acts, losses, params, sinr)


def _run_kernel(channel, policy, params, p_miss, n, env_rng, pol_rng, s0, sinr):
    kind = policy.kernel_kind
    K, A = channel.K, channel.n_arms
    patterns = channel.patterns()
    u_env = env_rng.random((n, 2))
    u_pol = np.zeros(0)
    z_pol = np.zeros((0, 0))
    if kind in (kernels.SAA, kernels.RANDOM):
        u_pol = pol_rng.random(n)
    elif kind == kernels.TS:
        z_pol = pol_rng.standard_normal((n, A))
    cands = [
        [bands.waveform_index(w, channel.d) for w in bands.saa_candidates(p)]
        for p in patterns
    ]
    width = max(len(c) for c in cands)
    ties = np.array([c + [c[0]] * (width - len(c)) for c in cands], dtype=np.int64)
    n_ties = np.array([len(c) for c in cands], dtype=np.int64)
    contexts = np.hstack([patterns, np.ones((K + 1, 1))]).astype(float)
    if kind == kernels.TS:
        post = policy.posterior
        B, B_inv, f, scale = post.B, post.B_inv, post.f, post.scale
    else:
        B = B_inv = np.zeros((1, 1, 1))
        f = np.zeros((1, 1))
        scale = 0.0
    table = (
        policy.table_for(channel) if kind == kernels.TABLE else np.zeros(K + 1, dtype=np.int64)
    )
    status, states, obs, acts, losses = kernels.dsa_episode(
        np.cumsum(channel.P, axis=1), s0, u_env, float(p_miss), K, contexts,
        ties, n_ties, channel.tables(params, sinr)["loss"], kind, u_pol, z_pol,
        float(scale), B, B_inv, f, table,
    )
    if status == kernels.NOT_PD:
        raise NumericalError("posterior precision lost positive definiteness")
    return _build_trace(channel, states, patterns[obs], acts, losses, params, sinr)


def run_episode(channel, policy, params=LossParams(), p_miss=0.0, n=10_000,
                rng=None, sinr=SinrParams(), engine="auto"):
    """Simulate ``n`` PRIs of ``policy`` on ``channel``.

    Each step the policy picks a waveform from the previous observation
    (``o_0`` is the true initial state), the state advances, the loss and SINR
    are scored against the true new state, the new state is observed (or
    missed with probability ``p_miss``) and learning policies are updated.

    ``engine="auto"`` uses the compiled kernel for the built-in policies and
    the Python loop otherwise; both consume the random streams identically.
    """
    if n < 1:
        raise ValueError("horizon must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    params.check(channel.d)
    env_rng, pol_rng, s0 = _episode_streams(channel, rng)
    kind = getattr(policy, "kernel_kind", None)
    if engine == "python" or (engine == "auto" and kind is None):
        return _run_python(channel, policy, params, p_miss, n, env_rng, pol_rng, s0, sinr)
    if kind is None:
        raise ValueError(f"{type(policy).__name__} has no compiled kernel")
    return _run_kernel(channel, policy, params, p_miss, n, env_rng, pol_rng, s0, sinr)


def load_channel_config(path):
    """Read a channel TOML file.

    Keys: ``d``, ``states`` (bit strings), ``P`` (inline matrix) or ``P_csv``
    (path relative to the file), optional ``s0`` (index or ``"random"``),
    ``p_miss``, ``eta``, ``snr0_db``, ``inr_db``. Returns
    ``(channel, settings)``.
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from exc
    return channel_from_mapping(raw, base=path.parent, where=str(path))


def channel_from_mapping(raw, base=Path("."), where="channel"):
    for key in ("d", "states"):
        if key not in raw:
            raise ConfigError(f"{where}.{key}", "required")
    if "P" in raw:
        P = np.array(raw["P"], dtype=float)
    elif "P_csv" in raw:
        P = markov.load_csv(Path(base) / raw["P_csv"])
    else:
        raise ConfigError(f"{where}.P", "give P or P_csv")
    s0 = raw.get("s0", "random")
    if s0 == "random":
        s0 = None
    elif not isinstance(s0, int):
        raise ConfigError(f"{where}.s0", "must be an index or 'random'")
    try:
        channel = ChannelModel(int(raw["d"]), list(raw["states"]), P, s0)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from exc
    settings = {
        "p_miss": float(raw.get("p_miss", 0.0)),
        "eta": float(raw.get("eta", 0.05)),
        "snr0_db": float(raw.get("snr0_db", 20.0)),
        "inr_db": float(raw.get("inr_db", 14.0)),
    }
    return channel, settings
