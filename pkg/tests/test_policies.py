import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wavesim import bands, markov, policies
from wavesim.bands import LossParams, Waveform
from wavesim.errors import NonConvergence, NumericalError
from wavesim.policies import (
    RandomPolicy, SaaPolicy, TablePolicy, TsPolicy, TsPosterior, long_term_average_cost,
    random_select, saa_select, ts_select, ts_update, value_iteration,
)
from wavesim.spectrum import ChannelModel, random_channel, run_episode


def idx(start, width, d=5):
    return bands.waveform_index(Waveform(start, width), d)


class TestSaa:
    def test_examples(self, rng):
        assert saa_select(bands.as_bits("11000"), rng) == idx(2, 3)
        assert saa_select(np.zeros(5, dtype=int), rng) == idx(0, 5)
        assert saa_select(bands.as_bits("01000"), rng) == idx(2, 3)

    def test_memoryless(self):
        pol = SaaPolicy(5)
        o = bands.as_bits("00100")
        a = [pol.select(o, np.random.default_rng(4)) for _ in range(5)]
        pol.update(o, a[0], 1.0)
        assert len(set(a)) == 1
        assert pol.select(o, np.random.default_rng(4)) == a[0]


class TestRandom:
    def test_range_and_uniformity(self):
        rng = np.random.default_rng(0)
        draws = np.array([random_select(rng, 15) for _ in range(100_000)])
        assert draws.min() >= 0 and draws.max() < 15
        freq = np.bincount(draws, minlength=15) / draws.size
        assert np.all(np.abs(freq - 1 / 15) <= 0.005)

    def test_deterministic(self):
        a = [random_select(np.random.default_rng(3), 15) for _ in range(3)]
        pol = RandomPolicy(15)
        assert pol.select(None, np.random.default_rng(3)) == a[0]


class TestTs:
    def test_fresh_uniform(self):
        post = TsPosterior.fresh(15, 6)
        rng = np.random.default_rng(0)
        x = np.r_[bands.as_bits("11000"), 1.0]
        picks = np.bincount([ts_select(x, post, rng) for _ in range(10_000)], minlength=15)
        assert stats.chisquare(picks).pvalue > 0.01

    def test_small_scale_greedy(self, rng):
        post = TsPosterior.fresh(4, 3, scale=1e-9)
        x = np.array([1.0, 0.0, 1.0])
        for arm, value in [(0, 0.5), (1, 0.1), (2, 0.9), (3, 0.4)]:
            ts_update(post, x, arm, value)
        assert all(ts_select(x, post, rng) == 1 for _ in range(50))

    def test_lowest_index_tie(self):
        class ZeroNormals:
            def standard_normal(self, size):
                return np.zeros(size)

        post = TsPosterior.fresh(3, 2)
        assert ts_select(np.array([0.0, 1.0]), post, ZeroNormals()) == 0
        from wavesim import kernels
        assert kernels._ts_pick(np.array([0.0, 1.0]), post.B_inv, post.f, np.zeros(3), 0.5) == 0

    def test_zero_context_rejected(self):
        post = TsPosterior.fresh(3, 2)
        with pytest.raises(NumericalError):
            ts_select(np.zeros(2), post, np.random.default_rng(0))

    def test_not_positive_definite(self):
        post = TsPosterior.fresh(2, 2)
        post.B_inv[1] = -np.eye(2)
        with pytest.raises(NumericalError):
            ts_select(np.array([1.0, 1.0]), post, np.random.default_rng(0))

    def test_zero_context_update(self):
        post = TsPosterior.fresh(2, 3)
        before = post.copy()
        ts_update(post, np.array([0.0, 0.0, 1.0]), 0, 0.7)
        np.testing.assert_array_equal(post.B[0, :2, :2], before.B[0, :2, :2])
        assert post.B[0, 2, 2] == 2.0 and post.f[0, 2] == pytest.approx(0.7)
        np.testing.assert_array_equal(post.B[1], before.B[1])

    def test_fixed_point(self):
        post = TsPosterior.fresh(1, 3)
        x = np.array([1.0, 0.0, 1.0])
        for _ in range(10_000):
            ts_update(post, x, 0, 0.3)
        assert post.predicted_loss(x)[0] == pytest.approx(0.3, abs=1e-3)

    def test_interleaved_order(self):
        post = TsPosterior.fresh(2, 2)
        x = np.array([1.0, 1.0])
        for _ in range(200):
            ts_update(post, x, 0, 0.8)
            ts_update(post, x, 1, 0.2)
        pred = post.predicted_loss(x)
        assert pred[1] < pred[0]

    def test_inverse_tracks_precision(self, rng):
        post = TsPosterior.fresh(3, 4)
        for _ in range(300):
            ts_update(post, rng.random(4), int(rng.integers(3)), rng.random())
        np.testing.assert_allclose(post.B_inv, np.linalg.inv(post.B), atol=1e-10)

    @given(st.lists(st.tuples(st.integers(0, 2), st.floats(0, 1),
                              st.lists(st.integers(0, 1), min_size=3, max_size=3)),
                    min_size=1, max_size=20), st.randoms())
    def test_order_independent(self, updates, shuffler):
        def apply(seq):
            post = TsPosterior.fresh(3, 4)
            for arm, value, o in seq:
                ts_update(post, np.r_[o, 1.0], arm, value)
            return post
        a = apply(updates)
        shuffled = list(updates)
        shuffler.shuffle(shuffled)
        b = apply(shuffled)
        np.testing.assert_allclose(a.B, b.B, atol=1e-12)
        np.testing.assert_allclose(a.f, b.f, atol=1e-12)

    def test_predicted_loss_on_static_channel(self):
        ch = ChannelModel(5, ["11000", "00111"], np.eye(2), s0=0)
        pol = TsPolicy.for_channel(ch)
        tr = run_episode(ch, pol, n=1000, rng=np.random.default_rng(0))
        x = np.r_[ch.states[0], 1.0]
        pred = pol.posterior.predicted_loss(x)
        for arm in np.unique(tr.waveform):
            sel = tr.waveform == arm
            if sel.sum() >= 30:
                assert pred[arm] == pytest.approx(tr.loss[sel].mean(), abs=0.05)

    def test_posterior_round_trip(self, tmp_path, rng):
        post = TsPosterior.fresh(4, 3, scale=0.4)
        for _ in range(50):
            ts_update(post, rng.random(3), int(rng.integers(4)), rng.random())
        policies.save_posterior(post, tmp_path / "post.csv")
        back = policies.load_posterior(tmp_path / "post.csv")
        np.testing.assert_array_equal(back.B, post.B)
        np.testing.assert_array_equal(back.f, post.f)
        assert back.scale == 0.4

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            TsPosterior.fresh(2, 2, scale=0)


def test_table_policy(example1):
    pol = TablePolicy(example1, [3, 7], miss_arm=1)
    assert pol.select(example1.states[1], None) == 7
    assert pol.select(np.zeros(5), None) == 1
    assert list(pol.table_for(example1)) == [3, 7, 1]
    with pytest.raises(ValueError):
        TablePolicy(example1, [1])


def _brute_force(P, L):
    K, A = L.shape
    best = np.inf
    mu = markov.stationary_distribution(P)
    for arms in itertools.product(range(A), repeat=K):
        best = min(best, long_term_average_cost(P, arms, loss_table=L))
    return best, mu


class TestValueIteration:
    def test_myopic(self, rng):
        ch = random_channel(4, rng)
        L = ch.loss_table()
        vf = value_iteration(ch, L, 0.0)
        np.testing.assert_array_equal(vf.policy, np.argmin(ch.P @ L, axis=1))

    def test_identity(self, rng):
        L = rng.random((3, 6))
        vf = value_iteration(np.eye(3), L, 0.9)
        np.testing.assert_array_equal(vf.policy, L.argmin(axis=1))
        np.testing.assert_allclose(vf.values, L.min(axis=1) / 0.1, atol=1e-8)

    def test_residual(self, rng):
        ch = random_channel(4, rng)
        vf = value_iteration(ch, ch.loss_table(), 0.9)
        assert policies.bellman_residual(ch, ch.loss_table(), vf) <= 1e-8
        r = vf.residuals[1:]
        assert all(a >= b for a, b in zip(r, r[1:]))

    def test_brute_force_k3(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            P = markov.random_transition_matrix(3, rng)
            L = rng.random((3, 6))
            vf = value_iteration(P, L, 0.9)
            best, _ = _brute_force(P, L)
            assert long_term_average_cost(P, vf.policy, loss_table=L) <= best + 1e-10

    @given(st.integers(2, 4), st.integers(2, 6), st.integers(0, 10_000))
    def test_brute_force_property(self, K, A, seed):
        rng = np.random.default_rng(seed)
        P = markov.random_transition_matrix(K, rng)
        L = rng.random((K, A))
        vf = value_iteration(P, L, 0.9)
        best, _ = _brute_force(P, L)
        assert long_term_average_cost(P, vf.policy, loss_table=L) <= best + 1e-10

    def test_errors(self):
        with pytest.raises(ValueError):
            value_iteration(np.eye(2), np.zeros((2, 2)), 1.0)
        with pytest.raises(NonConvergence):
            value_iteration(np.eye(2), np.ones((2, 2)), 0.99, max_iter=3)


class TestLongTermAverage:
    def test_example1(self, example1):
        mu = markov.stationary_distribution(example1.P)
        lam = long_term_average_cost(example1, example1.saa_map(), LossParams(0.05))
        assert lam == pytest.approx(mu[0] * 0.2 + mu[1] * 0.4 * 0.05 * 1)

    def test_identity(self, rng):
        ch = ChannelModel(5, ["11000", "00111", "10001"], np.eye(3))
        arms = [0, 5, 9]
        L = ch.loss_table()
        mu = markov.stationary_distribution(ch.P)
        assert long_term_average_cost(ch, arms) == pytest.approx(
            sum(mu[i] * L[i, arms[i]] for i in range(3)))

    def test_monte_carlo(self, rng):
        ch = random_channel(5, rng)
        arms = rng.integers(ch.n_arms, size=ch.K)
        lam = long_term_average_cost(ch, arms)
        tr = run_episode(ch, TablePolicy(ch, arms), n=100_000, rng=rng)
        assert tr.mean_loss == pytest.approx(lam, abs=0.01)


def test_ts_regret_sublinear():
    # one suboptimal SAA transition with positive stationary mass
    ch = ChannelModel.two_state(0.3, 0.3)
    ratios = []
    for n in (1000, 10_000):
        seeds = range(5)
        ts = sum(run_episode(ch, TsPolicy.for_channel(ch), n=n,
                             rng=np.random.default_rng(s)).loss.sum() for s in seeds)
        saa = sum(run_episode(ch, SaaPolicy(5), n=n,
                              rng=np.random.default_rng(s)).loss.sum() for s in seeds)
        ratios.append(ts / saa)
    assert ratios[1] < ratios[0]
