import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavesim import markov, tracking
from wavesim.errors import ConfigError, DimCap, ZeroLikelihood
from wavesim.policies import TsPolicy
from wavesim.tracking import (
    BeliefFeatures, RuleBasedPolicy, TargetModel, TrackingRandomPolicy, belief_update,
    build_composite, make_rule_lookup, random_scene, random_target, rule_based_select,
    run_tracking_episode, tracking_ts_policy,
)


def line_target(P):
    """Targets on a 2x1 grid (n_pos=2 would be 4 states), here 1-D via n_vel=1."""
    K = len(P)
    n_pos = int(round(math.sqrt(K)))
    return TargetModel(n_pos, 1, n_pos, np.asarray(P, dtype=float))


def scene_from(mats, rng, accuracy=1.0, n_waveforms=6):
    targets = [line_target(P) for P in mats]
    return build_composite(targets, rng, n_waveforms=n_waveforms,
                           accuracy=np.full(n_waveforms, accuracy))


class TestTargets:
    def test_banding(self, rng):
        t = random_target(rng, n_pos=4, n_vel=2, band=1, beta=0.3)
        c = tracking.grid_coords(4, 2)
        jump = np.abs(c[:, None] - c[None]).max(axis=2)
        assert t.dim == 64 and np.all(t.P[jump > 1] == 0)
        np.testing.assert_allclose(t.P.sum(axis=1), 1)

    def test_band_violation(self):
        P = np.zeros((9, 9))
        P[0, 8] = 1
        P[np.arange(1, 9), np.arange(1, 9)] = 1
        with pytest.raises(ValueError):
            TargetModel(3, 1, 1, P)


class TestComposite:
    def test_product_cycle(self, rng):
        cycle = np.array([[0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=float)
        sc = scene_from([cycle, cycle], rng)
        assert sc.K == 16
        np.testing.assert_array_equal(sc.P, np.kron(cycle, cycle))
        assert sc.entropy_rate() == 0.0

    def test_entropy_additivity(self, rng):
        a, b = random_target(rng, 2, 1, 1, 0.2), random_target(rng, 2, 1, 1, 0.6)
        sc = build_composite([a, b], rng, n_waveforms=4)
        direct = markov.entropy_rate(sc.P)
        assert direct == pytest.approx(markov.entropy_rate(a.P) + markov.entropy_rate(b.P), abs=1e-9)
        assert sc.entropy_rate() == pytest.approx(direct, abs=1e-9)

    def test_dim_64(self, rng):
        sc = random_scene(rng, M=3, n_pos=2, n_vel=1)
        assert sc.K == 64

    def test_cap(self, rng):
        with pytest.raises(DimCap):
            random_scene(rng, M=3, n_pos=3, n_vel=2, cap=4096)

    def test_needs_two_targets(self, rng):
        with pytest.raises(ValueError):
            build_composite([random_target(rng, 2)], rng)

    def test_q_rows_and_accuracy(self, rng):
        sc = random_scene(rng, M=2, n_pos=3, n_vel=1, band=1)
        for w in range(sc.n_waveforms):
            q = sc.q(w)
            np.testing.assert_allclose(q.sum(axis=1), 1)
            assert np.all(np.diag(q) > 0)
        nbr = sc.targets[0].neighbors()
        q0 = sc.q_targets[0, 0, :9, :9]
        a = sc.accuracy[0]
        np.testing.assert_allclose(np.diag(q0), a)
        assert np.all(q0[~nbr & ~np.eye(9, dtype=bool)] == 0)

    def test_bad_accuracy(self, rng):
        t = random_target(rng, 2)
        with pytest.raises(ValueError):
            tracking.confusion(t, 0.2)

    def test_loss_table_structure(self, rng):
        sc = random_scene(rng, M=2, n_pos=2, n_vel=1, n_waveforms=10)
        L = sc.loss_table
        assert L.shape == (16, 10) and L.min() >= 0 and L.max() <= 1
        assert np.all(L.min(axis=1) <= 0.05)

    def test_identity_dominance(self, rng):
        targets = [TargetModel(2, 1, 1, np.eye(4)) for _ in range(3)]
        sc = build_composite(targets, rng, n_waveforms=4)
        assert sc.diagonal_dominance() == pytest.approx(1.0)


class TestBelief:
    def test_identity_q(self):
        P = np.full((3, 3), 1 / 3)
        b = belief_update(np.array([0.2, 0.5, 0.3]), P, np.eye(3), 2)
        np.testing.assert_array_equal(b, [0, 0, 1])

    def test_uninformative_q(self, rng):
        P = markov.random_transition_matrix(4, rng)
        b0 = rng.dirichlet(np.ones(4))
        np.testing.assert_allclose(belief_update(b0, P, np.full((4, 4), 0.25), 1), b0 @ P)

    def test_hand_forward(self):
        P = np.array([[0.8, 0.1, 0.1], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]])
        q = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])
        b = belief_update(np.array([0.5, 0.3, 0.2]), P, q, 1)
        np.testing.assert_allclose(b, [48 / 187, 116 / 187, 23 / 187], atol=1e-15)
        b = belief_update(b, P, q, 2)
        np.testing.assert_allclose(b, [71 / 440, 271 / 1320, 19 / 30], atol=1e-15)

    def test_zero_likelihood(self):
        with pytest.raises(ZeroLikelihood):
            belief_update(np.array([1.0, 0.0]), np.eye(2), np.eye(2), 1)

    def test_factorized_matches_direct(self, rng):
        sc = random_scene(rng, M=3, n_pos=2, n_vel=1)
        b = rng.dirichlet(np.ones(sc.K))
        o = [1, 3, 0]
        np.testing.assert_allclose(sc.update_belief(b, 2, o),
                                   belief_update(b, sc.P, sc.q(2), sc.encode(o)), atol=1e-14)

    @given(st.integers(0, 10_000))
    def test_normalized(self, seed):
        rng = np.random.default_rng(seed)
        sc = random_scene(rng, M=2, n_pos=2, n_vel=1, n_waveforms=4)
        b = np.full(sc.K, 1 / sc.K)
        s = [int(rng.integers(4)) for _ in range(2)]
        for _ in range(5):
            w = int(rng.integers(4))
            o = [markov.sample_next(sc.q_targets[w, m, :4, :4], s[m], rng) for m in range(2)]
            b = sc.update_belief(b, w, o)
            assert abs(b.sum() - 1) <= 1e-9 and np.all(b >= 0)


class TestRule:
    def test_select(self):
        lookup = np.array([4, 5, 6])
        assert rule_based_select(np.eye(3)[1], lookup) == 5
        assert rule_based_select(np.full(3, 1 / 3), np.full(3, 2)) == 2
        assert rule_based_select(np.array([0.3, 0.3, 0.4]), lookup) == 6
        assert rule_based_select(np.array([0.4, 0.4, 0.2]), lookup) == 4

    def test_oracle(self, rng):
        sc = random_scene(rng, M=2, n_pos=2, n_vel=1)
        lk = make_rule_lookup(sc)
        np.testing.assert_array_equal(sc.loss_table[np.arange(sc.K), lk], sc.loss_table.min(axis=1))
        np.testing.assert_array_equal(make_rule_lookup(sc, "perturbed", 0.0, rng), lk)

    def test_perturbed_count(self, rng):
        sc = random_scene(rng, M=3, n_pos=2, n_vel=1)
        lk = make_rule_lookup(sc, "perturbed", 0.5, np.random.default_rng(3))
        assert np.count_nonzero(lk != make_rule_lookup(sc)) == math.ceil(sc.K / 2)


class TestEpisode:
    def test_identity_noiseless(self, rng):
        sc = scene_from([np.eye(4), np.eye(4)], rng)
        tr = run_tracking_episode(sc, RuleBasedPolicy(make_rule_lookup(sc)), 50, rng)
        minima = sc.loss_table.min(axis=1)
        np.testing.assert_array_equal(tr.loss[1:], minima[tr.true_state[1:]])

    def test_cycle_noiseless(self, rng):
        cycle = np.eye(4)[[1, 2, 3, 0]]
        sc = scene_from([cycle, np.eye(4)], rng)
        tr = run_tracking_episode(sc, RuleBasedPolicy(make_rule_lookup(sc)), 12,
                                  np.random.default_rng(1))
        minima = sc.loss_table.min(axis=1)
        np.testing.assert_array_equal(tr.loss[1:], minima[tr.true_state[1:]])
        # one period of the first target visits all four of its positions
        assert len({s // 4 for s in tr.true_state[1:5]}) == 4

    def test_noiseless_belief_is_point_mass(self, rng):
        sc = scene_from([markov.random_transition_matrix(4, rng)] * 2, rng)
        b = np.full(sc.K, 1 / sc.K)
        s = [0, 1]
        for _ in range(10):
            s = [markov.sample_next(t.P, x, rng) for t, x in zip(sc.targets, s)]
            b = sc.update_belief(b, 0, s)
            np.testing.assert_array_equal(b, np.eye(sc.K)[sc.encode(s)])

    @pytest.mark.parametrize("make", ["rule", "ts", "random", "ts_hash"])
    def test_kernel_matches_python(self, make, rng):
        sc = random_scene(rng, M=2, n_pos=2, n_vel=1, n_waveforms=8)
        build = {
            "rule": lambda: RuleBasedPolicy(make_rule_lookup(sc)),
            "ts": lambda: tracking_ts_policy(sc),
            "ts_hash": lambda: tracking_ts_policy(sc, mode="hash", seed=2),
            "random": lambda: TrackingRandomPolicy(8),
        }[make]
        a = run_tracking_episode(sc, build(), 300, np.random.default_rng(4), engine="python")
        b = run_tracking_episode(sc, build(), 300, np.random.default_rng(4), engine="kernel")
        assert a.equals(b)

    @pytest.mark.xfail(strict=True, reason="holds on 19 of these 20 scenes; under "
                       "uninformative sensing the rule is one fixed arm, see notes")
    def test_uninformative_oracle_beats_random(self):
        rng = np.random.default_rng(0)
        profile = tracking.LossProfile(n_generalist=0)
        wins = 0
        for _ in range(20):
            sc = random_scene(rng, M=2, n_pos=2, n_vel=1, accuracy=np.full(20, 0.2500001),
                              loss_profile=profile)
            seed = int(rng.integers(2**32))
            rule = run_tracking_episode(sc, RuleBasedPolicy(make_rule_lookup(sc)), 10_000,
                                        np.random.default_rng(seed))
            rand = run_tracking_episode(sc, TrackingRandomPolicy(20), 10_000,
                                        np.random.default_rng(seed))
            wins += rule.mean_loss <= rand.mean_loss
        assert wins == 20

    def test_uninformative_rule_is_fixed_arm(self):
        # the belief converges to mu, so the rule settles on the arm of argmax mu
        rng = np.random.default_rng(5)
        for _ in range(5):
            sc = random_scene(rng, M=2, n_pos=2, n_vel=1, beta=0.3,
                              accuracy=np.full(20, 0.2500001))
            mu = sc.stationary()
            lk = make_rule_lookup(sc)
            tr = run_tracking_episode(sc, RuleBasedPolicy(lk), 20_000, rng)
            assert np.all(tr.wf[200:] == lk[np.argmax(mu)])
            assert tr.mean_loss == pytest.approx(mu @ sc.loss_table[:, lk[np.argmax(mu)]], abs=0.03)
            rand = run_tracking_episode(sc, TrackingRandomPolicy(20), 20_000, rng)
            assert rand.mean_loss == pytest.approx((mu @ sc.loss_table).mean(), abs=0.03)

    def test_sticky_scene_rule_wins_short_horizon(self):
        rng = np.random.default_rng(11)
        wins = 0
        for _ in range(10):
            sc = random_scene(rng, M=3, beta=0.9, accuracy=np.ones(20))
            seed = int(rng.integers(2**32))
            rule = run_tracking_episode(sc, RuleBasedPolicy(make_rule_lookup(sc)), 1000,
                                        np.random.default_rng(seed))
            ts = run_tracking_episode(sc, tracking_ts_policy(sc), 1000, np.random.default_rng(seed))
            wins += rule.mean_loss <= ts.mean_loss
        assert wins >= 8

    def test_custom_features_use_python(self, rng):
        sc = random_scene(rng, M=2, n_pos=2, n_vel=1, n_waveforms=4)
        pol = TsPolicy(4, 3, features=lambda b: np.array([b[0], b[1], 1.0]))
        tr = run_tracking_episode(sc, pol, 20, rng)
        assert len(tr) == 20
        with pytest.raises(ValueError):
            run_tracking_episode(sc, pol, 20, rng, engine="kernel")

    def test_csv(self, tmp_path, rng):
        sc = random_scene(rng, M=2, n_pos=2, n_vel=1)
        tr = run_tracking_episode(sc, TrackingRandomPolicy(sc.n_waveforms), 5, rng)
        tr.to_csv(tmp_path / "ep.csv")
        lines = (tmp_path / "ep.csv").read_text().splitlines()
        assert lines[0] == "t,true_state,obs,wf,loss" and len(lines) == 6


def test_features():
    f = BeliefFeatures(10, 3, mode="truncate")
    b = np.arange(10) / 45
    np.testing.assert_allclose(f(b), [0, 1 / 45, 2 / 45, 1.0])
    h = BeliefFeatures(10, 3, mode="hash", seed=1)
    x = h(b)
    assert x[-1] == 1.0 and x[:3].sum() == pytest.approx(1.0)


def test_scene_config(tmp_path):
    (tmp_path / "s.toml").write_text(
        "targets = 2\nn_pos = 2\nband = 1\nbeta = 0.5\nseed = 3\nn_waveforms = 5\n"
        "[loss_profile]\nspread = 0.4\n")
    a = tracking.load_scene_config(tmp_path / "s.toml")
    b = tracking.load_scene_config(tmp_path / "s.toml")
    assert a.K == 16 and np.array_equal(a.loss_table, b.loss_table)
    (tmp_path / "bad.toml").write_text("[loss_profile]\nwobble = 1\n")
    with pytest.raises(ConfigError):
        tracking.load_scene_config(tmp_path / "bad.toml")
