import itertools

import numpy as np
import pytest

from aris_aoi.baselines import (
    HoveringGreedyPolicy,
    altitude_grid,
    dp_oracle,
    feasible_count,
    random_walk_policy,
    reachable_altitudes,
)
from aris_aoi.channel import aligned_snr, distance_device_to_uav, distance_uav_to_bs
from aris_aoi.env import DOWN, HOVER, UP, ActivationSpec, AoiEnv, EnvState
from conftest import make_channel, make_config


def fixed_trace_config(trace, devices=None, channel=None, **kw):
    trace = np.asarray(trace, dtype=np.int8)
    m, n = trace.shape
    if devices is None:
        devices = tuple((250.0 + 10.0 * i, 250.0) for i in range(m))
    return make_config(
        devices=devices,
        horizon=n,
        activation=ActivationSpec(kind="fixed_trace", trace=trace),
        channel=channel or make_channel(snr_threshold=1e-30),
        **kw,
    )


def brute_force_esa(config):
    """Straight-line enumeration over every (schedule, move)^N sequence."""
    m, n = config.num_devices, config.horizon
    trace = config.activation.trace
    ch = config.channel

    def snr_at(i, h):
        d_dev = distance_device_to_uav(config.devices[i], config.uav_xy, h)
        d_bs = distance_uav_to_bs(config.bs, config.uav_xy, h)
        return aligned_snr(d_dev, d_bs, ch)

    best = np.inf
    moves = {UP: config.d_max, DOWN: -config.d_max, HOVER: 0.0}
    for seq in itertools.product(itertools.product(range(m), (UP, DOWN, HOVER)), repeat=n):
        h = config.h_start
        aoi = [0] * m
        total = 0
        for slot, (sched, move) in enumerate(seq):
            tentative = h + moves[move]
            if config.h_min <= tentative <= config.h_max:
                h = tentative
            delivered = trace[sched, slot] == 1 and snr_at(sched, h) >= ch.snr_threshold
            aoi = [a + 1 for a in aoi]
            if delivered:
                aoi[sched] = 1
            total += sum(aoi)
        best = min(best, total / (n * m))
    return best


class TestRandomWalk:
    def state(self, m):
        return EnvState(np.zeros(m, dtype=np.int64), np.zeros(m), 100.0, 0)

    def test_singleton_support(self, rng):
        for _ in range(50):
            assert random_walk_policy(self.state(1), rng).schedule == 0

    def test_uniform_device_frequencies(self, rng):
        n = 100_000
        counts = np.zeros(4)
        for _ in range(n):
            counts[random_walk_policy(self.state(4), rng).schedule] += 1
        sigma = np.sqrt(n * 0.25 * 0.75)
        assert np.all(np.abs(counts - n * 0.25) <= 3 * sigma + 1)

    def test_seeded_reproducible(self):
        r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
        s1 = [random_walk_policy(self.state(3), r1) for _ in range(20)]
        s2 = [random_walk_policy(self.state(3), r2) for _ in range(20)]
        assert s1 == s2


class TestHoveringGreedy:
    def test_all_feasible_target_is_lowest(self):
        cfg = make_config(channel=make_channel(snr_threshold=1e-30))
        policy = HoveringGreedyPolicy(cfg)
        policy.start_episode()
        assert policy.target == cfg.h_min

    def test_max_aoi_scheduling_with_tie_break(self):
        cfg = make_config(
            devices=((100.0, 100.0), (200.0, 200.0), (300.0, 300.0)),
            channel=make_channel(snr_threshold=1e-30),
        )
        policy = HoveringGreedyPolicy(cfg)
        policy.start_episode()
        st = EnvState(np.array([3, 9, 9]), np.zeros(3), 100.0, 0)
        assert policy.act(st).schedule == 1

    def test_band_feasibility_target_in_band(self):
        # high BS above the UAV: the distance product is minimized at an
        # interior altitude, giving an interior feasibility band
        ch = make_channel(num_elements=64, tx_power=1.0, snr_threshold=50.0)
        cfg = make_config(devices=((250.0, 250.0),), bs=(260.0, 250.0, 800.0), channel=ch)
        grid = altitude_grid(cfg)
        feasible = np.array([feasible_count(cfg, h) == 1 for h in grid])
        assert feasible.any() and not feasible.all()  # a genuine band
        policy = HoveringGreedyPolicy(cfg)
        policy.start_episode()
        assert feasible[np.where(grid == policy.target)[0][0]]
        assert policy.target == grid[np.argmax(feasible)]  # lowest feasible height

    def test_altitude_moves_obey_constraints(self):
        ch = make_channel(num_elements=64, tx_power=1.0, snr_threshold=50.0)
        cfg = make_config(
            devices=((250.0, 250.0),), bs=(260.0, 250.0, 800.0), channel=ch, horizon=60
        )
        env = AoiEnv(cfg)
        env.reset(0)
        policy = HoveringGreedyPolicy(cfg)
        policy.start_episode()
        prev_alt = env.state.altitude
        while not env.done:
            out = env.step(policy.act(env.state))
            assert cfg.h_min <= out.next_state.altitude <= cfg.h_max
            assert abs(out.next_state.altitude - prev_alt) <= cfg.d_max + 1e-12
            assert not out.altitude_violation
            prev_alt = out.next_state.altitude
        # it eventually parks on the target and hovers
        assert abs(prev_alt - policy.target) < cfg.d_max


class TestDpOracle:
    def test_never_active_closed_form(self):
        n = 12
        cfg = fixed_trace_config(np.zeros((1, n)))
        res = dp_oracle(cfg)
        assert res.optimal_esa == pytest.approx((n + 1) / 2)

    def test_always_active_always_feasible(self):
        cfg = fixed_trace_config(np.ones((1, 10)))
        assert dp_oracle(cfg).optimal_esa == pytest.approx(1.0)

    def test_requires_fixed_trace(self):
        cfg = make_config(activation=ActivationSpec(kind="iid_bernoulli"))
        with pytest.raises(ValueError):
            dp_oracle(cfg)

    def test_size_limits(self):
        cfg = fixed_trace_config(np.ones((1, 21)))
        with pytest.raises(ValueError):
            dp_oracle(cfg)

    def test_alternating_two_devices_vs_brute_force(self):
        trace = np.array([[1, 0, 1, 0, 1], [0, 1, 0, 1, 0]])
        cfg = fixed_trace_config(trace)
        res = dp_oracle(cfg)
        assert res.optimal_esa == pytest.approx(brute_force_esa(cfg))

    def test_altitude_dependent_feasibility_vs_brute_force(self):
        # device feasible only at low altitudes: the oracle must descend
        ch = make_channel(num_elements=64, tx_power=1.0, snr_threshold=5e4)
        trace = np.array([[1, 1, 1, 1, 1, 1]])
        cfg = fixed_trace_config(
            trace, devices=((250.0, 250.0),), channel=ch,
            h_start=40.0, h_min=10.0, h_max=100.0,
        )
        res = dp_oracle(cfg)
        assert res.optimal_esa == pytest.approx(brute_force_esa(cfg))

    def test_cap_at_or_beyond_horizon_is_exact(self):
        trace = np.array([[0, 0, 1, 0, 1, 0], [1, 0, 0, 1, 0, 0]])
        cfg = fixed_trace_config(trace)
        exact = dp_oracle(cfg, aoi_cap=6).optimal_esa
        assert dp_oracle(cfg, aoi_cap=50).optimal_esa == exact
        assert dp_oracle(cfg).optimal_esa == exact

    def test_action_sequence_replays_to_reported_esa(self):
        trace = np.array([[1, 0, 1, 0, 1, 1], [0, 1, 1, 1, 0, 0]])
        cfg = fixed_trace_config(trace)
        res = dp_oracle(cfg)
        env = AoiEnv(cfg)
        env.reset(0)
        rows = []
        for action in res.actions:
            rows.append(env.step(action).next_state.aoi.copy())
        assert float(np.mean(np.stack(rows))) == pytest.approx(res.optimal_esa)

    def test_dominance_over_greedy(self):
        trace = np.array([[1, 0, 1, 0, 1, 0, 1, 0], [0, 1, 0, 1, 0, 1, 0, 1]])
        cfg = fixed_trace_config(trace)
        oracle_esa = dp_oracle(cfg).optimal_esa
        env = AoiEnv(cfg)
        env.reset(0)
        policy = HoveringGreedyPolicy(cfg)
        policy.start_episode()
        rows = []
        while not env.done:
            rows.append(env.step(policy.act(env.state)).next_state.aoi.copy())
        greedy_esa = float(np.mean(np.stack(rows)))
        assert oracle_esa <= greedy_esa + 1e-12


class TestAltitudeGrids:
    def test_reachable_lattice_anchored_at_start(self):
        cfg = make_config(h_min=10.0, h_max=100.0, h_start=45.0, d_max=10.0)
        grid = reachable_altitudes(cfg)
        assert grid[0] == pytest.approx(15.0)
        assert grid[-1] == pytest.approx(95.0)
        assert np.all(np.diff(grid) == pytest.approx(10.0))
        assert 45.0 in grid
