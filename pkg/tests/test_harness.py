import csv
import os

import numpy as np
import pytest

from aris_aoi import cli, config as cfgmod, harness
from aris_aoi.config import (
    ConfigError,
    db_to_linear,
    dbm_to_watts,
    dump_config,
    linear_to_db,
    load_config,
    load_raw,
    watts_to_dbm,
)
from aris_aoi.env import ActivationSpec, AoiEnv, write_trace_csv
from conftest import make_channel, make_config


class TestLoadConfig:
    def test_paper_defaults(self):
        raw, net, pcfg, spec = load_config()
        assert net.horizon == 120
        assert net.channel.tx_power == pytest.approx(0.1)
        assert net.channel.noise_power == pytest.approx(1e-14)
        assert net.channel.gamma0 == pytest.approx(0.01)
        assert net.channel.eta == 2.3
        assert net.channel.snr_threshold == pytest.approx(1.0)
        assert net.channel.k1 == pytest.approx(10**0.8)
        assert (net.h_start, net.h_min, net.h_max, net.d_max) == (100.0, 10.0, 1000.0, 10.0)
        assert net.uav_xy == (250.0, 250.0)
        assert (net.bs.x, net.bs.y, net.bs.z) == (2000.0, 500.0, 25.0)
        assert pcfg.learning_rate == 0.001
        assert pcfg.discount == 0.9
        assert pcfg.clip_epsilon == 0.2
        assert pcfg.rollout_length == 240
        assert pcfg.hidden == (64, 64, 64)
        assert pcfg.value_coef == 0.5
        assert pcfg.entropy_coef == 0.01

    def test_dbm_round_trip(self):
        assert dbm_to_watts(20.0) == pytest.approx(0.1)
        assert watts_to_dbm(dbm_to_watts(20.0)) == pytest.approx(20.0, rel=1e-12)
        for db in (-110.0, -20.0, 0.0, 8.0):
            assert linear_to_db(db_to_linear(db)) == pytest.approx(db, rel=1e-9, abs=1e-9)

    def test_invalid_altitude_bounds_named(self):
        with pytest.raises(ConfigError, match="altitude bounds"):
            load_config(overrides=["network.h_max=5"])

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["network.no_such_key=1"])
        with pytest.raises(ConfigError):
            load_config(overrides=["banana=1"])

    def test_file_and_override_precedence(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text("[network]\nhorizon = 50\nnum_devices = 4\n")
        raw, net, _, _ = load_config(p, overrides=["network.horizon=60"])
        assert net.horizon == 60
        assert net.num_devices == 4

    def test_parse_error_reported(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[network\nhorizon=2")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_config(p)

    def test_explicit_devices_and_probs(self):
        raw, net, _, _ = load_config(overrides=[
            "network.devices=[[10.0, 20.0], [30.0, 40.0]]",
            "network.activation_probs=[0.5, 0.25]",
        ])
        assert net.num_devices == 2
        assert net.devices[0].x == 10.0
        assert net.activation.probs == pytest.approx([0.5, 0.25])

    def test_dump_round_trip(self, tmp_path):
        raw, net, pcfg, spec = load_config(overrides=["network.num_elements=64"])
        path = tmp_path / "resolved.toml"
        dump_config(raw, path)
        raw2, net2, pcfg2, spec2 = load_config(path)
        assert raw2 == raw
        assert net2 == net
        assert pcfg2 == pcfg
        assert spec2 == spec


class TestEvaluatePolicy:
    def test_never_deliver_esa(self):
        cfg = make_config(
            horizon=120,
            activation=ActivationSpec(kind="fixed_trace", trace=np.zeros((1, 120), dtype=np.int8)),
        )
        res = harness.evaluate_policy("random_walk", cfg, episodes=2, seeds=(0,))
        assert res.mean_esa == pytest.approx(60.5)

    def test_always_deliver_esa(self):
        cfg = make_config(
            horizon=30,
            channel=make_channel(snr_threshold=1e-30),
            activation=ActivationSpec(kind="fixed_trace", trace=np.ones((1, 30), dtype=np.int8)),
        )
        res = harness.evaluate_policy("hovering_greedy", cfg, episodes=3, seeds=(0, 1))
        assert res.mean_esa == pytest.approx(1.0)
        assert res.std_esa == 0.0
        assert res.per_device_ages == pytest.approx([1.0])

    def test_deterministic_across_calls(self):
        cfg = make_config(
            devices=((100.0, 100.0), (400.0, 300.0)),
            horizon=20,
            activation=ActivationSpec(kind="iid_bernoulli", probs=np.array([0.7, 0.4])),
            channel=make_channel(snr_threshold=1e-30),
        )
        a = harness.evaluate_policy("random_walk", cfg, 3, (0, 1))
        b = harness.evaluate_policy("random_walk", cfg, 3, (0, 1))
        assert np.array_equal(a.per_seed_esa, b.per_seed_esa)
        assert a.mean_esa == b.mean_esa


class TestTraceCsv:
    def test_schema(self, tmp_path):
        cfg = make_config(
            devices=((100.0, 100.0), (400.0, 300.0)),
            horizon=5,
            activation=ActivationSpec(kind="iid_bernoulli", probs=np.array([0.7, 0.4])),
        )
        env = AoiEnv(cfg)
        act, _ = harness.make_policy("random_walk", cfg, 0)
        res = harness.run_episode(env, act, episode_seed=0, record_trace=True)
        path = tmp_path / "trace.csv"
        write_trace_csv(res.trace, path, cfg.num_devices)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["slot", "altitude", "scheduled", "active", "snr_db",
                           "delivered", "aoi_0", "aoi_1", "reward"]
        assert len(rows) == 6
        assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3", "4"]


def small_experiment_raw(tmp_path, policies=("random_walk", "hovering_greedy")):
    return load_raw(overrides=[
        "network.horizon=10",
        "network.num_devices=2",
        "network.num_elements=64",
        "network.tx_power_dbm=30",
        "experiment.name=tiny",
        "experiment.sweep=num_devices",
        "experiment.sweep_values=[2, 3]",
        "experiment.episodes_per_point=2",
        "experiment.seeds=[0, 1]",
        f"experiment.policies={list(policies)!r}".replace("'", '"'),
        f'experiment.output_dir="{tmp_path}"',
    ])


class TestRunExperiment:
    def test_rows_and_plot_data(self, tmp_path):
        raw = small_experiment_raw(tmp_path)
        spec = cfgmod.build_experiment(raw)
        pcfg = cfgmod.build_ppo(raw)
        metrics_path = harness.run_experiment(raw, spec, pcfg)
        with open(metrics_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        # 2 policies x 2 sweep values x 2 seeds
        assert len(rows) == 8
        plot_path = os.path.join(str(tmp_path), "tiny_plot.csv")
        with open(plot_path, newline="") as fh:
            plot = {(r["policy"], r["sweep_value"]): r for r in csv.DictReader(fh)}
        for (policy, value), prow in plot.items():
            esas = [float(r["esa"]) for r in rows
                    if r["policy"] == policy and r["sweep_value"] == value]
            assert float(prow["esa_mean"]) == pytest.approx(np.mean(esas))
            assert int(prow["n"]) == len(esas)

    def test_resume_skips_completed(self, tmp_path):
        raw = small_experiment_raw(tmp_path)
        spec = cfgmod.build_experiment(raw)
        pcfg = cfgmod.build_ppo(raw)
        metrics_path = harness.run_experiment(raw, spec, pcfg)
        first = open(metrics_path).read()
        harness.run_experiment(raw, spec, pcfg)
        assert open(metrics_path).read() == first

    def test_reruns_are_bit_identical(self, tmp_path):
        raw_a = small_experiment_raw(tmp_path / "a")
        raw_b = small_experiment_raw(tmp_path / "b")
        pa = harness.run_experiment(raw_a, cfgmod.build_experiment(raw_a), cfgmod.build_ppo(raw_a))
        pb = harness.run_experiment(raw_b, cfgmod.build_experiment(raw_b), cfgmod.build_ppo(raw_b))
        assert open(pa).read() == open(pb).read()


class TestFrozenTrace:
    def test_freeze_is_deterministic(self):
        cfg = make_config(
            devices=((100.0, 100.0), (400.0, 300.0)),
            horizon=8,
            activation=ActivationSpec(kind="iid_bernoulli", probs=np.array([0.5, 0.5])),
        )
        a = harness.frozen_trace_config(cfg, trace_seed=3)
        b = harness.frozen_trace_config(cfg, trace_seed=3)
        assert np.array_equal(a.activation.trace, b.activation.trace)
        assert a.activation.kind == "fixed_trace"


class TestCli:
    def test_dump_config(self, capsys):
        assert cli.main(["dump-config"]) == 0
        out = capsys.readouterr().out
        assert "[network]" in out and "horizon = 120" in out

    def test_config_error_exit_code(self, capsys):
        assert cli.main(["dump-config", "--override", "network.h_max=5"]) == 1

    def test_oracle(self, tmp_path, capsys):
        code = cli.main([
            "oracle",
            "--override", "network.horizon=6",
            "--override", "network.num_devices=2",
            "--override", "network.num_elements=256",
            "--override", "network.tx_power_dbm=40",
            "--override", "network.devices=[[250.0, 250.0], [260.0, 250.0]]",
            "--out", str(tmp_path),
        ])
        assert code == 0
        with open(tmp_path / "oracle.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert set(rows[0]) == {"instance_id", "optimal_esa", "runtime_ms"}
        assert float(rows[0]["optimal_esa"]) >= 1.0

    def test_train_and_evaluate_checkpoint(self, tmp_path, capsys):
        common = [
            "--override", "network.horizon=5",
            "--override", "network.num_devices=1",
            "--override", "ppo.rollout_length=10",
            "--override", "ppo.total_samples=20",
            "--override", "ppo.hidden=[8]",
            "--override", "experiment.episodes_per_point=2",
            "--override", "experiment.seeds=[0]",
        ]
        assert cli.main(["train", "--out", str(tmp_path)] + common) == 0
        assert (tmp_path / "training_curve.csv").exists()
        ckpt = tmp_path / "policy.ckpt"
        assert ckpt.exists()
        code = cli.main(
            ["evaluate", "--policy", "trained_ppo", "--checkpoint", str(ckpt)] + common
        )
        assert code == 0
        assert "esa=" in capsys.readouterr().out

    def test_evaluate_random_walk(self, capsys):
        code = cli.main([
            "evaluate", "--policy", "random_walk",
            "--override", "network.horizon=5",
            "--override", "experiment.episodes_per_point=1",
            "--override", "experiment.seeds=[0]",
        ])
        assert code == 0
        assert "per_device_ages=" in capsys.readouterr().out
