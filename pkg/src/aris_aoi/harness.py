"""Experiment orchestration: policy evaluation, sweeps, metric CSVs.

Each sweep point is evaluated with deterministic per-point seeding, so any
run can be repeated bit-exactly or resumed (completed metric rows are
skipped on re-run). Plot emission is data-only CSV; rendering is left to
external tools.
"""

from __future__ import annotations

import copy
import csv
import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn, ppo
from .baselines import HoveringGreedyPolicy, dp_oracle, random_walk_policy
from .config import ExperimentSpec, build_network
from .env import Action, AoiEnv, NetworkConfig, TraceRow, observe
from .ppo import PpoConfig, TrainResult

METRICS_FIELDS = ["experiment", "policy", "sweep_value", "seed", "esa", "mean_reward",
                  "per_device_ages"]


@dataclass
class EpisodeResult:
    esa: float
    total_reward: float
    per_device_age: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)


def run_episode(
    env: AoiEnv,
    act: Callable[[AoiEnv], Action],
    episode_seed: int,
    record_trace: bool = False,
    on_reset: Optional[Callable[[AoiEnv], None]] = None,
) -> EpisodeResult:
    env.reset(episode_seed)
    if on_reset is not None:
        on_reset(env)
    aoi_rows = []
    total_reward = 0.0
    rows: list[TraceRow] = []
    while not env.done:
        slot = env.state.slot
        active = env.active_now()
        action = act(env)
        outcome = env.step(action)
        aoi_rows.append(outcome.next_state.aoi.copy())
        total_reward += outcome.reward
        if record_trace:
            s = outcome.next_state.aligned_snr[action.schedule]
            rows.append(TraceRow(
                slot=slot,
                altitude=outcome.next_state.altitude,
                scheduled=action.schedule,
                active=int(active[action.schedule]),
                snr_db=10.0 * math.log10(s) if s > 0 else float("-inf"),
                delivered=outcome.delivered,
                aoi=outcome.next_state.aoi.copy(),
                reward=outcome.reward,
            ))
    stacked = np.stack(aoi_rows)
    return EpisodeResult(
        esa=float(stacked.mean()),
        total_reward=total_reward,
        per_device_age=stacked.mean(axis=0),
        trace=rows,
    )


def make_policy(
    kind: str,
    config: NetworkConfig,
    seed: int,
    ppo_params: Optional[nn.PolicyParams] = None,
):
    """-> (act(env) -> Action, on_reset(env) or None) for one evaluation seed."""
    if kind == "random_walk":
        rng = np.random.default_rng([config.seed, 0x4A11, seed])
        return (lambda env: random_walk_policy(env.state, rng)), None
    if kind == "hovering_greedy":
        policy = HoveringGreedyPolicy(config)
        return (lambda env: policy.act(env.state)), (lambda env: policy.start_episode())
    if kind == "trained_ppo":
        if ppo_params is None:
            raise ValueError("trained_ppo evaluation needs trained parameters")
        return (
            lambda env: ppo.greedy_action(ppo_params, observe(env.state, config))
        ), None
    if kind == "dp_oracle":
        result = dp_oracle(config)
        seq = result.actions
        return (lambda env: seq[env.state.slot]), None
    raise ValueError(f"unknown policy kind {kind!r}")


@dataclass
class EvalResult:
    mean_esa: float
    std_esa: float
    per_device_ages: np.ndarray
    per_seed_esa: np.ndarray
    mean_reward: float


def evaluate_policy(
    kind: str,
    config: NetworkConfig,
    episodes: int,
    seeds: tuple[int, ...],
    ppo_params: Optional[nn.PolicyParams] = None,
) -> EvalResult:
    """Sample-mean ESA over `episodes` episodes for each evaluation seed."""
    per_seed = []
    rewards = []
    ages = np.zeros(config.num_devices)
    count = 0
    for seed in seeds:
        act, on_reset = make_policy(kind, config, seed, ppo_params)
        env = AoiEnv(config)
        esas = []
        for ep in range(episodes):
            res = run_episode(env, act, episode_seed=seed * 100_003 + ep, on_reset=on_reset)
            esas.append(res.esa)
            rewards.append(res.total_reward)
            ages += res.per_device_age
            count += 1
        per_seed.append(float(np.mean(esas)))
    per_seed = np.asarray(per_seed)
    all_esa = per_seed  # per-seed means; overall stats across seeds
    return EvalResult(
        mean_esa=float(all_esa.mean()),
        std_esa=float(all_esa.std(ddof=1)) if len(all_esa) > 1 else 0.0,
        per_device_ages=ages / count,
        per_seed_esa=per_seed,
        mean_reward=float(np.mean(rewards)),
    )


def train_ppo_for(
    config: NetworkConfig, ppo_cfg: PpoConfig, train_seed: int, metrics_path=None
) -> TrainResult:
    return ppo.train(config, ppo_cfg, seed=train_seed, metrics_path=metrics_path)


def _network_for_point(raw, spec: ExperimentSpec, sweep_value) -> NetworkConfig:
    data = copy.deepcopy(raw)
    net = data["network"]
    if spec.sweep == "num_devices":
        net["num_devices"] = int(sweep_value)
        net["devices"] = []
        net["activation_probs"] = []
    elif spec.sweep == "num_elements_and_power":
        f_elems, p_dbm = sweep_value
        net["num_elements"] = int(f_elems)
        net["tx_power_dbm"] = float(p_dbm)
    return build_network(data)


def sweep_points(spec: ExperimentSpec):
    if spec.sweep == "num_elements_and_power":
        return list(itertools.product(spec.sweep_values, spec.tx_power_dbm_values))
    if spec.sweep in ("convergence", "per_device_age"):
        return [spec.sweep_values[0]]
    return list(spec.sweep_values)


def _existing_rows(path) -> set[tuple]:
    done = set()
    if os.path.exists(path):
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                done.add((row["policy"], row["sweep_value"], row["seed"]))
    return done


def run_experiment(raw, spec: ExperimentSpec, ppo_cfg: PpoConfig) -> str:
    """Execute one experiment spec; returns the metrics CSV path.

    Writes `<out>/<name>_metrics.csv` (append, resumable) and
    `<out>/<name>_plot.csv` with per-(policy, sweep point) mean and std.
    For the convergence sweep the per-iteration learning curve CSVs are the
    primary output.
    """
    out = spec.output_dir
    os.makedirs(out, exist_ok=True)
    metrics_path = os.path.join(out, f"{spec.name}_metrics.csv")

    if spec.sweep == "convergence":
        for seed in spec.seeds:
            config = _network_for_point(raw, spec, None)
            curve = os.path.join(out, f"{spec.name}_curve_seed{seed}.csv")
            train_ppo_for(config, ppo_cfg, train_seed=seed, metrics_path=curve)
        return metrics_path

    done = _existing_rows(metrics_path)
    new_file = not os.path.exists(metrics_path)
    with open(metrics_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        if new_file:
            writer.writeheader()
        for point in sweep_points(spec):
            config = _network_for_point(raw, spec, point)
            trained: dict[str, TrainResult] = {}
            for policy in spec.policies:
                params = None
                if policy == "trained_ppo":
                    if "model" not in trained:
                        trained["model"] = train_ppo_for(
                            config, ppo_cfg, train_seed=spec.seeds[0]
                        )
                    params = trained["model"].params
                for seed in spec.seeds:
                    key = (policy, str(point), str(seed))
                    if key in done:
                        continue
                    res = evaluate_policy(
                        policy, config, spec.episodes_per_point, (seed,), params
                    )
                    writer.writerow({
                        "experiment": spec.name,
                        "policy": policy,
                        "sweep_value": str(point),
                        "seed": seed,
                        "esa": f"{res.mean_esa:.9f}",
                        "mean_reward": f"{res.mean_reward:.9f}",
                        "per_device_ages": "|".join(
                            f"{a:.6f}" for a in res.per_device_ages
                        ) if spec.sweep == "per_device_age" else "",
                    })
                    fh.flush()
    write_plot_data(metrics_path, os.path.join(out, f"{spec.name}_plot.csv"))
    return metrics_path


def write_plot_data(metrics_path, plot_path) -> None:
    """Aggregate metric rows into per-(policy, sweep point) mean and std."""
    groups: dict[tuple[str, str], list[float]] = {}
    with open(metrics_path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault((row["policy"], row["sweep_value"]), []).append(
                float(row["esa"])
            )
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "sweep_value", "esa_mean", "esa_std", "n"])
        for (policy, value), esas in sorted(groups.items()):
            arr = np.asarray(esas)
            std = arr.std(ddof=1) if len(arr) > 1 else 0.0
            writer.writerow([policy, value, f"{arr.mean():.9f}", f"{std:.9f}", len(arr)])


def frozen_trace_config(config: NetworkConfig, trace_seed: int) -> NetworkConfig:
    """Freeze one Bernoulli activation draw into a fixed-trace config (for
    the DP oracle on otherwise stochastic instances)."""
    from dataclasses import replace
    from .env import ActivationSpec

    if config.activation.kind == "fixed_trace":
        return config
    env = AoiEnv(config)
    env.reset(trace_seed)
    trace = env._trace.copy()
    return replace(config, activation=ActivationSpec(kind="fixed_trace", trace=trace))
