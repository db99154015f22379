"""PPO with a factored (schedule, altitude) categorical policy.

Rollouts are collected with a frozen snapshot of the parameters, advantages
come from GAE, and the clipped surrogate plus value and entropy terms are
ascended with Adam over shuffled minibatches. The on-policy buffer is
discarded after every iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import Action, AoiEnv, NetworkConfig, observe, observation_dim
from . import nn


@dataclass(frozen=True)
class PpoConfig:
    rollout_length: int = 240
    epochs_per_iter: int = 10
    minibatch_size: int = 60
    clip_epsilon: float = 0.2
    discount: float = 0.9
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 1e-3
    total_samples: int = 48_000
    advantage_normalization: bool = True
    reward_scaling: bool = True
    lr_decay: bool = True
    hidden: tuple[int, ...] = (64, 64, 64)

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.rollout_length < 1:
            raise ValueError("rollout_length must be >= 1")


def build_policy_spec(obs_dim: int, num_devices: int, hidden=(64, 64, 64)) -> nn.MlpSpec:
    return nn.MlpSpec(
        input_dim=obs_dim,
        hidden=tuple(hidden),
        heads=(
            ("schedule", num_devices, nn.CATEGORICAL),
            ("altitude", 3, nn.CATEGORICAL),
            ("value", 1, nn.SCALAR),
        ),
    )


def sample_action(
    params: nn.PolicyParams, features: np.ndarray, rng: np.random.Generator
) -> tuple[Action, float, float]:
    """Sample the joint action; returns (action, joint log-prob, value)."""
    out = nn.forward(params, features)
    sched, lp_s = nn.categorical_sample(out["schedule"], rng)
    move, lp_a = nn.categorical_sample(out["altitude"], rng)
    return Action(schedule=sched, altitude_move=move), lp_s + lp_a, float(out["value"])


def greedy_action(params: nn.PolicyParams, features: np.ndarray) -> Action:
    out = nn.forward(params, features)
    return Action(
        schedule=int(np.argmax(out["schedule"])),
        altitude_move=int(np.argmax(out["altitude"])),
    )


class RewardNormalizer:
    """Scales learner rewards by the running std of the discounted return.

    Raw environment rewards here have magnitude ~mean AoI, so value targets
    reach O(N) and the value-loss gradient through the shared trunk drowns
    the policy gradient. Dividing rewards by the running return std keeps
    critic targets O(1) without touching reported episode rewards.
    """

    def __init__(self, discount: float, num_envs: int):
        self.discount = discount
        self.returns = np.zeros(num_envs)
        self._count = 0
        self._mean = 0.0
        self._m2 = 0.0

    @property
    def std(self) -> float:
        if self._count < 2:
            return 1.0
        return float(np.sqrt(self._m2 / self._count + 1e-8))

    def scale(self, env_index: int, reward: float, done: bool) -> float:
        self.returns[env_index] = self.discount * self.returns[env_index] + reward
        r = self.returns[env_index]
        self._count += 1
        delta = r - self._mean
        self._mean += delta / self._count
        self._m2 += delta * (r - self._mean)
        if done:
            self.returns[env_index] = 0.0
        return reward / self.std


@dataclass
class Trajectory:
    """Concatenated rollout segments (one segment per environment)."""

    features: np.ndarray
    schedules: np.ndarray
    altitudes: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_values: np.ndarray  # one per segment
    segment_bounds: list[tuple[int, int]]
    episode_rewards: list[float] = field(default_factory=list)
    episode_esas: list[float] = field(default_factory=list)
    scaled_rewards: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.rewards)


class EnvRoller:
    """An environment plus the bookkeeping to run it across rollouts."""

    def __init__(self, config: NetworkConfig, first_episode_seed: int = 0):
        self.env = AoiEnv(config)
        self.config = config
        self._next_seed = first_episode_seed
        self._ep_reward = 0.0
        self._ep_aoi: list[np.ndarray] = []
        self.env.reset(self._advance_seed())

    def _advance_seed(self) -> int:
        s = self._next_seed
        self._next_seed += 1
        return s

    def observation(self) -> np.ndarray:
        return observe(self.env.state, self.config)

    def step(self, action: Action):
        """Step and auto-reset at horizon; returns (outcome, finished_episode)."""
        outcome = self.env.step(action)
        self._ep_reward += outcome.reward
        self._ep_aoi.append(outcome.next_state.aoi.copy())
        finished = None
        if outcome.done:
            finished = (self._ep_reward, float(np.mean(np.stack(self._ep_aoi))))
            self._ep_reward = 0.0
            self._ep_aoi = []
            self.env.reset(self._advance_seed())
        return outcome, finished


def collect_rollout(
    rollers: Sequence[EnvRoller],
    params: nn.PolicyParams,
    length: int,
    rng: np.random.Generator,
    normalizer: Optional[RewardNormalizer] = None,
) -> Trajectory:
    """Run the snapshot policy for `length` transitions split over the rollers.

    Segments are concatenated in roller order; each segment carries its own
    bootstrap value so GAE never leaks across segments.
    """
    per = length // len(rollers)
    if per < 1:
        raise ValueError("rollout length shorter than the number of environments")
    feats, scheds, alts, lps, rews, srews, vals, dones = [], [], [], [], [], [], [], []
    bootstraps, bounds = [], []
    ep_rewards, ep_esas = [], []
    pos = 0
    for w, roller in enumerate(rollers):
        for _ in range(per):
            obs = roller.observation()
            action, lp, value = sample_action(params, obs, rng)
            outcome, finished = roller.step(action)
            feats.append(obs)
            scheds.append(action.schedule)
            alts.append(action.altitude_move)
            lps.append(lp)
            rews.append(outcome.reward)
            if normalizer is not None:
                srews.append(normalizer.scale(w, outcome.reward, outcome.done))
            vals.append(value)
            dones.append(outcome.done)
            if finished is not None:
                ep_rewards.append(finished[0])
                ep_esas.append(finished[1])
        bootstraps.append(float(nn.forward(params, roller.observation())["value"]))
        bounds.append((pos, pos + per))
        pos += per
    return Trajectory(
        features=np.asarray(feats),
        schedules=np.asarray(scheds, dtype=np.int64),
        altitudes=np.asarray(alts, dtype=np.int64),
        log_probs=np.asarray(lps),
        rewards=np.asarray(rews),
        values=np.asarray(vals),
        dones=np.asarray(dones, dtype=bool),
        bootstrap_values=np.asarray(bootstraps),
        segment_bounds=bounds,
        episode_rewards=ep_rewards,
        episode_esas=ep_esas,
        scaled_rewards=np.asarray(srews) if normalizer is not None else None,
    )


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: float,
    discount: float,
    gae_lambda: float,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and value targets for one contiguous segment."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if not (len(values) == len(dones) == n):
        raise ValueError("rewards, values, dones must have equal length")
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        mask = 0.0 if dones[t] else 1.0
        delta = rewards[t] + discount * next_value * mask - values[t]
        gae = delta + discount * gae_lambda * mask * gae
        adv[t] = gae
    return adv, adv + values


def add_advantages(traj: Trajectory, cfg: PpoConfig) -> Trajectory:
    rewards = traj.rewards if traj.scaled_rewards is None else traj.scaled_rewards
    adv = np.empty(len(traj))
    ret = np.empty(len(traj))
    for (lo, hi), boot in zip(traj.segment_bounds, traj.bootstrap_values):
        a, r = compute_gae(
            rewards[lo:hi], traj.values[lo:hi], traj.dones[lo:hi],
            boot, cfg.discount, cfg.gae_lambda,
        )
        adv[lo:hi] = a
        ret[lo:hi] = r
    traj.advantages = adv
    traj.returns = ret
    return traj


def clip_objective(
    new_log_prob: np.ndarray, old_log_prob: np.ndarray, advantage: np.ndarray, epsilon: float
) -> np.ndarray:
    """Per-sample clipped surrogate min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.exp(np.asarray(new_log_prob) - np.asarray(old_log_prob))
    advantage = np.asarray(advantage)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def composite_loss(
    params: nn.PolicyParams,
    features: np.ndarray,
    schedules: np.ndarray,
    altitude_moves: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
    with_grads: bool = True,
):
    """Composite PPO loss (to minimize) and its gradients w.r.t. head outputs.

    loss = -mean(clip objective) + value_coef * mse(value, returns)
           - entropy_coef * mean(schedule entropy + altitude entropy)
    Returns (loss, metrics dict, head_grads or None).
    """
    b = len(schedules)
    idx = np.arange(b)
    out = nn.forward(params, features)
    logits_s, logits_a, values = out["schedule"], np.atleast_2d(out["altitude"]), out["value"]
    logits_s = np.atleast_2d(logits_s)
    values = np.atleast_1d(values)
    logp_s = nn.log_softmax(logits_s, axis=1)
    logp_a = nn.log_softmax(logits_a, axis=1)
    new_lp = logp_s[idx, schedules] + logp_a[idx, altitude_moves]

    ratio = np.exp(new_lp - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * advantages
    surrogate = np.minimum(unclipped, clipped)

    p_s, p_a = np.exp(logp_s), np.exp(logp_a)
    ent_s = -(p_s * logp_s).sum(axis=1)
    ent_a = -(p_a * logp_a).sum(axis=1)
    entropy = ent_s + ent_a

    v_err = values - returns
    value_loss = float(np.mean(v_err**2))
    policy_loss = float(-np.mean(surrogate))
    mean_entropy = float(np.mean(entropy))
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * mean_entropy

    in_bounds = np.abs(ratio - 1.0) <= cfg.clip_epsilon
    metrics = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": mean_entropy,
        "clip_fraction": float(np.mean(~in_bounds)),
        "approx_kl": float(np.mean(old_log_probs - new_lp)),
    }
    if not with_grads:
        return loss, metrics, None

    # d loss / d joint log-prob: the surrogate gradient flows only where the
    # min() selects the unclipped branch (or the clip is inactive).
    active = (unclipped <= clipped) | in_bounds
    dlp = -(active * ratio * advantages) / b

    onehot_s = np.zeros_like(logits_s)
    onehot_s[idx, schedules] = 1.0
    onehot_a = np.zeros_like(logits_a)
    onehot_a[idx, altitude_moves] = 1.0
    g_logits_s = dlp[:, None] * (onehot_s - p_s)
    g_logits_a = dlp[:, None] * (onehot_a - p_a)
    # entropy term: d(-c_e * H)/d logits = c_e * p * (log p + H)
    g_logits_s += (cfg.entropy_coef / b) * p_s * (logp_s + ent_s[:, None])
    g_logits_a += (cfg.entropy_coef / b) * p_a * (logp_a + ent_a[:, None])
    g_value = cfg.value_coef * 2.0 * v_err / b
    head_grads = {"schedule": g_logits_s, "altitude": g_logits_a, "value": g_value}
    return loss, metrics, head_grads


def update(
    params: nn.PolicyParams,
    adam: nn.AdamState,
    traj: Trajectory,
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> tuple[nn.PolicyParams, dict]:
    """Epoch-wise minibatch ascent of the composite objective; returns
    (updated params, metrics averaged over the final epoch)."""
    if traj.advantages is None:
        raise ValueError("trajectory lacks advantages; call add_advantages first")
    adv = traj.advantages
    if cfg.advantage_normalization:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(traj)
    mb = min(cfg.minibatch_size, n)
    last_epoch_metrics: list[dict] = []
    for epoch in range(cfg.epochs_per_iter):
        perm = rng.permutation(n)
        epoch_metrics = []
        for lo in range(0, n, mb):
            sel = perm[lo : lo + mb]
            loss, metrics, head_grads = composite_loss(
                params,
                traj.features[sel],
                traj.schedules[sel],
                traj.altitudes[sel],
                traj.log_probs[sel],
                adv[sel],
                traj.returns[sel],
                cfg,
            )
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite PPO loss {loss}")
            grads = nn.backward(params, traj.features[sel], head_grads)
            new_flat = nn.adam_step(adam, params.to_flat(), grads.to_flat())
            params = params.from_flat(new_flat)
            epoch_metrics.append(metrics)
        last_epoch_metrics = epoch_metrics
    agg = {
        k: float(np.mean([m[k] for m in last_epoch_metrics]))
        for k in last_epoch_metrics[0]
    }
    return params, agg


METRICS_COLUMNS = [
    "iteration", "samples", "mean_reward", "esa", "clip_fraction",
    "approx_kl", "policy_loss", "value_loss", "entropy",
]


@dataclass
class TrainResult:
    params: nn.PolicyParams
    spec: nn.MlpSpec
    metrics: list[dict]


def train(
    network_config: NetworkConfig,
    cfg: PpoConfig,
    seed: int = 0,
    num_envs: int = 1,
    metrics_path=None,
    stop_when=None,
) -> TrainResult:
    """Alternate rollout collection and updates until total_samples consumed.

    `stop_when(iteration_metrics) -> bool` allows early termination (used by
    small-instance studies); metrics rows are still emitted for every
    completed iteration.
    """
    spec = build_policy_spec(
        observation_dim(network_config), network_config.num_devices, cfg.hidden
    )
    params = nn.init_params(spec, seed)
    adam = nn.AdamState.fresh(params.num_params, learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([seed, 0x99D0])
    rollers = [
        EnvRoller(network_config, first_episode_seed=w * 1_000_000)
        for w in range(num_envs)
    ]
    normalizer = RewardNormalizer(cfg.discount, num_envs) if cfg.reward_scaling else None

    iterations = max(1, cfg.total_samples // cfg.rollout_length)
    rows: list[dict] = []
    writer = fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
    try:
        last_mean_reward = float("nan")
        last_esa = float("nan")
        for it in range(iterations):
            if cfg.lr_decay:
                adam.learning_rate = cfg.learning_rate * (1.0 - it / iterations)
            snapshot = params  # pi_theta_old for this iteration
            traj = collect_rollout(rollers, snapshot, cfg.rollout_length, rng, normalizer)
            add_advantages(traj, cfg)
            params, metrics = update(params, adam, traj, cfg, rng)
            if traj.episode_rewards:
                last_mean_reward = float(np.mean(traj.episode_rewards))
                last_esa = float(np.mean(traj.episode_esas))
            row = {
                "iteration": it,
                "samples": (it + 1) * cfg.rollout_length,
                "mean_reward": last_mean_reward,
                "esa": last_esa,
                **{k: metrics[k] for k in METRICS_COLUMNS[4:]},
            }
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
                fh.flush()
            if stop_when is not None and stop_when(row):
                break
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(params=params, spec=spec, metrics=rows)
