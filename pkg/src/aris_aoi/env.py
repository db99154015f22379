"""Discrete-time MDP: altitude dynamics, scheduling, activations and AoI.

One `AoiEnv` instance owns its RNG and episode data (LoS angles, activation
trace); instances with distinct seeds can run in parallel with no shared
state. All per-slot randomness is drawn at `reset`, so `step` is
deterministic given the current state and action.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .channel import (
    ChannelParams,
    PhaseProfile,
    Position3,
    TWO_PI,
    cascaded_gain,
    distance_device_to_uav,
    distance_uav_to_bs,
    optimal_phases,
    snr,
)

# Altitude-move actions, in the order exposed to the policy head.
UP, DOWN, HOVER = 0, 1, 2
MOVE_NAMES = ("up", "down", "hover")


@dataclass(frozen=True)
class ActivationSpec:
    """How device activations G_i[n] are generated.

    kind 'iid_bernoulli': per-device probability p_i, Bernoulli per slot.
    If `probs` is None, each p_i is drawn once per environment instance
    from Uniform(0,1) with the experiment seed.
    kind 'fixed_trace': a given M x N binary matrix (used by the DP oracle
    and regression tests).
    """

    kind: str
    probs: Optional[np.ndarray] = None
    trace: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "iid_bernoulli":
            if self.trace is not None:
                raise ValueError("iid_bernoulli takes no trace")
            if self.probs is not None:
                p = np.asarray(self.probs, dtype=float)
                if np.any(p < 0) or np.any(p > 1):
                    raise ValueError("activation probabilities must lie in [0, 1]")
                object.__setattr__(self, "probs", p)
        elif self.kind == "fixed_trace":
            if self.trace is None:
                raise ValueError("fixed_trace requires a trace")
            if self.probs is not None:
                raise ValueError("fixed_trace takes no probs")
            t = np.asarray(self.trace)
            if t.ndim != 2 or not np.isin(t, (0, 1)).all():
                raise ValueError("trace must be a binary M x N matrix")
            object.__setattr__(self, "trace", t.astype(np.int8))
        else:
            raise ValueError(f"unknown activation kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkConfig:
    """Full description of one network instance."""

    devices: tuple[Position3, ...]
    bs: Position3
    uav_xy: tuple[float, float]
    channel: ChannelParams
    h_min: float
    h_max: float
    h_start: float
    d_max: float
    horizon: int
    activation: ActivationSpec
    seed: int
    altitude_penalty: float = 1.0
    obs_clip_cap: float = 10.0
    redraw_angles_per_slot: bool = False

    def __post_init__(self):
        if not self.h_min < self.h_start <= self.h_max:
            raise ValueError(
                f"need h_min < h_start <= h_max, got {self.h_min}, {self.h_start}, {self.h_max}"
            )
        if self.d_max <= 0:
            raise ValueError(f"d_max must be > 0, got {self.d_max}")
        if len(self.devices) < 1:
            raise ValueError("need at least one device")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.activation.kind == "fixed_trace":
            m, n = self.activation.trace.shape
            if m != len(self.devices) or n != self.horizon:
                raise ValueError(
                    f"trace shape {m}x{n} does not match M={len(self.devices)}, N={self.horizon}"
                )
        if self.activation.probs is not None and len(self.activation.probs) != len(self.devices):
            raise ValueError("activation probs length must equal number of devices")

    @property
    def num_devices(self) -> int:
        return len(self.devices)


@dataclass(frozen=True)
class EnvState:
    """MDP observation: AoI vector, aligned-SNR vector, UAV altitude, slot."""

    aoi: np.ndarray
    aligned_snr: np.ndarray
    altitude: float
    slot: int


@dataclass(frozen=True)
class Action:
    schedule: int
    altitude_move: int  # UP, DOWN or HOVER

    def __post_init__(self):
        if self.altitude_move not in (UP, DOWN, HOVER):
            raise ValueError(f"bad altitude_move {self.altitude_move}")


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    delivered: bool
    altitude_violation: bool
    done: bool


def aoi_update(
    aoi: np.ndarray, active: np.ndarray, schedule: int, snr_ok: np.ndarray
) -> np.ndarray:
    """One AoI transition: 1 + A - A*G*alpha with the SNR condition folded in.

    The scheduled device resets to 1 when it is active and its aligned SNR
    clears the threshold; every other entry (and any failed attempt) ages
    by one.
    """
    alpha = np.zeros_like(aoi)
    alpha[schedule] = 1
    g = np.asarray(active).astype(aoi.dtype)
    ok = np.asarray(snr_ok).astype(aoi.dtype)
    return 1 + aoi - aoi * g * alpha * ok


def esa(aoi_history: Sequence[np.ndarray]) -> float:
    """Mean AoI over devices and slots for one episode."""
    if len(aoi_history) == 0:
        raise ValueError("empty AoI trajectory")
    return float(np.mean(np.stack(aoi_history)))


def observe(state: EnvState, config: NetworkConfig) -> np.ndarray:
    """Normalized feature vector of length 2M+1, all entries in [0, 1]."""
    cap = config.obs_clip_cap
    aoi_f = state.aoi / config.horizon
    snr_f = np.minimum(state.aligned_snr / config.channel.snr_threshold, cap) / cap
    alt_f = (state.altitude - config.h_min) / (config.h_max - config.h_min)
    return np.concatenate([aoi_f, snr_f, [alt_f]]).astype(np.float64)


def observation_dim(config: NetworkConfig) -> int:
    return 2 * config.num_devices + 1


@dataclass
class TraceRow:
    slot: int
    altitude: float
    scheduled: int
    active: int
    snr_db: float
    delivered: bool
    aoi: np.ndarray
    reward: float


def write_trace_csv(rows: Iterable[TraceRow], path, num_devices: int) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["slot", "altitude", "scheduled", "active", "snr_db", "delivered"]
            + [f"aoi_{i}" for i in range(num_devices)]
            + ["reward"]
        )
        for r in rows:
            writer.writerow(
                [r.slot, r.altitude, r.scheduled, r.active, f"{r.snr_db:.6f}", int(r.delivered)]
                + list(r.aoi)
                + [f"{r.reward:.9f}"]
            )


class AoiEnv:
    """Episodic environment; call `reset(episode_seed)` then `step(action)`."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.m = config.num_devices
        # Experiment-level draw: activation probabilities, held fixed across
        # episodes of this instance.
        exp_rng = np.random.default_rng([config.seed, 0xA071])
        if config.activation.kind == "iid_bernoulli":
            if config.activation.probs is not None:
                self._probs = np.asarray(config.activation.probs, dtype=float)
            else:
                self._probs = exp_rng.uniform(0.0, 1.0, size=self.m)
        else:
            self._probs = None
        self._state: Optional[EnvState] = None
        self._rng: Optional[np.random.Generator] = None
        self._psi = None
        self._omega = None
        self._trace = None

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise RuntimeError("call reset() first")
        return self._state

    @property
    def done(self) -> bool:
        return self.state.slot >= self.config.horizon

    def reset(self, episode_seed: int) -> EnvState:
        cfg = self.config
        # Independent substreams so the activation draw does not shift when
        # the number of RIS elements changes (keeps F sweeps slot-wise paired).
        self._rng = np.random.default_rng([cfg.seed, 0xE915, episode_seed, 1])
        trace_rng = np.random.default_rng([cfg.seed, 0xE915, episode_seed, 2])
        self._psi = self._rng.uniform(0.0, TWO_PI, size=(self.m, cfg.channel.num_elements))
        self._omega = self._rng.uniform(0.0, TWO_PI, size=(self.m, cfg.channel.num_elements))
        if cfg.activation.kind == "fixed_trace":
            self._trace = cfg.activation.trace.copy()
        else:
            self._trace = (
                trace_rng.random(size=(self.m, cfg.horizon)) < self._probs[:, None]
            ).astype(np.int8)
        self._state = EnvState(
            aoi=np.zeros(self.m, dtype=np.int64),
            aligned_snr=self.compute_aligned_snrs(cfg.h_start),
            altitude=cfg.h_start,
            slot=0,
        )
        return self._state

    def compute_aligned_snrs(self, altitude: float) -> np.ndarray:
        """Per-device SNR under optimal RIS phase alignment at this altitude."""
        cfg = self.config
        d_bs = distance_uav_to_bs(cfg.bs, cfg.uav_xy, altitude)
        out = np.empty(self.m)
        for i, dev in enumerate(cfg.devices):
            d_dev = distance_device_to_uav(dev, cfg.uav_xy, altitude)
            profile = PhaseProfile(
                phases=optimal_phases(self._psi[i], self._omega[i]),
                los_angles_device=self._psi[i],
                los_angles_bs=self._omega[i],
            )
            out[i] = snr(cascaded_gain(profile, d_dev, d_bs, cfg.channel), cfg.channel)
        return out

    def step(self, action: Action) -> StepOutcome:
        cfg = self.config
        state = self.state
        if state.slot >= cfg.horizon:
            raise RuntimeError("episode finished; call reset()")
        if not 0 <= action.schedule < self.m:
            raise ValueError(f"schedule {action.schedule} out of range for M={self.m}")

        delta = {UP: cfg.d_max, DOWN: -cfg.d_max, HOVER: 0.0}[action.altitude_move]
        tentative = state.altitude + delta
        violation = not (cfg.h_min <= tentative <= cfg.h_max)
        altitude = state.altitude if violation else tentative

        if cfg.redraw_angles_per_slot:
            self._psi = self._rng.uniform(0.0, TWO_PI, size=self._psi.shape)
            self._omega = self._rng.uniform(0.0, TWO_PI, size=self._omega.shape)

        # Transmission happens at the post-move altitude (the action sets the
        # altitude, then phases are configured and the packet is relayed).
        snrs = self.compute_aligned_snrs(altitude)
        active = self._trace[:, state.slot]
        snr_ok = snrs >= cfg.channel.snr_threshold
        delivered = bool(active[action.schedule] and snr_ok[action.schedule])

        new_aoi = aoi_update(state.aoi, active, action.schedule, snr_ok)
        reward = -float(new_aoi.mean())
        if violation:
            reward -= cfg.altitude_penalty

        slot = state.slot + 1
        next_state = EnvState(aoi=new_aoi, aligned_snr=snrs, altitude=altitude, slot=slot)
        self._state = next_state
        return StepOutcome(
            next_state=next_state,
            reward=reward,
            delivered=delivered,
            altitude_violation=violation,
            done=slot >= cfg.horizon,
        )

    def active_now(self) -> np.ndarray:
        """Activation vector of the current slot (for trace dumps)."""
        return self._trace[:, self.state.slot].copy()
