"""Reference policies and an exact small-instance oracle.

The DP oracle requires a fixed activation trace; with the LoS-only channel
the aligned SNR is deterministic given geometry, so backward induction over
(slot, altitude, capped AoI vector) is exact whenever the cap never binds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import aligned_snr, distance_device_to_uav, distance_uav_to_bs
from .env import UP, DOWN, HOVER, Action, EnvState, NetworkConfig

POLICY_KINDS = ("random_walk", "hovering_greedy", "dp_oracle", "trained_ppo")


def random_walk_policy(state: EnvState, rng: np.random.Generator) -> Action:
    """Uniformly random device and altitude move."""
    return Action(
        schedule=int(rng.integers(len(state.aoi))),
        altitude_move=int(rng.integers(3)),
    )


def altitude_grid(config: NetworkConfig) -> np.ndarray:
    """Heights {h_min, h_min+d_max, ..., <= h_max} scanned by the greedy search."""
    return np.arange(config.h_min, config.h_max + 1e-9, config.d_max)


def reachable_altitudes(config: NetworkConfig) -> np.ndarray:
    """Heights actually reachable from h_start under +-d_max moves with
    out-of-range moves cancelled (a lattice anchored at h_start)."""
    k_lo = int(np.ceil((config.h_min - config.h_start) / config.d_max - 1e-9))
    k_hi = int(np.floor((config.h_max - config.h_start) / config.d_max + 1e-9))
    return config.h_start + config.d_max * np.arange(k_lo, k_hi + 1)


def feasible_count(config: NetworkConfig, altitude: float) -> int:
    """Number of devices whose aligned SNR clears the threshold at `altitude`."""
    ch = config.channel
    d_bs = distance_uav_to_bs(config.bs, config.uav_xy, altitude)
    n = 0
    for dev in config.devices:
        d_dev = distance_device_to_uav(dev, config.uav_xy, altitude)
        if aligned_snr(d_dev, d_bs, ch) >= ch.snr_threshold:
            n += 1
    return n


class HoveringGreedyPolicy:
    """Hover at the height serving the most devices; schedule max-AoI device.

    The height search runs once per episode over the d_max-spaced grid;
    ties go to the lowest height. Scheduling ties go to the lowest index.
    """

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.target: float | None = None

    def start_episode(self) -> None:
        grid = altitude_grid(self.config)
        counts = [feasible_count(self.config, h) for h in grid]
        self.target = float(grid[int(np.argmax(counts))])

    def act(self, state: EnvState) -> Action:
        if self.target is None:
            self.start_episode()
        diff = self.target - state.altitude
        if diff >= self.config.d_max - 1e-9:
            move = UP
        elif diff <= -self.config.d_max + 1e-9:
            move = DOWN
        else:
            move = HOVER
        return Action(schedule=int(np.argmax(state.aoi)), altitude_move=move)


@dataclass
class DpResult:
    optimal_esa: float
    actions: list[Action]
    runtime_ms: float
    states_expanded: int


def dp_oracle(
    config: NetworkConfig,
    aoi_cap: int | None = None,
    state_budget: int = 5_000_000,
) -> DpResult:
    """Exact minimum-ESA policy on a fixed-trace instance by backward induction.

    The DP state is (slot, altitude index, AoI vector capped at aoi_cap);
    with aoi_cap >= horizon the cap never binds and the result is exact.
    """
    if config.activation.kind != "fixed_trace":
        raise ValueError("dp_oracle requires a fixed activation trace")
    m, n_slots = config.num_devices, config.horizon
    if m > 3 or n_slots > 20:
        raise ValueError(f"instance too large for the oracle: M={m}, N={n_slots}")
    cap = min(n_slots, aoi_cap if aoi_cap is not None else n_slots)

    t0 = time.perf_counter()
    grid = reachable_altitudes(config)
    start_idx = int(np.argmin(np.abs(grid - config.h_start)))
    n_alts = len(grid)
    feasible = np.zeros((m, n_alts), dtype=bool)
    ch = config.channel
    for a, h in enumerate(grid):
        d_bs = distance_uav_to_bs(config.bs, config.uav_xy, h)
        for i, dev in enumerate(config.devices):
            d_dev = distance_device_to_uav(dev, config.uav_xy, h)
            feasible[i, a] = aligned_snr(d_dev, d_bs, ch) >= ch.snr_threshold
    trace = config.activation.trace

    def move_to(alt_idx: int, move: int) -> int:
        if move == UP:
            return alt_idx + 1 if alt_idx + 1 < n_alts else alt_idx
        if move == DOWN:
            return alt_idx - 1 if alt_idx > 0 else alt_idx
        return alt_idx

    @lru_cache(maxsize=None)
    def value(slot: int, alt_idx: int, aoi: tuple[int, ...]) -> tuple[float, tuple[int, int]]:
        """(min total AoI cost from here to the horizon, best (schedule, move))."""
        if slot == n_slots:
            return 0.0, (-1, -1)
        if value.cache_info().currsize > state_budget:
            raise RuntimeError("dp_oracle state budget exceeded")
        best = (np.inf, (-1, -1))
        for sched in range(m):
            for move in (UP, DOWN, HOVER):
                nxt_alt = move_to(alt_idx, move)
                delivered = trace[sched, slot] == 1 and feasible[sched, nxt_alt]
                new_aoi = tuple(
                    1 if (i == sched and delivered) else min(a + 1, cap)
                    for i, a in enumerate(aoi)
                )
                tail, _ = value(slot + 1, nxt_alt, new_aoi)
                cost = sum(new_aoi) + tail
                if cost < best[0]:
                    best = (cost, (sched, move))
        return best

    # Replay the greedy-over-values policy to recover one optimal sequence,
    # accumulating the exact (uncapped) AoI cost.
    actions: list[Action] = []
    alt_idx = start_idx
    aoi_capped = tuple([0] * m)
    aoi_exact = np.zeros(m, dtype=np.int64)
    total = 0
    for slot in range(n_slots):
        _, (sched, move) = value(slot, alt_idx, aoi_capped)
        actions.append(Action(schedule=sched, altitude_move=move))
        alt_idx = move_to(alt_idx, move)
        delivered = trace[sched, slot] == 1 and feasible[sched, alt_idx]
        aoi_exact += 1
        if delivered:
            aoi_exact[sched] = 1
        total += int(aoi_exact.sum())
        aoi_capped = tuple(
            1 if (i == sched and delivered) else min(a + 1, cap)
            for i, a in enumerate(aoi_capped)
        )
    expanded = value.cache_info().currsize
    value.cache_clear()
    return DpResult(
        optimal_esa=total / (n_slots * m),
        actions=actions,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
        states_expanded=expanded,
    )
