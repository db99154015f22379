"""Declarative configuration: TOML ingestion, defaults, units, dumping.

The file has [network], [ppo] and [experiment] sections. Power-like keys
carry their unit in the name (*_dbm, *_db); they are converted to linear
watts/ratios exactly once, when the dataclasses are built. Everything is
overridable via repeated ``section.key=value`` strings.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .channel import ChannelParams, Position3
from .env import ActivationSpec, NetworkConfig
from .ppo import PpoConfig


class ConfigError(ValueError):
    """Raised for parse failures and invariant violations, naming the key."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


NETWORK_DEFAULTS: dict[str, Any] = {
    "num_devices": 3,
    "area": [500.0, 500.0],
    "devices": [],  # explicit [x, y] pairs; empty -> random placement from seed
    "bs": [2000.0, 500.0, 25.0],
    "uav_xy": [250.0, 250.0],
    "tx_power_dbm": 20.0,
    "noise_dbm": -110.0,
    "gamma0_db": -20.0,
    "path_loss_exponent": 2.3,
    "rician_k1_db": 8.0,
    "rician_k2_db": 8.0,
    "num_elements": 16,
    "snr_threshold_db": 0.0,
    "h_min": 10.0,
    "h_max": 1000.0,
    "h_start": 100.0,
    "d_max": 10.0,
    "horizon": 120,
    "seed": 0,
    "activation_kind": "iid_bernoulli",
    "activation_probs": [],  # empty -> drawn from the experiment seed
    "altitude_penalty": 1.0,
    "obs_clip_cap": 10.0,
    "redraw_angles_per_slot": False,
}

PPO_DEFAULTS: dict[str, Any] = {
    "rollout_length": 240,
    "epochs_per_iter": 10,
    "minibatch_size": 60,
    "clip_epsilon": 0.2,
    "discount": 0.9,
    "gae_lambda": 0.95,
    "value_coef": 0.5,
    "entropy_coef": 0.01,
    "learning_rate": 0.001,
    "total_samples": 48_000,
    "advantage_normalization": True,
    "reward_scaling": True,
    "lr_decay": True,
    "hidden": [64, 64, 64],
}

EXPERIMENT_DEFAULTS: dict[str, Any] = {
    "name": "experiment",
    "sweep": "convergence",
    "sweep_values": [0],
    "episodes_per_point": 50,
    "seeds": [0],
    "policies": ["trained_ppo", "hovering_greedy", "random_walk"],
    "output_dir": "results",
    # joint F x power grid for the num_elements_and_power sweep
    "tx_power_dbm_values": [10.0, 20.0, 30.0],
}

_DEFAULTS = {
    "network": NETWORK_DEFAULTS,
    "ppo": PPO_DEFAULTS,
    "experiment": EXPERIMENT_DEFAULTS,
}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    sweep: str
    sweep_values: tuple
    episodes_per_point: int
    seeds: tuple[int, ...]
    policies: tuple[str, ...]
    output_dir: str
    tx_power_dbm_values: tuple[float, ...] = (10.0, 20.0, 30.0)

    def __post_init__(self):
        if self.sweep not in (
            "convergence", "num_devices", "per_device_age", "num_elements_and_power"
        ):
            raise ConfigError(f"experiment.sweep: unknown sweep {self.sweep!r}")
        if not self.sweep_values:
            raise ConfigError("experiment.sweep_values must be non-empty")
        if not self.seeds:
            raise ConfigError("experiment.seeds must be non-empty")


def _parse_override(text: str) -> tuple[str, str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {key!r} must be section.key")
    section, name = parts
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare strings allowed for convenience
    return section, name, value


def load_raw(path=None, overrides: list[str] = ()) -> dict[str, dict[str, Any]]:
    """Defaults, then the file, then overrides; returns the resolved tree."""
    data = copy.deepcopy(_DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                parsed = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section, values in parsed.items():
            if section not in data:
                raise ConfigError(f"unknown section [{section}]")
            for k, v in values.items():
                if k not in data[section]:
                    raise ConfigError(f"unknown key {section}.{k}")
                data[section][k] = v
    for text in overrides:
        section, name, value = _parse_override(text)
        if section not in data or name not in data[section]:
            raise ConfigError(f"unknown override target {section}.{name}")
        data[section][name] = value
    return data


def place_devices(raw_network: dict[str, Any]) -> tuple[Position3, ...]:
    explicit = raw_network["devices"]
    if explicit:
        return tuple(Position3(float(p[0]), float(p[1]), 0.0) for p in explicit)
    rng = np.random.default_rng([int(raw_network["seed"]), 0xD375])
    w, h = raw_network["area"]
    xy = rng.uniform([0.0, 0.0], [float(w), float(h)], size=(int(raw_network["num_devices"]), 2))
    return tuple(Position3(float(x), float(y), 0.0) for x, y in xy)


def build_network(raw: dict[str, dict[str, Any]]) -> NetworkConfig:
    net = raw["network"]
    try:
        channel = ChannelParams(
            gamma0=db_to_linear(float(net["gamma0_db"])),
            eta=float(net["path_loss_exponent"]),
            k1=db_to_linear(float(net["rician_k1_db"])),
            k2=db_to_linear(float(net["rician_k2_db"])),
            tx_power=dbm_to_watts(float(net["tx_power_dbm"])),
            noise_power=dbm_to_watts(float(net["noise_dbm"])),
            num_elements=int(net["num_elements"]),
            snr_threshold=db_to_linear(float(net["snr_threshold_db"])),
        )
    except ValueError as exc:
        raise ConfigError(f"network channel parameters: {exc}") from exc
    probs = net["activation_probs"] or None
    try:
        activation = ActivationSpec(
            kind=net["activation_kind"],
            probs=np.asarray(probs, dtype=float) if probs is not None else None,
        )
        return NetworkConfig(
            devices=place_devices(net),
            bs=Position3(*[float(v) for v in net["bs"]]),
            uav_xy=(float(net["uav_xy"][0]), float(net["uav_xy"][1])),
            channel=channel,
            h_min=float(net["h_min"]),
            h_max=float(net["h_max"]),
            h_start=float(net["h_start"]),
            d_max=float(net["d_max"]),
            horizon=int(net["horizon"]),
            activation=activation,
            seed=int(net["seed"]),
            altitude_penalty=float(net["altitude_penalty"]),
            obs_clip_cap=float(net["obs_clip_cap"]),
            redraw_angles_per_slot=bool(net["redraw_angles_per_slot"]),
        )
    except ValueError as exc:
        raise ConfigError(
            f"network: {exc} (check h_min/h_start/h_max altitude bounds and sizes)"
        ) from exc


def build_ppo(raw: dict[str, dict[str, Any]]) -> PpoConfig:
    p = raw["ppo"]
    try:
        return PpoConfig(
            rollout_length=int(p["rollout_length"]),
            epochs_per_iter=int(p["epochs_per_iter"]),
            minibatch_size=int(p["minibatch_size"]),
            clip_epsilon=float(p["clip_epsilon"]),
            discount=float(p["discount"]),
            gae_lambda=float(p["gae_lambda"]),
            value_coef=float(p["value_coef"]),
            entropy_coef=float(p["entropy_coef"]),
            learning_rate=float(p["learning_rate"]),
            total_samples=int(p["total_samples"]),
            advantage_normalization=bool(p["advantage_normalization"]),
            reward_scaling=bool(p["reward_scaling"]),
            lr_decay=bool(p["lr_decay"]),
            hidden=tuple(int(w) for w in p["hidden"]),
        )
    except ValueError as exc:
        raise ConfigError(f"ppo: {exc}") from exc


def build_experiment(raw: dict[str, dict[str, Any]]) -> ExperimentSpec:
    e = raw["experiment"]
    return ExperimentSpec(
        name=str(e["name"]),
        sweep=str(e["sweep"]),
        sweep_values=tuple(e["sweep_values"]),
        episodes_per_point=int(e["episodes_per_point"]),
        seeds=tuple(int(s) for s in e["seeds"]),
        policies=tuple(e["policies"]),
        output_dir=str(e["output_dir"]),
        tx_power_dbm_values=tuple(float(v) for v in e["tx_power_dbm_values"]),
    )


def load_config(path=None, overrides: list[str] = ()):
    """-> (raw tree, NetworkConfig, PpoConfig, ExperimentSpec)."""
    raw = load_raw(path, overrides)
    return raw, build_network(raw), build_ppo(raw), build_experiment(raw)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def dump_config(raw: dict[str, dict[str, Any]], path=None) -> str:
    """Serialize the resolved tree as TOML; loading it back is an identity."""
    lines = []
    for section, values in raw.items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    text = "\n".join(lines)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
