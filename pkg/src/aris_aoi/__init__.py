"""Aerial-RIS relaying simulator with AoI-minimizing PPO agent and baselines."""

from .channel import ChannelParams, PhaseProfile, Position3
from .env import Action, ActivationSpec, AoiEnv, EnvState, NetworkConfig, StepOutcome
from .ppo import PpoConfig, Trajectory

__all__ = [
    "Action",
    "ActivationSpec",
    "AoiEnv",
    "ChannelParams",
    "EnvState",
    "NetworkConfig",
    "PhaseProfile",
    "Position3",
    "PpoConfig",
    "StepOutcome",
    "Trajectory",
]

__version__ = "0.1.0"
