"""Geometry, path loss, Rician LoS fading and RIS phase alignment.

Everything here is a pure function of its arguments and operates in linear
units (watts, linear power ratios, meters). dB/dBm conversion happens once
at config-load time, see `aris_aoi.config`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Position3:
    """Cartesian position in meters, z >= 0."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError("position coordinates must be finite")
        if self.z < 0:
            raise ValueError(f"z must be >= 0, got {self.z}")


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants, all in linear units.

    gamma0: channel power gain at the 1 m reference distance (dimensionless)
    eta: path-loss exponent
    k1, k2: Rician factors for the device->UAV and UAV->BS hops
    tx_power, noise_power: watts
    num_elements: number of RIS reflecting elements F
    snr_threshold: minimum linear SNR for reliable decoding
    """

    gamma0: float
    eta: float
    k1: float
    k2: float
    tx_power: float
    noise_power: float
    num_elements: int
    snr_threshold: float

    def __post_init__(self):
        for name in ("gamma0", "eta", "k1", "k2", "tx_power", "noise_power", "snr_threshold"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be strictly positive and finite, got {v}")
        if self.num_elements < 1:
            raise ValueError(f"num_elements must be >= 1, got {self.num_elements}")

    @property
    def rician_amplitude(self) -> float:
        """sqrt(K1 K2 / ((K1+1)(K2+1))), the LoS amplitude scaling of both hops."""
        return math.sqrt(self.k1 * self.k2 / ((self.k1 + 1.0) * (self.k2 + 1.0)))


@dataclass(frozen=True)
class PhaseProfile:
    """Per-element RIS phases plus the LoS angles of the two hops.

    All three vectors have length F; angles are wrapped to [0, 2pi).
    """

    phases: np.ndarray
    los_angles_device: np.ndarray
    los_angles_bs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.phases, dtype=float)
        a = np.asarray(self.los_angles_device, dtype=float)
        b = np.asarray(self.los_angles_bs, dtype=float)
        if not (p.shape == a.shape == b.shape) or p.ndim != 1:
            raise ValueError("phases and LoS angle vectors must share one length F")
        for name, vec in (("phases", p), ("los_angles_device", a), ("los_angles_bs", b)):
            if np.any(vec < 0) or np.any(vec >= TWO_PI):
                raise ValueError(f"{name} must lie in [0, 2pi)")
        object.__setattr__(self, "phases", p)
        object.__setattr__(self, "los_angles_device", a)
        object.__setattr__(self, "los_angles_bs", b)

    @property
    def num_elements(self) -> int:
        return self.phases.shape[0]


def distance_device_to_uav(device: Position3, uav_xy: tuple[float, float], altitude: float) -> float:
    """Slant range from a ground device to the UAV at the given altitude."""
    dx = device.x - uav_xy[0]
    dy = device.y - uav_xy[1]
    return math.sqrt(dx * dx + dy * dy + altitude * altitude)


def distance_uav_to_bs(bs: Position3, uav_xy: tuple[float, float], altitude: float) -> float:
    """Slant range from the UAV at the given altitude to the BS antenna."""
    dx = bs.x - uav_xy[0]
    dy = bs.y - uav_xy[1]
    dz = bs.z - altitude
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def path_loss_amplitude(distance: float, params: ChannelParams) -> float:
    """Amplitude coefficient sqrt(gamma0 * d^-eta) of one hop."""
    if distance <= 0:
        raise ValueError(f"distance must be > 0, got {distance}")
    return math.sqrt(params.gamma0 * distance ** (-params.eta))


def optimal_phases(los_angles_device: np.ndarray, los_angles_bs: np.ndarray) -> np.ndarray:
    """Element phases that align all F reflected paths: phi_f = psi_f + omega_f (mod 2pi)."""
    a = np.asarray(los_angles_device, dtype=float)
    b = np.asarray(los_angles_bs, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"angle vectors differ in length: {a.shape} vs {b.shape}")
    return np.mod(a + b, TWO_PI)


def cascaded_gain(
    profile: PhaseProfile, d_device: float, d_bs: float, params: ChannelParams
) -> complex:
    """Complex end-to-end amplitude of the device -> RIS -> BS cascade.

    Product of the two per-hop LoS channels reflected through the phase
    profile: amplitude gamma0 * (d_device*d_bs)^(-eta/2) times the Rician
    LoS scaling of both hops, times the phasor sum over elements.
    """
    amp = (
        params.rician_amplitude
        * path_loss_amplitude(d_device, params)
        * path_loss_amplitude(d_bs, params)
    )
    residual = profile.phases - profile.los_angles_device - profile.los_angles_bs
    phasor_sum = np.exp(1j * residual).sum()
    return amp * phasor_sum


def snr(gain: complex, params: ChannelParams) -> float:
    """Received SNR P*|gain|^2/sigma^2 (linear)."""
    return params.tx_power * abs(gain) ** 2 / params.noise_power


def aligned_snr(d_device: float, d_bs: float, params: ChannelParams) -> float:
    """SNR under optimally aligned phases; closed form, no phasor loop.

    With phi_f = psi_f + omega_f all F paths combine coherently, so
    |gain| = F * rician_amplitude * gamma0 * (d_device*d_bs)^(-eta/2) and
    the SNR scales with F^2. Independent of the LoS angle realization.
    """
    if d_device <= 0 or d_bs <= 0:
        raise ValueError("distances must be > 0")
    amp = (
        params.num_elements
        * params.rician_amplitude
        * params.gamma0
        * (d_device * d_bs) ** (-params.eta / 2.0)
    )
    return params.tx_power * amp * amp / params.noise_power
