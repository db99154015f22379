import numpy as np
import pytest

from aris_aoi.channel import ChannelParams, Position3
from aris_aoi.env import ActivationSpec, NetworkConfig


def make_channel(**kw) -> ChannelParams:
    defaults = dict(
        gamma0=0.01,
        eta=2.3,
        k1=10 ** 0.8,
        k2=10 ** 0.8,
        tx_power=0.1,
        noise_power=1e-14,
        num_elements=16,
        snr_threshold=1.0,
    )
    defaults.update(kw)
    return ChannelParams(**defaults)


def make_config(
    devices=((250.0, 250.0),),
    horizon=10,
    activation=None,
    channel=None,
    seed=0,
    h_min=10.0,
    h_max=1000.0,
    h_start=100.0,
    d_max=10.0,
    bs=(2000.0, 500.0, 25.0),
    uav_xy=(250.0, 250.0),
    **kw,
) -> NetworkConfig:
    if activation is None:
        activation = ActivationSpec(
            kind="fixed_trace",
            trace=np.ones((len(devices), horizon), dtype=np.int8),
        )
    return NetworkConfig(
        devices=tuple(Position3(x, y, 0.0) for x, y in devices),
        bs=Position3(*bs),
        uav_xy=uav_xy,
        channel=channel or make_channel(),
        h_min=h_min,
        h_max=h_max,
        h_start=h_start,
        d_max=d_max,
        horizon=horizon,
        activation=activation,
        seed=seed,
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance-criterion verdicts, one line each, echoed after the run so they
# survive pytest's output capture even for passing tests.
CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(CRITERION_LINES)):
            terminalreporter.write_line(line)
