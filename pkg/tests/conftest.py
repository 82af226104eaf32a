"""Shared fixtures for fluidnet tests."""

import os

import pytest

from fluidnet.network import FluidNetwork
from fluidnet.ratefn import OverflowProblem

TANDEM_TOML = """\
# two nodes in series, both fed from outside
[network]
d = 2
alpha = 0.5
T = 1.0
Q = [[0.0, 1.0], [0.0, 0.0]]
r = [3.0, 3.0]
mu = [1.0, 1.0]
c = [0.2, 1.0]
exogenous = [1, 2]
"""


def pytest_collection_modifyitems(config, items):
    if os.environ.get("FLUIDNET_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set FLUIDNET_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def fluidnet_home(tmp_path, monkeypatch):
    """Keep runs.log and friends out of the real home directory."""
    home = tmp_path / "home"
    monkeypatch.setenv("FLUIDNET_HOME", str(home))
    monkeypatch.setenv("NO_COLOR", "1")
    monkeypatch.delenv("FLUIDNET_THREADS", raising=False)
    return home


@pytest.fixture
def tandem():
    return FluidNetwork.tandem(r=(3.0, 3.0), mu=(1.0, 1.0), c=(0.2, 1.0), alpha=0.5)


@pytest.fixture
def single():
    return FluidNetwork(d=1, Q=[[0.0]], r=[2.0], mu=[1.0], exogenous=[0], c=[1.0], alpha=0.5)


@pytest.fixture
def tandem_problem(tandem):
    return OverflowProblem(net=tandem, b=[0.0, 1.0], y=2.0, T=1.0)


@pytest.fixture
def tandem_toml(tmp_path):
    path = tmp_path / "tandem.toml"
    path.write_text(TANDEM_TOML, encoding="utf-8")
    return path
