import math

import pytest

import ermakov as ek


@pytest.fixture(scope="session")
def winternitz_params():
    return ek.WinternitzParams(mu0=1.0, g1=1.0, g2=0.5, g3=1.0)


@pytest.fixture(scope="session")
def winternitz_spec(winternitz_params):
    return ek.winternitz_system(winternitz_params)


@pytest.fixture(scope="session")
def winternitz_state():
    return ek.PolarState(r=1.0, theta=math.pi / 2, rdot=0.0, thetadot=2.0, t=0.0)


@pytest.fixture(scope="session")
def winternitz_trajectory(winternitz_spec, winternitz_state):
    cfg = ek.IntegratorConfig(t_span=(0.0, 10.0))
    return ek.integrate_polar(winternitz_spec, winternitz_state, cfg)
