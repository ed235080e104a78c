import math

import numpy as np
import pytest

from recoat.scene import FUTURE_STEPS, HISTORY_STEPS, AgentTrack, AgentType, MapContext, Scene


def const_velocity_track(x0=0.0, y0=0.0, vx=0.0, vy=0.0, agent_type=AgentType.VEHICLE, dt=0.1):
    """Track whose last state is at (x0, y0), moving with constant velocity."""
    t = (np.arange(HISTORY_STEPS) - (HISTORY_STEPS - 1)) * dt
    st = np.zeros((HISTORY_STEPS, 6))
    st[:, 0] = x0 + vx * t
    st[:, 1] = y0 + vy * t
    st[:, 2], st[:, 3] = vx, vy
    st[:, 4] = math.atan2(vy, vx) if (vx or vy) else 0.0
    st[:, 5] = 1.0
    return AgentTrack(agent_type, st)


def make_scene(neighbors=(), agent_type=AgentType.VEHICLE, future=None, sid="s0", target=None, **kw):
    target = target or const_velocity_track(agent_type=agent_type)
    fut = np.zeros((FUTURE_STEPS, 2)) if future is None else future
    return Scene(sid, target, fut, list(neighbors), kw.pop("map", MapContext()), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
