from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from apq.model import Exponential, Instance, Uniform

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

INSTANCES = Path(__file__).resolve().parent.parent / "instances"


@pytest.fixture
def instance_dir():
    return INSTANCES


def load(name: str) -> Instance:
    return Instance.load(INSTANCES / f"{name}.json")


def random_instance(rng, m=None, N=None, distribution=None, high=50.0) -> Instance:
    """Parameters drawn as in the campaigns: every rate and cost ~ U(0, high]."""
    lam, mu, ts, tq, cs, cq, ch = high * (1.0 - rng.random(7))
    m = int(rng.integers(1, 5)) if m is None else m
    N = int(rng.integers(m + 1, m + 12)) if N is None else N
    if distribution is None:
        distribution = Uniform(20.0, 50.0) if rng.random() < 0.7 else Exponential(35.0)
    return Instance(
        max_rate=lam, mu=mu, m=m, N=N, theta_s=ts, theta_q=tq, c_h=ch, c_s=cs, c_q=cq,
        distribution=distribution,
    )


pos = st.floats(min_value=0.05, max_value=50.0, allow_nan=False)


@st.composite
def instances(draw, max_N=10, max_m=3, distributions=None):
    m = draw(st.integers(1, max_m))
    N = draw(st.integers(m, max(m, max_N)))
    if distributions is None:
        dist = draw(
            st.one_of(
                st.just(Uniform(20.0, 50.0)),
                st.builds(lambda a, w: Uniform(a, a + w), st.floats(0, 30), st.floats(1, 40)),
                st.builds(Exponential, st.floats(1, 60)),
            )
        )
    else:
        dist = draw(st.sampled_from(distributions))
    return Instance(
        max_rate=draw(pos), mu=draw(pos), m=m, N=N, theta_s=draw(pos), theta_q=draw(pos),
        c_h=draw(pos), c_s=draw(pos), c_q=draw(pos), distribution=dist,
    )


def policies(inst: Instance):
    """Random feasible policies for ``inst`` (last rate pinned at zero)."""
    return st.lists(
        st.floats(0.0, inst.max_rate, allow_nan=False), min_size=inst.N, max_size=inst.N
    ).map(lambda r: np.array(r + [0.0]))


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
