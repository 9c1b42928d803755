import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fairrl import datagen
from fairrl.mdp import GroupSpec, ProblemSpec, RewardModel, StateSpace, TransitionKernel

settings.register_profile(
    "repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def make_spec(P, init, reward, proportions=None, horizon=2, family="deterministic") -> ProblemSpec:
    """Spec from raw arrays; single-group arrays are promoted to one group."""
    P = np.asarray(P, dtype=float)
    init = np.asarray(init, dtype=float)
    reward = np.asarray(reward, dtype=float)
    if P.ndim == 3:
        P, init, reward = P[None], init[None], reward[None]
    q, S = P.shape[:2]
    props = np.full(q, 1.0 / q) if proportions is None else proportions
    return ProblemSpec(
        StateSpace(S // 2, horizon),
        GroupSpec(tuple(f"g{i}" for i in range(q)), props),
        TransitionKernel(P, init),
        RewardModel(reward, family=family),
    )


@pytest.fixture(scope="session")
def synthetic():
    return datagen.build_synthetic()


@pytest.fixture(scope="session")
def fico():
    return datagen.build_fico()
