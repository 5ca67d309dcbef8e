import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vesmc.gmm import GmmPrior
from vesmc.schedule import build_geometric_schedule

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a one-line acceptance verdict; all lines are repeated in the terminal summary."""
    def _report(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def small_schedule():
    return build_geometric_schedule(12, 1e-2, 10.0)


@pytest.fixture
def two_component_prior():
    t = np.linspace(0, 1, 4)
    base = np.stack([np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)])
    return GmmPrior([0.4, 0.6], [0.5 * base, -0.5 * base + 0.2], [0.3**2, 0.2**2])


def random_schedule(rng: np.random.Generator, K_max: int = 64):
    """Random increasing grid with a random admissible eta (not the matching rule)."""
    from vesmc.schedule import NoiseSchedule

    K = int(rng.integers(2, K_max + 1))
    ups = np.concatenate([[0.0], np.sort(np.exp(rng.uniform(np.log(1e-3), np.log(80.0), K)))])
    while np.any(np.diff(ups) <= 0):
        ups = np.concatenate([[0.0], np.sort(np.exp(rng.uniform(np.log(1e-3), np.log(80.0), K)))])
    frac = rng.uniform(0.05, 1.0, K)
    eta = np.sqrt(frac) * ups[:K]
    eta[0] = rng.uniform(1e-4, 1e-2)
    return NoiseSchedule.from_upsilon(ups, eta=eta)
