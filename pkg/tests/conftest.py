import numpy as np
import pytest

from hmmlimits import deriv_engine as de
from hmmlimits import hmm_model as hm


@pytest.fixture(scope="session")
def flip():
    """The canonical model: symmetric flip chain at 0.3 seen through BSC(0.1)."""
    return de.make_family("flip", 0.3, (0.05, 0.45))


@pytest.fixture(scope="session")
def bsc():
    return hm.bsc(0.1)


@pytest.fixture(scope="session")
def canonical(flip, bsc):
    return hm.build_hmm(flip.kernel_at(flip.theta0), bsc)


@pytest.fixture(scope="session")
def three_models():
    """(family, channel) pairs used for derivative checks."""
    return [
        (de.make_family("flip", 0.3, (0.05, 0.45)), hm.bsc(0.1)),
        (de.make_family("tilted", 0.4, (0.1, 0.9), c=0.25), hm.validate_channel([[0.8, 0.2], [0.3, 0.7]])),
        (de.make_family("logistic3", 0.2, (-2.0, 2.0)), hm.smoothed_identity(3, 0.1)),
    ]


def kernel_from_support(support: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w = support * rng.uniform(0.1, 1.0, support.shape)
    return w / w.sum(axis=1, keepdims=True)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture()
def acceptance(request):
    """``record(number, ok, detail)`` prints one PASS/FAIL line and keeps it for the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"[acceptance] criterion {number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
