import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robustkf.cases import benchmark_case  # noqa: E402
from robustkf.design import design_robust_filter  # noqa: E402
from robustkf.model import Domain, LtiModel  # noqa: E402


@functools.lru_cache(maxsize=None)
def solved_case(name):
    """(case, solution) for a named benchmark, solved once per session."""
    case = benchmark_case(name)
    return case, design_robust_filter(case.model, case.spec)


def scalar_model(a, b=1.0, c=1.0, discrete=False, Ts=0.01):
    return LtiModel([[a]], [[b]], [[c]],
                    domain=Domain.DISCRETE if discrete else Domain.CONTINUOUS,
                    sample_time=Ts if discrete else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
