import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dba.core import DatasetRole
from dba.synthgen import default_gaussian_spec, generate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def gaussian_spec():
    return default_gaussian_spec()


@pytest.fixture(scope="session")
def small_split(gaussian_spec):
    spec = gaussian_spec.replace(p_m0=0.05)
    return (generate(spec, 1500, DatasetRole.TRAIN, seed=3),
            generate(spec, 500, DatasetRole.VAL, seed=4),
            generate(spec, 500, DatasetRole.TEST, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
