import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fusionsearch.signals import SynthParams, generate_synthetic_subject, preprocess

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_recordings():
    """Four short preprocessed synthetic subjects."""
    p = SynthParams(duration_s=240)
    return [preprocess(generate_synthetic_subject(p, np.random.default_rng(i), f"s{i:02d}"))
            for i in range(4)]


# one verdict line per acceptance criterion, shown after the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
