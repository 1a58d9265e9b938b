import numpy as np
import pytest

from arht_ood.hdtest import DistributionSummary

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def summaries(X, Y):
    return DistributionSummary.from_samples(X), DistributionSummary.from_samples(Y)


def contrived(mean, scatter, count):
    return DistributionSummary(mean=np.asarray(mean, float), scatter=np.asarray(scatter, float), count=count)
