"""Shared fixtures for the test suite.

The selection fixture (12 features, 3 informative) and its oracle are
session-scoped because several suites lean on the same 20 seeded
optimizer runs, and those runs are the expensive part.
"""

import pytest

from flowsel.correlation import spearman_matrix
from flowsel.dataset import one_hot
from flowsel.subset_search import (
    AquilaConfig,
    BatConfig,
    aquila_run,
    bat_run,
    brute_force_best,
)
from flowsel.synth import make_dataset

# One line per acceptance gate, printed in the terminal summary so the
# verdicts survive pytest's output capture.
GATE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.write_sep("-", "acceptance gates")
        for line in GATE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def selection_fixture():
    """800-row labeled dataset: 3 informative features among 9 noise."""
    return make_dataset(3, 9, 800, seed=4)


@pytest.fixture(scope="session")
def selection_corr(selection_fixture):
    data, _ = selection_fixture
    indicators = one_hot(data.labels_cat, data.class_names)
    return spearman_matrix(
        data.features, indicators, data.feature_names, data.class_names
    )


@pytest.fixture(scope="session")
def selection_oracle(selection_corr):
    return brute_force_best(selection_corr)


@pytest.fixture(scope="session")
def ba_results(selection_corr):
    """Twenty full-length bat searches, seeds 0..19."""
    return tuple(
        bat_run(selection_corr, BatConfig(seed=s)) for s in range(20)
    )


@pytest.fixture(scope="session")
def ao_results(selection_corr):
    """Twenty full-length aquila searches, seeds 0..19."""
    return tuple(
        aquila_run(selection_corr, AquilaConfig(seed=s)) for s in range(20)
    )


@pytest.fixture(scope="session")
def blob_fixture():
    """Well-separated blobs: every feature informative, three classes."""
    return make_dataset(6, 0, 600, seed=5)
