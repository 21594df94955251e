import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oran_anomaly.dataset import label_reports, split
from oran_anomaly.features import SERVING_PLUS_NEIGHBORS, extract_matrix
from oran_anomaly.synthetic import generate_reports

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def synthetic_labeled():
    return label_reports(generate_reports(n_ues=20, n_reports=3000, seed=7))


@pytest.fixture(scope="session")
def synthetic_split(synthetic_labeled):
    train, test = split(synthetic_labeled)

    def xy(part):
        return (extract_matrix([r.report for r in part], SERVING_PLUS_NEIGHBORS),
                np.array([r.label for r in part], dtype=np.int64))

    return train, test, xy(train), xy(test)


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
