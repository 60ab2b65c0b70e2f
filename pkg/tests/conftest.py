import logging

import numpy as np
import pytest

from streamrec.core import Interactions
from streamrec.ingest import synthetic_dataset


def make_interactions(pairs, start_seq=0):
    pairs = list(pairs)
    users = np.array([p[0] for p in pairs], dtype=np.int64)
    items = np.array([p[1] for p in pairs], dtype=np.int64)
    seq = np.arange(start_seq, start_seq + len(pairs), dtype=np.int64)
    return Interactions(users, items, seq.copy(), seq)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_stream():
    """~1.5k-interaction drifting stream, quick enough for end-to-end tests."""
    return synthetic_dataset(num_users=40, num_items=200, n=1500, seed=3)


@pytest.fixture(scope="session")
def stream_5k():
    return synthetic_dataset(num_users=100, num_items=300, n=5000, seed=0)


@pytest.fixture(autouse=True)
def _quiet_sampler_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="streamrec.sampling")


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion checked by this test")
    config.stash[_CRITERIA] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    status = "PASS" if report.passed else "FAIL"
    item.config.stash[_CRITERIA].append(f"{status}  criterion {marker.args[0]}: {marker.args[1]}  [{detail}]")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
