import functools

import pytest
from hypothesis import HealthCheck, settings

from ripencap.analysis import analyze
from ripencap.attack import AttackConfig, phase1_collect
from ripencap.firmware import fixture

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def image_of(name):
    return fixture(name)


@functools.lru_cache(maxsize=None)
def trace_of(name):
    img = image_of(name)
    cfg = AttackConfig(img.entry)
    return cfg, phase1_collect(img, cfg)


@functools.lru_cache(maxsize=None)
def report_of(name):
    cfg, trace = trace_of(name)
    return analyze(image_of(name), trace, cfg)


@pytest.fixture(scope="session")
def traces():
    return trace_of


@pytest.fixture(scope="session")
def reports():
    return report_of


@pytest.fixture(scope="session")
def images():
    return image_of


_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    n = int(name.split("_")[2])
    if report.failed or (report.when == "call" and n not in _CRITERIA):
        _CRITERIA[n] = (name, "FAIL" if report.failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, verdict = _CRITERIA[n]
        terminalreporter.write_line("criterion %d %-40s %s" % (n, name[len("test_criterion_%d_" % n):], verdict))
