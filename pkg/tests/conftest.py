import os

import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run long full-scale training criteria (hours)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running full-scale run, excluded by default")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("MCNO_RUN_SLOW"):
        return
    skip = pytest.mark.skip(reason="long-running; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
