from __future__ import annotations

import functools

import pytest

import hierplace.cli
import hierplace.placer
from hierplace.hwmodel import validate_placement

# every placement produced anywhere in the suite goes through the validator
EMITTED = {"placements": 0, "invalid": []}

_original_place = hierplace.placer.place


@functools.wraps(_original_place)
def _checked_place(net, cfg, *args, **kwargs):
    report = _original_place(net, cfg, *args, **kwargs)
    result = validate_placement(report.placement, net, cfg)
    EMITTED["placements"] += 1
    if not result.ok:
        EMITTED["invalid"].append(result.violations[:3])
        raise AssertionError(f"emitted placement failed validation: {result.violations[:3]}")
    return report


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
    config.addinivalue_line("markers", "slow: long-running acceptance run")
    hierplace.placer.place = _checked_place
    hierplace.cli.place = _checked_place
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    name = mark.args[0]
    store = item.config._criteria
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        prev = store.get(name, True)
        store[name] = prev and rep.passed


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in criteria.items():
        if name.startswith("validator soundness"):
            ok = ok and not EMITTED["invalid"]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
    terminalreporter.write_line(
        f"placements emitted and validated: {EMITTED['placements']}, invalid: {len(EMITTED['invalid'])}"
    )
