"""Shared pytest hooks: one pass/fail line per acceptance criterion."""

from collections import defaultdict

import pytest

CRITERIA = {
    1: "harmonic Witten-Laplacian covariance",
    2: "correlation/walk identity, harmonic closed form",
    3: "correlation/walk identity, anharmonic",
    4: "correlation-to-kernel sandwich, anharmonic",
    5: "monotone same-noise coupling",
    6: "conservation and integration by parts",
    7: "diffusion coefficient",
    8: "smoothed-field relaxation",
    9: "annealed kernel shape",
    10: "walk-generator spectrum and gap",
}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    status = defaultdict(list)
    details = defaultdict(list)
    for reports in terminalreporter.stats.values():
        for rep in reports:
            props = dict(getattr(rep, "user_properties", []) or [])
            if "criterion" not in props:
                continue
            n = props["criterion"]
            if rep.when == "call" or rep.outcome != "passed":
                status[n].append(rep.outcome)
            if rep.when == "call" and "detail" in props:
                details[n].append(props["detail"])
    if not status:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(status):
        verdict = "PASS" if all(s == "passed" for s in status[n]) else "FAIL"
        if all(s == "skipped" for s in status[n]):
            verdict = "SKIP"
        line = f"criterion {n:2d} ({CRITERIA.get(n, '?')}): {verdict}"
        if details[n]:
            line += "  [" + "; ".join(details[n]) + "]"
        terminalreporter.write_line(line)
