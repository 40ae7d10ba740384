"""Shared expensive fixtures.

The annealed walk samples at T = 1e2, 1e3, 1e4 (n = 1e5 each) are generated
once per session and used both by the walk tests and the acceptance suite.
"""

import pytest

from rcmhomog.environment import EnvironmentLaw
from rcmhomog.walk import annealed_projection_samples

WALK_LAW = EnvironmentLaw.two_point(1, 4, 0.5)
WALK_SEED = 11
WALK_N = 100_000


@pytest.fixture(scope="session")
def annealed_walk_samples():
    return {T: annealed_projection_samples(WALK_LAW, None, T, [1.0], WALK_N, WALK_SEED)
            for T in (1e2, 1e3, 1e4)}


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    verdicts = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in name or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and outcome == "passed":
                continue
            num, _, label = name.split("test_criterion_", 1)[1].split("[")[0].partition("_")
            key = (int(num), label)
            # parametrized cases merge into one line; any failure fails the criterion
            verdicts[key] = verdicts.get(key, True) and outcome == "passed"
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for (num, label), ok in sorted(verdicts.items()):
            terminalreporter.write_line(f"criterion {num:2d} {label:<28s} {'PASS' if ok else 'FAIL'}")
