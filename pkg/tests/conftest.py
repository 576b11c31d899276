import pytest

from asmb.synth import SynthConfig, generate_suite

import helpers


@pytest.fixture(scope="session")
def standard_suite():
    """100 tasks, lengths 20-60, dependency gaps 10-15, seed 0."""
    return generate_suite(SynthConfig(seed=0, num_tasks=100))


@pytest.fixture(scope="session")
def small_suite():
    return generate_suite(SynthConfig(seed=3, num_tasks=12))


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(helpers.ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
