from __future__ import annotations

import pytest

from .helpers import CRITERIA


@pytest.fixture(scope="session")
def small_records():
    from tablegraph.synth import SynthConfig, synth_generate

    return synth_generate(SynthConfig(n_documents=24, n_families=4, seed=11))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
