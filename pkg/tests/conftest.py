import numpy as np
import pytest
import torch

from occlugrid.scene import synth_scene


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth16():
    return [synth_scene(s) for s in range(16)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("setup", "call"):
                continue
            name = nodeid.split("::test_criterion_")[1]
            if outcome != "passed" or name not in lines:
                lines[name] = "PASS" if outcome == "passed" else "FAIL"
    if lines:
        terminalreporter.section("acceptance criteria")
        for name in sorted(lines, key=lambda n: int(n.split("_")[0])):
            num, label = name.split("_", 1)
            terminalreporter.write_line(f"criterion {num} ({label.replace('_', ' ')}): {lines[name]}")
