import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from frameseg import SynthConfig, synth_generate  # noqa: E402


@pytest.fixture(scope="session")
def tiny_corpus():
    """24 small samples with f=6; shared by model and pipeline tests."""
    cfg = SynthConfig(n_samples=24, f=6, duration=30.0, feature_dim=8,
                      n_fg_segments=(1, 2), noise_std=0.02, seed=5)
    return cfg, synth_generate(cfg)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    outcomes = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                outcomes[nodeid.split("::")[-1]] = status.upper()
    if outcomes:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(outcomes):
            terminalreporter.write_line(f"{name}: {outcomes[name]}")
