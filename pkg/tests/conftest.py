import re

import numpy as np
import pytest

from sgnet.data import SyntheticSceneSpec, generate_dataset, load_dataset

_CRITERION_TITLES = {
    1: "gradient soundness",
    2: "gate identity at init",
    3: "loss oracle",
    4: "cost accounting",
    5: "pckh oracle",
    6: "desk-scale learning",
    7: "gating-mode ordering",
    8: "alpha clustering",
    9: "aggregation modes",
    10: "reproducibility",
}

_criterion_notes = {}


@pytest.fixture
def criterion_note():
    """Attach a detail string to a criterion's summary line."""

    def note(num, text):
        _criterion_notes[num] = text

    return note


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, ()):
            found = re.search(r"test_acceptance\.py::test_criterion_(\d+)",
                              getattr(report, "nodeid", ""))
            if found:
                verdicts[int(found.group(1))] = label
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(verdicts):
        note = _criterion_notes.get(num)
        suffix = f" ({note})" if note else ""
        terminalreporter.write_line(
            f"criterion {num:2d} {_CRITERION_TITLES[num]}: {verdicts[num]}{suffix}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Eight 64px K=4 samples, generated once per session."""
    root = tmp_path_factory.mktemp("tiny_data")
    spec = SyntheticSceneSpec(num_samples=8, image_size=64, keypoints=4, seed=11)
    generate_dataset(spec, str(root))
    return load_dataset(str(root))
