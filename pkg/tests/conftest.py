import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def fixture_dir(tmp_path):
    """A tiny fundus dataset (6 images per grade) plus a matching config file."""
    import json

    from retina_pipeline.synthetic import write_fixture

    write_fixture(tmp_path, per_grade=6, height=48, width=64, seed=3)
    cfg = {
        "task": "FIVE",
        "paths": {"manifest": "train.csv", "image_dir": "images", "output_dir": "out"},
        "preprocess": {"target_size": 224},
        "model": {"input_size": 16, "hidden_widths": [8]},
        "trainer": {"max_epochs": 3, "batch_size": 8},
    }
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    return tmp_path
