import numpy as np
import pytest

from boawdx.corpus_io import FEATURE_NAMES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_table(path, columns, rows, delimiter=","):
    lines = [delimiter.join(columns)]
    lines += [delimiter.join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def canonical_table(tmp_path):
    cols = ["subject_id", "segment_index", "label"] + list(FEATURE_NAMES)
    rows = [
        ["s1", 0, 0] + [0.1 * j for j in range(90)],
        ["s1", 1, 0] + [0.2 * j for j in range(90)],
        ["s2", 0, 1] + [0.3 * j for j in range(90)],
    ]
    return write_table(tmp_path / "feats.csv", cols, rows)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
