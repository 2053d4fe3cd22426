import re
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cnnbench.synthetic import make_synthetic_dataset


def write_png(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
    return path


def make_class_dirs(root, counts, size=(8, 8), seed=0):
    """``counts`` maps class name -> number of random RGB PNGs to write."""
    rng = np.random.default_rng(seed)
    for name, n in counts.items():
        for i in range(n):
            write_png(Path(root) / name / f"img_{i:03d}.png",
                      rng.integers(0, 256, size=(*size, 3)))
    return Path(root)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    return make_synthetic_dataset(tmp_path_factory.mktemp("synth") / "ds", n_per_class=100, size=64, seed=0)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        prev = _CRITERIA.get(n, "PASS")
        _CRITERIA[n] = "FAIL" if (report.outcome == "failed" or prev == "FAIL") else (
            "SKIP" if report.outcome == "skipped" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:2d}: {_CRITERIA[n]}")
