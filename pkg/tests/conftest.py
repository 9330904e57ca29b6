import numpy as np
import pytest

from envtransfer.data import ConfigSpace, EnvironmentDesc, PerfDataset, aggregate, make_pair


def dataset_from_means(configs, means, *, names=None, valid=None, env=None):
    """Single-replicate dataset; NaN or valid=False marks invalid configs."""
    configs = np.asarray(configs, dtype=np.uint8)
    means = np.asarray(means, dtype=float)
    if valid is None:
        valid = ~np.isnan(means)
    valid = np.asarray(valid, dtype=bool)
    perf = np.where(valid, means, np.nan)
    names = names or tuple(f"o{i}" for i in range(configs.shape[1]))
    return PerfDataset(ConfigSpace(tuple(names)), configs, np.zeros(len(means), int),
                       perf, valid, env or EnvironmentDesc())


def pair_from_means(configs, ys, yt, *, valid_s=None, valid_t=None, label="test"):
    src = aggregate(dataset_from_means(configs, ys, valid=valid_s))
    tgt = aggregate(dataset_from_means(configs, yt, valid=valid_t))
    return make_pair(src, tgt, label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
