import numpy as np
import pytest

from ddvfs.core import p100_like
from ddvfs.ingest import EncodedMatrix, EncodingMeta, SplitSpec, encode, split
from ddvfs.synthdata import SyntheticGPU, default_suite

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


def matrix(X, y, target: str = "time", columns=None) -> EncodedMatrix:
    """Plain numeric design wrapped as an EncodedMatrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    meta = EncodingMeta(target, cols, (), 1.0, 0.0, 0, {})
    return EncodedMatrix(tuple(range(len(X))), cols, X, np.asarray(y, dtype=float), target, meta)


@pytest.fixture(scope="session")
def device():
    return p100_like()


@pytest.fixture(scope="session")
def gpu(device):
    return SyntheticGPU(default_suite(), device)


@pytest.fixture(scope="session")
def dataset(gpu):
    return gpu.dataset(2)


@pytest.fixture(scope="session")
def split_70_30(dataset):
    return split(dataset, SplitSpec.fraction(0.3, 0))


@pytest.fixture(scope="session")
def encoded(split_70_30):
    train, test = split_70_30
    return {t: encode(train, test, t) for t in ("energy", "time")}
