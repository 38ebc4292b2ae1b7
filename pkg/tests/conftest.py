import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cdm.core import ArrayEffectModel, Dataset  # noqa: E402

_ACCEPTANCE: list[str] = []


@pytest.fixture
def record_criterion():
    """Print and remember one PASS/FAIL line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"[criterion {number:>2}] {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


def constant_model(value: float, n_features: int = 1) -> ArrayEffectModel:
    return ArrayEffectModel(lambda X: np.full(X.shape[0], float(value)), n_features)


def feature_model(j: int, n_features: int, scale: float = 1.0) -> ArrayEffectModel:
    return ArrayEffectModel(lambda X: scale * X[:, j], n_features)


def toy_dataset(X, t, y, e=None, **oracle) -> Dataset:
    return Dataset(X=np.asarray(X, dtype=float).reshape(len(t), -1), treatment=np.asarray(t),
                   outcome=np.asarray(y, dtype=float), propensity=None if e is None else np.asarray(e, dtype=float),
                   **oracle)
