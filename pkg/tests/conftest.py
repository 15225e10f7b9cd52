import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from biasforge.data import TabularDataset  # noqa: E402
from biasforge.synth import BaseConfig, gen_base_dataset  # noqa: E402


def make_dataset(y, z=None, features=None, kinds=None):
    """Small dataset with time index 0..n-1, label ``y`` and optional group/feature columns."""
    y = np.asarray(y)
    columns = {"t": np.arange(y.size)}
    col_kinds = {"t": "time"}
    for name, values in (features or {}).items():
        columns[name] = values
        col_kinds[name] = (kinds or {}).get(name, "real")
    columns["y"] = y
    col_kinds["y"] = "binary"
    protected = None
    if z is not None:
        columns["z"] = [1 if g == "A" else 0 for g in z] if len(z) and isinstance(z[0], str) else z
        col_kinds["z"] = "group"
        protected = "z"
    return TabularDataset(columns, col_kinds, "y", "t", protected)


@pytest.fixture(scope="session")
def base60k():
    return gen_base_dataset(BaseConfig())


@pytest.fixture(scope="session")
def base50k():
    return gen_base_dataset(BaseConfig(n_rows=50000, seed=7))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = module.acceptance_lines() if module is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
