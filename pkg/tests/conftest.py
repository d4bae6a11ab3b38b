import warnings

import numpy as np
import pytest

from scr_dynpredict.dataset import SynthConfig, generate_synthetic, split
from scr_dynpredict.feature_select import TreeParams

ACCEPTANCE_LINES = []


def record(number: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


# light tree settings keep pipeline unit tests quick
FAST_TREES = TreeParams(n_trees=20, gbt_rounds=30)


@pytest.fixture(scope="session")
def small_plant():
    table, truth = generate_synthetic(SynthConfig(n=1500, seed=11, noise_ar=0.9))
    train, test = split(table, 1200)
    return train, test, truth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_vmd():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="VMD did not converge")
        warnings.filterwarnings("ignore", message="mode-count search reached")
        yield
