from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from stackgrid.case import load_case
from stackgrid.game import GameSpec
from stackgrid.powerflow import covert_limits
from stackgrid.stability import build_stability_model, model_from_stiffness

DATA = Path(__file__).resolve().parents[1] / "src" / "stackgrid" / "data"

SUBSET39 = [5, 6, 7, 8, 10, 11, 13]
QD_MAX_9 = 2.0
QD_MAX_39 = 4.0


@pytest.fixture(scope="session")
def case9():
    return load_case(DATA / "case9.json")


@pytest.fixture(scope="session")
def model9(case9):
    return build_stability_model(case9)


@pytest.fixture(scope="session")
def limits9(case9):
    return covert_limits(case9)


@pytest.fixture(scope="session")
def spec9(model9, limits9):
    """Six-load, three-level game template; change costs with ``with_costs``."""
    return GameSpec(model9, range(6), 0.1, 0.1, 3, 3, limits9, np.full(6, QD_MAX_9))


@pytest.fixture(scope="session")
def case39s():
    return load_case(DATA / "case39_stressed.json")


@pytest.fixture(scope="session")
def model39s(case39s):
    return build_stability_model(case39s)


@pytest.fixture(scope="session")
def spec39(case39s, model39s):
    lims = covert_limits(case39s, SUBSET39, scope="target")
    pos = [case39s.load_position(i) for i in SUBSET39]
    return GameSpec(model39s, pos, 0.1, 0.1, 2, 2, lims, np.full(len(pos), QD_MAX_39))


def random_toy_spec(rng: np.random.Generator, k: int | None = None) -> GameSpec:
    """Small random game whose stiffness inverse is entrywise negative."""
    k = int(rng.integers(1, 4)) if k is None else k
    a = rng.uniform(0.05, 1.0, (k, k))
    m = 0.5 * (a + a.T) + np.diag(rng.uniform(0.5, 1.5, k))
    q0 = rng.uniform(0.05, 1.0, k)
    q0 *= rng.uniform(0.1, 0.7) / float((m @ q0).max())
    model = model_from_stiffness(np.linalg.inv(-m), q0)
    scale = 1.0 / float(m.max())
    return GameSpec(
        model,
        range(k),
        float(rng.uniform(0.05, 1.5)),
        float(rng.uniform(0.05, 1.5)),
        int(rng.integers(2, 4)),
        int(rng.integers(2, 4)),
        rng.uniform(0.1, 2.0, k) * scale,
        rng.uniform(0.1, 2.0, k) * scale,
    )



# --- acceptance report --------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
