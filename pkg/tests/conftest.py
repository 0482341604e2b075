from __future__ import annotations

import numpy as np
import pytest

from heatobs import carleman as cm
from heatobs.mesh import build_mesh
from heatobs.morse import build_weight_family, interval

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def mesh201():
    return build_mesh(1, 201)


@pytest.fixture(scope="session")
def family201(mesh201):
    return build_weight_family(mesh201, interval(mesh201, 0.35, 0.65))


@pytest.fixture(scope="session")
def carleman201(family201):
    return cm.CarlemanConfig(cm.calibrate_s(family201), 0.1, 0.5, family201)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
