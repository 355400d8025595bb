from __future__ import annotations

import numpy as np
import pytest

from slowfast.models import ModelDef, Param


def _linear_fn(A):
    A = np.asarray(A, dtype=float)
    return lambda p, s: A @ np.asarray(s, dtype=float)


def linear_model(A, mid: str = "linear") -> ModelDef:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    return ModelDef(id=mid, dim=n, param_schema=(Param("k", 1.0),), state_labels=tuple(f"x{i}" for i in range(n)),
                    citation="linear test system", fn=_linear_fn(A), x0=(1.0,) * n)


def _hopf_normal(p, s):
    x, y = s
    r2 = x * x + y * y
    return np.array([p["mu"] * x - p["omega"] * y - x * r2, p["omega"] * x + p["mu"] * y - y * r2])


# supercritical Hopf normal form: cycle of radius sqrt(mu), period 2 pi / omega
HOPF_NORMAL = ModelDef(
    id="hopf-normal", dim=2, param_schema=(Param("mu", 0.25, "real"), Param("omega", 1.0)),
    state_labels=("x", "y"), citation="Hopf normal form test system", fn=_hopf_normal, x0=(0.1, 0.0),
    bif_param="mu", bif_range=(-0.5, 0.5),
)


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with np.errstate(all="ignore"):
        yield


# one line per acceptance criterion, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
