import numpy as np
import pytest
from hypothesis import settings

from tabablate.data import SyntheticSpec, synthesize
from tabablate.model import LinearModel, MlpModel
from tabablate.pipeline import prepare

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

# criterion -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[str(criterion)] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def key(k):
        num = "".join(ch for ch in k if ch.isdigit())
        return (int(num or 0), k)
    for k in sorted(ACCEPTANCE, key=key):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:<4} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def synthetic():
    return synthesize(SyntheticSpec(seed=0))


@pytest.fixture(scope="session")
def prep_mlp(synthetic):
    return prepare(synthetic[0], seed=0)


@pytest.fixture(scope="session")
def prep_linear(synthetic):
    return prepare(synthetic[0], seed=0, model_kind="linear")


def random_mlp(rng, d, h=8, scale=1.0, activation="relu"):
    return MlpModel(rng.standard_normal((h, d)) * scale, rng.standard_normal(h) * scale,
                    rng.standard_normal(h) * scale, float(rng.standard_normal()), activation)


def random_linear(rng, d, scale=1.0):
    return LinearModel(rng.standard_normal(d) * scale, float(rng.standard_normal()))
