import numpy as np
import pytest

from predbands.data import BINARY, MULTICLASS, REGRESSION_CDF, ContextTable, PredictiveVector, TaskKind
from predbands.rules import PredictiveRule


class ConstantRule(PredictiveRule):
    """Ignores the context entirely; every query gets the same value."""

    task_kinds = (BINARY, MULTICLASS, REGRESSION_CDF)

    def __init__(self, value=0.5, rule_id="constant"):
        self.value = float(value)
        self.rule_id = rule_id

    def predict(self, prefix, queries):
        return PredictiveVector(np.full(queries.m, self.value), prefix.n)

    def prior_predict(self, queries):
        return PredictiveVector(np.full(queries.m, self.value), 0)

    def label_distribution(self, state, x):
        return np.array([1.0 - self.value, self.value])

    def _fit(self, context):
        return None

    def _update_state(self, state, x, y):
        return None

    def _predict_state(self, state, queries):
        return np.full(queries.m, self.value)


@pytest.fixture
def binary_table():
    def make(n=50, seed=0, p=0.6):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(-1.0, 1.0, size=(n, 1))
        ys = (rng.random(n) < p).astype(np.int64)
        if ys.min() == ys.max():  # guarantee both classes for rule sanity
            ys[0] = 1 - ys[0]
        return ContextTable(xs, ys, TaskKind.binary())

    return make


@pytest.fixture
def regression_table():
    def make(n=50, seed=0):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(-1.0, 1.0, size=(n, 1))
        ys = rng.standard_normal(n)
        return ContextTable(xs, ys, TaskKind.regression())

    return make
