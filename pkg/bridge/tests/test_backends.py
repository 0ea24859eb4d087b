"""Stub backend behavior and the shared binned-CDF rule."""

import numpy as np
import pytest

from tabpfn_bridge.backends import StubBackend, cdf_from_bins
from tabpfn_bridge.config import BridgeConfig

EDGES = np.array([0.0, 1.0, 2.0, 4.0])
MASSES = np.array([0.25, 0.25, 0.5])


@pytest.mark.parametrize("t,want", [
    (-1.0, 0.0),
    (0.0, 0.0),        # left boundary carries no mass yet
    (1.0, 0.25),       # exact interior edge: fully-below bins only
    (1.5, 0.375),      # quarter bin + half of the next
    (3.0, 0.75),       # straddling bin contributes its linear fraction
    (4.0, 1.0),
    (9.0, 1.0),
])
def test_cdf_from_bins(t, want):
    assert cdf_from_bins(EDGES, MASSES, t) == pytest.approx(want, abs=1e-12)


def _classifier(seed=0, ensemble=8, temperature=1.0):
    return StubBackend(BridgeConfig(
        backend="stub", model_kind="classifier",
        seed=seed, ensemble=ensemble, temperature=temperature,
    ))


def _context(n=30, k=2, seed=1):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(n, 1))
    ys = rng.integers(0, k, size=n).astype(np.float64)
    return xs, ys


def test_class_probs_rows_are_distributions():
    xs, ys = _context(k=3)
    probs = _classifier().class_probs(xs, ys, 3, np.linspace(-2, 2, 7)[:, None])
    assert probs.shape == (7, 3)
    assert np.all(probs > 0.0) and np.all(probs < 1.0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_class_probs_deterministic_per_seed():
    xs, ys = _context()
    q = np.array([[0.3], [-1.1]])
    a = _classifier(seed=5).class_probs(xs, ys, 2, q)
    b = _classifier(seed=5).class_probs(xs, ys, 2, q)
    np.testing.assert_array_equal(a, b)
    c = _classifier(seed=6).class_probs(xs, ys, 2, q)
    assert np.any(a != c)


def test_absent_class_still_gets_mass():
    xs, _ = _context()
    ys = np.array([0.0, 1.0] * 15)  # class 2 never observed
    probs = _classifier().class_probs(xs, ys, 3, np.zeros((1, 1)))
    assert 0.0 < probs[0, 2] < 0.5


def test_temperature_flattens():
    xs, ys = _context(k=2)
    q = np.array([[0.0]])
    sharp = _classifier(temperature=1.0).class_probs(xs, ys, 2, q)
    flat = _classifier(temperature=25.0).class_probs(xs, ys, 2, q)
    assert abs(flat[0, 0] - 0.5) < abs(sharp[0, 0] - 0.5) + 1e-12


def _regressor(seed=0):
    return StubBackend(BridgeConfig(
        backend="stub", model_kind="regressor", seed=seed, ensemble=4,
    ))


def test_cdf_monotone_and_saturating():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(40, 1))
    ys = 0.5 * xs[:, 0] + rng.normal(size=40)
    back = _regressor()
    q = np.zeros((5, 1))
    ts = np.array([-50.0, -1.0, 0.0, 1.0, 50.0])
    vals = back.cdf_at(xs, ys, q, ts)
    assert vals[0] == 0.0 and vals[-1] == 1.0
    assert np.all(np.diff(vals) >= 0.0)
    assert np.all((vals >= 0.0) & (vals <= 1.0))


def test_constant_labels_keep_a_usable_bin_range():
    xs = np.linspace(-1, 1, 10)[:, None]
    ys = np.full(10, 3.0)
    back = _regressor()
    below, above = back.cdf_at(xs, ys, np.zeros((2, 1)), np.array([1.0, 5.0]))
    assert below < 0.5 < above
