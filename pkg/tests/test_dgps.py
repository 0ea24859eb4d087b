"""Generator determinism, closed-form targets, and toy-set geometry."""

import math

import numpy as np
import pytest
from scipy import stats

from predbands.data import REGRESSION_CDF
from predbands.dgps import (
    DGP_NAMES,
    DgpSpec,
    sample_dgp,
    sample_responses,
    sample_toy2d,
    true_target,
)
from predbands.errors import DataError

# exact targets, frozen from direct evaluation of the closed forms
PHI_M1 = 0.15865525393145705
POISSON_F2_AT0 = 0.9196986029286058
PROBIT_P1_AT0 = 0.40455002638963584
LOGREG_MARGINAL_P1 = 0.47226790839830805
CATEGORICAL_PROBS = {
    0.0: (0.0674222872522, 0.821371607267, 4.55463693511e-5, 0.111160559112),
    -5.0: (0.697039817116, 0.302932255777, 2.16559135098e-13, 2.79271075675e-5),
    4.0: (0.000173228347827, 0.334796217739, 0.094335292264, 0.570695261649),
    7.0: (3.6672093701e-7, 0.128477947895, 0.657924781677, 0.213596903707),
}


def test_spec_validation():
    with pytest.raises(DataError, match="unknown DGP"):
        DgpSpec("cubic")
    with pytest.raises(DataError, match="noise"):
        DgpSpec("moons", params={"noise": -0.1})
    with pytest.raises(DataError, match="gap"):
        DgpSpec("moons", gap=True)
    with pytest.raises(DataError, match="per bin"):
        DgpSpec("bernoulli-bins", params={"probs": (0.2, 0.4)})
    with pytest.raises(DataError, match=r"\[0, 1\]"):
        DgpSpec("bernoulli-bins", params={"probs": (0.2, 0.4, 0.6, 1.8)})


def test_tasks_and_default_events():
    assert DgpSpec("linear").task.kind == REGRESSION_CDF
    assert DgpSpec("linear").default_event == 0.0
    assert DgpSpec("poisson").default_event == 2.0
    assert DgpSpec("poisson", threshold=5.0).default_event == 5.0
    assert DgpSpec("categorical").task.n_classes == 4
    assert DgpSpec("categorical").default_event == 1
    assert DgpSpec("spirals").task.n_classes == 3
    assert DgpSpec("probit").task.is_classification


def test_sampling_is_deterministic():
    for name in DGP_NAMES:
        a = sample_dgp(DgpSpec(name), 50, seed=7)
        b = sample_dgp(DgpSpec(name), 50, seed=7)
        np.testing.assert_array_equal(a.xs, b.xs)
        np.testing.assert_array_equal(a.ys, b.ys)
        c = sample_dgp(DgpSpec(name), 50, seed=8)
        assert not np.array_equal(a.xs, c.xs)


def test_sample_n_validation():
    with pytest.raises(DataError):
        sample_dgp(DgpSpec("linear"), 0, seed=0)
    with pytest.raises(DataError):
        sample_toy2d("moons", 0, 0.1, seed=0)
    with pytest.raises(DataError, match="unknown toy"):
        sample_toy2d("blobs", 10, 0.1, seed=0)


def test_regression_truth_pins():
    assert true_target(DgpSpec("linear"), 5.0, 0.0) == pytest.approx(PHI_M1, abs=1e-9)
    assert true_target(DgpSpec("poisson"), 0.0, 2.0) == pytest.approx(POISSON_F2_AT0, abs=1e-9)
    assert true_target(DgpSpec("probit"), 0.0, 1) == pytest.approx(PROBIT_P1_AT0, abs=1e-9)


def test_regression_truths_match_reference_cdfs():
    cases = {
        "linear": lambda x, t: stats.norm.cdf(t - 0.2 * x),
        "polynomial": lambda x, t: stats.norm.cdf(t - (1.0 - 0.03 * x ** 2)),
        "dependent": lambda x, t: stats.norm.cdf((t - (0.5 * x + 1.0)) / (0.5 + 0.5 * abs(x))),
        "sine": lambda x, t: stats.norm.cdf((t - 0.5 * math.sin(x / 2.0)) / 0.5),
        "poisson": lambda x, t: stats.poisson.cdf(math.floor(t), 0.05 * x ** 2 + 1.0),
    }
    for name, ref in cases.items():
        spec = DgpSpec(name)
        for x in (-7.3, -1.0, 0.0, 2.5, 9.1):
            for t in (-1.0, 0.0, 1.5, 3.0):
                assert true_target(spec, x, t) == pytest.approx(ref(x, t), abs=1e-10), (name, x, t)


def test_poisson_truth_edges():
    spec = DgpSpec("poisson")
    assert true_target(spec, 3.0, -0.5) == 0.0
    assert true_target(spec, 3.0, 2.7) == true_target(spec, 3.0, 2.0)
    assert true_target(spec, 0.0, 500.0) == pytest.approx(1.0, abs=1e-12)


def test_categorical_probability_pins():
    spec = DgpSpec("categorical")
    for x, probs in CATEGORICAL_PROBS.items():
        got = [true_target(spec, x, c) for c in range(4)]
        assert got == pytest.approx(list(probs), rel=1e-9)
        assert sum(got) == pytest.approx(1.0, abs=1e-12)


def test_binary_truths_complement():
    for name in ("probit", "bernoulli-bins", "linear-probit-bins", "logreg1d"):
        spec = DgpSpec(name)
        for x in (-6.0, 0.0, 3.3):
            p1 = true_target(spec, x, 1)
            assert true_target(spec, x, 0) == pytest.approx(1.0 - p1, abs=1e-12)


def test_bernoulli_bins_step_structure():
    spec = DgpSpec("bernoulli-bins")
    assert true_target(spec, -7.0, 1) == 0.2
    assert true_target(spec, -5.0, 1) == 0.4  # left edge belongs to the bin on its right
    assert true_target(spec, -2.0, 1) == 0.4
    assert true_target(spec, 4.9, 1) == 0.6
    assert true_target(spec, 10.0, 1) == 0.8  # closed right edge
    assert true_target(spec, -12.0, 1) == 0.2  # clamped to the outermost bins
    assert true_target(spec, 12.0, 1) == 0.8


def test_linear_probit_bins_is_smooth_in_x():
    spec = DgpSpec("linear-probit-bins")
    assert true_target(spec, 5.0, 1) == pytest.approx(PHI_M1, abs=1e-9)
    xs = np.linspace(-10.0, 10.0, 41)
    vals = [true_target(spec, float(x), 1) for x in xs]
    assert all(b < a for a, b in zip(vals, vals[1:]))  # strictly decreasing


def test_gap_variant_support():
    table = sample_dgp(DgpSpec("linear", gap=True), 10_000, seed=3)
    x = table.xs[:, 0]
    assert not np.any((x > -2.0) & (x < 2.0))
    assert np.all((x >= -8.0) & (x <= 8.0))
    assert int(np.sum(x < 0.0)) == 5_000  # exactly half per side by construction


def test_moons_geometry_without_noise():
    table = sample_toy2d("moons", 400, 0.0, seed=5)
    pts, y = table.xs, table.ys
    outer = pts[y == 0]
    inner = pts[y == 1]
    assert outer.shape[0] == 200 and inner.shape[0] == 200
    # class 0: upper unit half-circle at the origin
    np.testing.assert_allclose((outer ** 2).sum(axis=1), 1.0, atol=1e-9)
    assert np.all(outer[:, 1] >= -1e-12)
    # class 1: its reflection, shifted to center (1, 0.5), lower half
    np.testing.assert_allclose(
        (inner[:, 0] - 1.0) ** 2 + (inner[:, 1] - 0.5) ** 2, 1.0, atol=1e-9
    )
    assert np.all(inner[:, 1] <= 0.5 + 1e-12)


def test_moons_noise_perturbs_but_keeps_labels():
    table = sample_toy2d("moons", 400, 0.1, seed=5)
    y = np.sort(table.ys)
    assert int(y.sum()) == 200
    clean = sample_toy2d("moons", 400, 0.0, seed=5)
    assert not np.allclose(table.xs, clean.xs)


def test_spirals_counts_and_parametrization():
    table = sample_toy2d("spirals", 200, 0.0, seed=6)
    y = table.ys
    counts = [int(np.sum(y == c)) for c in range(3)]
    assert counts == [67, 67, 66]  # remainder goes to the low classes
    pts = table.xs
    r = np.hypot(pts[:, 0], pts[:, 1])
    keep = r > 1e-6
    theta = np.pi * r[keep] + 2.0 * np.pi * y[keep] / 3.0  # angle implied by radius
    np.testing.assert_allclose(pts[keep, 0], r[keep] * np.cos(theta), atol=1e-9)
    np.testing.assert_allclose(pts[keep, 1], r[keep] * np.sin(theta), atol=1e-9)
    assert float(r.max()) < 4.0


def test_logreg1d_marginals():
    table = sample_toy2d("logreg1d", 200_000, None, seed=9)
    x = table.xs[:, 0]
    assert float(x.mean()) == pytest.approx(1.5, abs=0.03)
    assert float(x.std()) == pytest.approx(3.0, abs=0.03)
    # marginal class-1 mass: E[sigmoid(0.25 X - 0.5)] under X ~ N(1.5, 9)
    se = math.sqrt(LOGREG_MARGINAL_P1 * (1 - LOGREG_MARGINAL_P1) / 200_000)
    assert float(table.ys.mean()) == pytest.approx(LOGREG_MARGINAL_P1, abs=3 * se)


def test_sample_dgp_dispatches_toys():
    a = sample_dgp(DgpSpec("spirals"), 120, seed=2)
    b = sample_toy2d("spirals", 120, 0.1, seed=2)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.ys, b.ys)


def test_sample_responses_holds_x_fixed():
    spec = DgpSpec("probit")
    xs = np.zeros(20_000)
    y = sample_responses(spec, xs, seed=14)
    assert y.shape == (20_000,)
    np.testing.assert_array_equal(y, sample_responses(spec, xs, seed=14))
    se = math.sqrt(PROBIT_P1_AT0 * (1 - PROBIT_P1_AT0) / 20_000)
    assert float(y.mean()) == pytest.approx(PROBIT_P1_AT0, abs=3 * se)


def test_sample_responses_regression_and_categorical():
    lin = sample_responses(DgpSpec("linear"), np.full(40_000, 5.0), seed=15)
    assert float(lin.mean()) == pytest.approx(1.0, abs=3.0 / math.sqrt(40_000) * 3)
    assert float(lin.std()) == pytest.approx(1.0, abs=0.02)
    cat = sample_responses(DgpSpec("categorical"), np.full(30_000, 4.0), seed=16)
    for c, p in enumerate(CATEGORICAL_PROBS[4.0]):
        se = math.sqrt(p * (1 - p) / 30_000)
        assert float(np.mean(cat == c)) == pytest.approx(p, abs=max(3 * se, 1e-3))


def test_poisson_draws_match_reference_pmf():
    # regression: zero-count draws once came back mislabeled as the tail cap
    spec = DgpSpec("poisson")
    y = sample_responses(spec, np.zeros(100_000), seed=18)  # lam = 1 at x = 0
    assert float(y.min()) == 0.0
    assert float(y.max()) < 20.0
    assert float(y.mean()) == pytest.approx(1.0, abs=3.0 / math.sqrt(100_000) * 3)
    for k in range(6):
        p = stats.poisson.pmf(k, 1.0)
        se = math.sqrt(p * (1 - p) / 100_000)
        assert float(np.mean(y == k)) == pytest.approx(p, abs=3 * max(se, 1e-4)), k
    assert float(np.mean(y <= 2.0)) == pytest.approx(POISSON_F2_AT0, abs=0.005)


def test_sample_responses_undefined_for_constructed_covariates():
    with pytest.raises(DataError, match="no conditional response law"):
        sample_responses(DgpSpec("moons"), [0.0], seed=0)
    with pytest.raises(DataError, match="no conditional response law"):
        sample_responses(DgpSpec("spirals"), [0.0], seed=0)
    with pytest.raises(DataError):
        sample_responses(DgpSpec("linear"), [], seed=0)


def test_empirical_law_matches_truth_for_binned_dgps():
    # one covariate draw, many response draws per point, freq vs closed form
    for name in ("bernoulli-bins", "linear-probit-bins"):
        spec = DgpSpec(name)
        for x in (-7.0, -3.0, 1.0, 6.0):
            p = true_target(spec, x, 1)
            y = sample_responses(spec, np.full(20_000, x), seed=17)
            se = math.sqrt(p * (1 - p) / 20_000)
            assert float(y.mean()) == pytest.approx(p, abs=3 * se), (name, x)
