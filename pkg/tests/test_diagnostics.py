"""Rollout mechanics, exact moment probes, and decay-rate fits.

The conjugate rule is an exact martingale, so b vanishes to rounding and b2
has the closed form g(1-g)/(a0+b0+n+1)^2; both anchor the probes here.
"""

import math

import numpy as np
import pytest
from scipy import stats

from predbands.data import ContextTable, TaskKind
from predbands.diagnostics import (
    B_FLOOR,
    MomentTrace,
    RolloutConfig,
    conditional_moments,
    diagnose,
    floor_values,
    gamma_fit,
    partial_sums,
    power_law_fit,
    rollout,
    tail_grid,
    trace_csv_rows,
)
from predbands.errors import DataError, RuleError
from predbands.rules import BetaBernoulliRule, Binning, NormalNormalRule

from conftest import ConstantRule


def _urn_rule():
    return BetaBernoulliRule(Binning.single())


def _flat_prefix(n, n_ones, x=0.0):
    ys = np.zeros(n, dtype=np.int64)
    ys[:n_ones] = 1
    return ContextTable(np.full((n, 1), x), ys, TaskKind.binary())


def test_tail_grid_scheme():
    g = tail_grid(25, 1025)
    assert g[0] == 125 and g[-1] == 1025
    assert g.dtype == np.int64
    assert np.all(np.diff(g) > 0)
    assert len(g) <= 100  # rounding collisions collapse
    # geometric spacing: later gaps are wider
    assert g[1] - g[0] < g[-1] - g[-2]
    with pytest.raises(DataError, match="n_end"):
        tail_grid(25, 124)


def test_rollout_config_validation():
    with pytest.raises(DataError):
        RolloutConfig(n0=1)
    with pytest.raises(DataError):
        RolloutConfig(n0=10, n_end=9)
    with pytest.raises(DataError):
        RolloutConfig(support=())
    with pytest.raises(DataError):
        RolloutConfig(support=(0.0, float("inf")))
    with pytest.raises(DataError):
        RolloutConfig(support_probs=(0.5, 0.5))  # four support points
    with pytest.raises(DataError):
        RolloutConfig(support_probs=(0.9, 0.2, -0.05, -0.05))


def test_rollout_determinism_and_prefix():
    init = _flat_prefix(10, 6)
    cfg = RolloutConfig(n0=10, n_end=60, init_context=init, seed=4)
    a = rollout(_urn_rule(), cfg)
    b = rollout(_urn_rule(), cfg)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.ys, b.ys)
    assert a.n == 60
    np.testing.assert_array_equal(a.xs[:10], init.xs)
    np.testing.assert_array_equal(a.ys[:10], init.ys)
    assert set(np.unique(a.xs[10:]).tolist()) <= {-1.0, 0.0, 1.0, 2.0}


def test_rollout_n_end_equal_n0_is_identity():
    init = _flat_prefix(10, 6)
    out = rollout(_urn_rule(), RolloutConfig(n0=10, n_end=10, init_context=init))
    np.testing.assert_array_equal(out.xs, init.xs)
    np.testing.assert_array_equal(out.ys, init.ys)


def test_rollout_constant_rule_is_fair_coin():
    cfg = RolloutConfig(n0=25, n_end=525, seed=21)
    table = rollout(ConstantRule(0.5), cfg)
    new = table.ys[25:]
    assert abs(float(new.mean()) - 0.5) < 3 * 0.5 / math.sqrt(500)


def test_rollout_requires_binary_rule():
    with pytest.raises(RuleError, match="binary"):
        rollout(NormalNormalRule(Binning.single(), sigma_sq=1.0), RolloutConfig())


def test_rollout_init_context_size_mismatch():
    with pytest.raises(DataError, match="n0"):
        rollout(_urn_rule(), RolloutConfig(n0=25, init_context=_flat_prefix(10, 6)))


def test_rollout_default_init_has_both_classes():
    table = rollout(_urn_rule(), RolloutConfig(n0=25, n_end=25, seed=3))
    assert set(table.ys[:25].tolist()) == {0, 1}


def test_urn_limit_matches_posterior():
    # Polya urn: the success fraction converges to a Beta(1+s0, 1+f0) draw,
    # so terminal predictive values across rollouts should look like that law
    init = _flat_prefix(10, 6)
    finals = []
    for seed in range(200):
        t = rollout(_urn_rule(), RolloutConfig(n0=10, n_end=510, init_context=init, seed=seed))
        finals.append((1.0 + float(t.ys.sum())) / (2.0 + t.n))
    res = stats.kstest(finals, stats.beta(7, 5).cdf)
    assert res.pvalue > 0.01


def test_conditional_moments_martingale_and_closed_form():
    prefix = _flat_prefix(100, 30)
    g = 31.0 / 102.0
    b, b2 = conditional_moments(_urn_rule(), prefix, query_x=0.0, support=(-1.0, 0.0, 1.0))
    assert abs(b) <= 1e-14
    assert b2 == pytest.approx(g * (1.0 - g) / 103.0 ** 2, abs=1e-15)


def test_conditional_moments_multibin_still_martingale():
    rule = BetaBernoulliRule(Binning((-10.0, -5.0, 0.0, 5.0, 10.0)))
    xs = np.array([-7.0, -2.0, 1.0, 6.0, -7.0, 1.0, 6.0, -2.0])[:, None]
    ys = np.array([1, 0, 1, 1, 0, 0, 1, 1], dtype=np.int64)
    prefix = ContextTable(xs, ys, TaskKind.binary())
    b, b2 = conditional_moments(rule, prefix, query_x=1.0, support=(-7.0, -2.0, 1.0, 6.0))
    assert abs(b) <= 1e-14
    # only the support points in the query's bin move the predictive there:
    # bin [0, 5) holds xs {1.0}, counts (c, s) = (2, 1), so g = 2/4 and each
    # label draw there contributes g(1-g)/(2+c+1)^2 at weight 1/4
    assert b2 == pytest.approx(0.25 * 0.5 * 0.5 / 25.0, abs=1e-15)


def test_conditional_moments_constant_rule():
    b, b2 = conditional_moments(ConstantRule(0.3), _flat_prefix(5, 2), 0.0, (-1.0, 1.0))
    assert (b, b2) == (0.0, 0.0)


def test_conditional_moments_validation():
    reg = ContextTable(np.zeros((3, 1)), np.array([0.1, 0.2, 0.3]), TaskKind.regression())
    with pytest.raises(DataError, match="binary"):
        conditional_moments(_urn_rule(), reg, 0.0, (0.0,))
    with pytest.raises(DataError):
        conditional_moments(_urn_rule(), _flat_prefix(5, 2), 0.0, ())
    with pytest.raises(DataError):
        conditional_moments(_urn_rule(), _flat_prefix(5, 2), 0.0, (0.0, float("nan")))


def test_moment_trace_validation():
    with pytest.raises(DataError, match="matching"):
        MomentTrace(grid=[1, 2, 3], b=[0.0, 0.0], b2=[0.0, 0.0])
    with pytest.raises(DataError, match="increasing"):
        MomentTrace(grid=[3, 2], b=[0.0, 0.0], b2=[0.0, 0.0])
    with pytest.raises(DataError, match="nonnegative"):
        MomentTrace(grid=[1, 2], b=[0.0, 0.0], b2=[0.0, -1e-3])
    tr = MomentTrace(grid=[1, 2], b=[0.0, 0.0], b2=[0.0, -1e-16])
    assert tr.b2[1] == 0.0  # rounding-scale negatives clamp


def test_power_law_fit_exact():
    ns = np.geomspace(100, 10_000, 40)
    fit = power_law_fit(ns, 3.7 * ns ** -1.2)
    assert fit.exponent == pytest.approx(1.2, abs=1e-9)
    assert fit.amplitude == pytest.approx(3.7, rel=1e-9)
    assert fit.stderr == pytest.approx(0.0, abs=1e-9)
    assert fit.ci_low <= 1.2 <= fit.ci_high


def test_power_law_fit_constant_series():
    ns = np.array([10.0, 100.0, 1000.0])
    fit = power_law_fit(ns, np.full(3, 2.5))
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)
    assert fit.amplitude == pytest.approx(2.5, rel=1e-12)


def test_power_law_fit_scale_equivariance():
    ns = np.geomspace(50, 5000, 25)
    v = ns ** -0.8 * (1.0 + 0.1 * np.sin(ns))
    a = power_law_fit(ns, v)
    b = power_law_fit(ns, 10.0 * v)
    assert a.exponent == pytest.approx(b.exponent, abs=1e-12)
    assert b.amplitude == pytest.approx(10.0 * a.amplitude, rel=1e-12)


def test_power_law_fit_recovers_noisy_exponent():
    rng = np.random.default_rng(30)
    ns = np.geomspace(100, 10_000, 50)
    v = ns ** -0.87 * np.exp(0.05 * rng.standard_normal(50))
    fit = power_law_fit(ns, v)
    assert fit.ci_low <= 0.87 <= fit.ci_high
    assert fit.exponent == pytest.approx(0.87, abs=0.05)


def test_power_law_fit_validation():
    with pytest.raises(DataError):
        power_law_fit([1.0, 2.0], [1.0, 0.5])
    with pytest.raises(DataError):
        power_law_fit([1.0, 2.0, 3.0], [1.0, -0.5, 0.2])
    with pytest.raises(DataError):
        power_law_fit([1.0, 2.0, 3.0], [1.0, 0.5])
    with pytest.raises(DataError, match="degenerate"):
        power_law_fit([5.0, 5.0, 5.0], [1.0, 1.0, 1.0])


def test_floor_values():
    v, touched = floor_values([1e-20, 1e-13, 5e-13])
    np.testing.assert_array_equal(v, [B_FLOOR, 1e-13, 5e-13])
    assert touched == 1
    v, touched = floor_values([0.5, 0.2], floor=0.3)
    np.testing.assert_array_equal(v, [0.5, 0.3])
    assert touched == 1


def test_partial_sums_unit_grid_is_plain_sum():
    grid = np.arange(1, 101, dtype=np.float64)
    v = 1.0 / grid ** 2
    s = partial_sums(grid, v)
    np.testing.assert_allclose(s, np.cumsum(v), atol=1e-12)
    assert s[-1] == pytest.approx(1.6349839001848929, abs=1e-12)


def test_partial_sums_sparse_grid_close_to_dense():
    dense = np.arange(1, 101, dtype=np.float64)
    sparse = np.unique(np.rint(np.geomspace(1, 100, 25)))
    s = partial_sums(sparse, 1.0 / sparse ** 2)
    assert s[-1] == pytest.approx(1.6349839001848929, abs=0.01)


def test_partial_sums_zeros_and_validation():
    np.testing.assert_array_equal(partial_sums([1.0, 5.0, 9.0], [0.0, 0.0, 0.0]), np.zeros(3))
    with pytest.raises(DataError):
        partial_sums([1.0, 2.0], [1.0])
    with pytest.raises(DataError, match="increasing"):
        partial_sums([2.0, 1.0], [1.0, 1.0])


def test_partial_sums_weighted_growth():
    # with v = m^-1.2 the sqrt weight gives sum m^-0.7 ~ n^0.3/0.3 + const
    grid = np.unique(np.rint(np.geomspace(1, 4000, 400)))
    t = partial_sums(grid, grid ** -1.2, weighted=True)
    dense = np.arange(1, 4001, dtype=np.float64)
    exact = np.cumsum(dense ** -0.7)
    i2000 = int(np.searchsorted(grid, 2000.0))
    assert t[-1] == pytest.approx(exact[-1], rel=0.01)
    ratio = t[-1] / t[i2000]
    # the additive constant keeps this a bit above the pure-power ratio 2^0.3
    assert ratio == pytest.approx(2.0 ** 0.3, abs=0.03)


def test_gamma_fit_exact_inverse_square():
    grid = np.unique(np.rint(np.geomspace(125, 1025, 30))).astype(np.int64)
    tr = MomentTrace(grid=grid, b=np.zeros(grid.size), b2=grid.astype(float) ** -2.0)
    fit = gamma_fit([tr, tr])
    assert fit.gamma_med == pytest.approx(2.0, abs=1e-9)
    assert fit.gammas == pytest.approx((2.0, 2.0), abs=1e-9)
    g, rescaled = fit.rescaled[0]
    np.testing.assert_allclose(rescaled, 1.0, atol=1e-9)
    np.testing.assert_array_equal(g, grid)


def test_gamma_fit_validation():
    with pytest.raises(DataError, match="no traces"):
        gamma_fit([])
    grid = np.array([10, 20, 30, 40])
    flat = MomentTrace(grid=grid, b=np.zeros(4), b2=np.zeros(4), rollout_id=7)
    with pytest.raises(DataError, match="rollout 7"):
        gamma_fit([flat])


def test_diagnose_smoke():
    cfg = RolloutConfig(n0=25, n_end=200, seed=5)
    report = diagnose(_urn_rule(), cfg, rollouts=5, tail_count=20)
    assert report.grid[0] == 25 and report.grid[-1] == 200
    assert np.all(np.diff(report.grid) > 0)
    # exact martingale: every probed b is rounding noise
    assert float(report.mean_abs_b.max()) < 1e-12
    assert report.flags["qm_plausible"] is False  # floored series fits flat
    assert report.flags["floored_points"] > 0
    assert report.beta_hat == pytest.approx(0.0, abs=1e-6)
    assert report.gamma_med == pytest.approx(2.0, abs=0.6)
    assert np.all(report.mean_b2 > 0.0)
    assert np.all(np.diff(report.s_trace) >= -1e-15)
    assert np.all(np.diff(report.t_trace) >= -1e-15)
    assert len(report.traces) == 5

    payload = report.to_json()
    assert set(payload) == {
        "beta_hat", "ci", "gamma_med", "grid", "mean_abs_b", "mean_b2",
        "S_trace", "T_trace", "flags",
    }
    assert payload["ci"][0] <= payload["beta_hat"] <= payload["ci"][1]

    rows = list(trace_csv_rows(report.traces))
    assert len(rows) == 5 * report.grid.size
    rid, n, b, b2 = rows[0]
    assert rid == 0 and n == 25
    assert isinstance(b, float) and isinstance(b2, float)


def test_diagnose_workers_reproduce_serial():
    cfg = RolloutConfig(n0=25, n_end=150, seed=8)
    serial = diagnose(_urn_rule(), cfg, rollouts=4, tail_count=10)
    threaded = diagnose(_urn_rule(), cfg, rollouts=4, tail_count=10, workers=3)
    np.testing.assert_array_equal(serial.grid, threaded.grid)
    np.testing.assert_allclose(serial.mean_abs_b, threaded.mean_abs_b, atol=0.0)
    np.testing.assert_allclose(serial.mean_b2, threaded.mean_b2, atol=0.0)
    assert serial.beta_hat == threaded.beta_hat


def test_diagnose_requires_rollouts():
    with pytest.raises(DataError):
        diagnose(_urn_rule(), RolloutConfig(), rollouts=0)
