"""Quasi-martingale diagnostics for one-step predictive rules.

A rule is rolled out under its own predictive law from a small seed context;
at probe prefix lengths we compute the exact conditional moments of the next
increment at a fixed query point,

    b_n  = E[ Delta_{n+1} | Z_{1:n} ],      b'_n = E[ Delta_{n+1}^2 | Z_{1:n} ],

by enumerating every covariate support point and both labels. Power-law fits
of E|b_n| and of the per-rollout b'_n traces, plus trapezoidal partial sums,
summarize how fast the drift dies off and whether the root-n rescaling is
plausible for the rule at hand.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .data import ContextTable, QuerySpec, TaskKind
from .dgps import DgpSpec, sample_dgp
from .errors import DataError, RuleError
from .rules import PredictiveRule, degenerate_fallback

B_FLOOR = 1e-13


def tail_grid(n0: int, n_end: int, count: int = 100) -> np.ndarray:
    """Geometrically spaced integer prefix lengths in [n0+100, n_end]."""
    start = n0 + 100
    if start > n_end:
        raise DataError(f"tail grid needs n_end >= {start}, got {n_end}")
    g = np.unique(np.rint(np.geomspace(start, n_end, count)).astype(np.int64))
    return g


@dataclass(frozen=True)
class RolloutConfig:
    """How to seed and extend a self-rollout of a binary rule."""

    n0: int = 25
    n_end: int = 1025
    support: tuple = (-1.0, 0.0, 1.0, 2.0)
    support_probs: tuple | None = None
    query_x: float = 0.0
    seed: int = 0
    init_dgp: DgpSpec | None = None
    init_context: ContextTable | None = None
    # logistic law used to label the initial covariates when no DGP is given
    init_coef: float = 2.0
    init_intercept: float = -0.5

    def __post_init__(self):
        if self.n0 < 2:
            raise DataError("n0 must be >= 2")
        if self.n_end < self.n0:
            raise DataError("n_end must be >= n0")
        if not self.support:
            raise DataError("covariate support is empty")
        if not np.all(np.isfinite(np.asarray(self.support, dtype=np.float64))):
            raise DataError("covariate support must be finite")
        probs = self.probs
        if probs.shape[0] != len(self.support):
            raise DataError("one probability per support point required")
        if np.any(probs < 0.0) or abs(float(probs.sum()) - 1.0) > 1e-9:
            raise DataError("support probabilities must be >= 0 and sum to 1")

    @property
    def probs(self) -> np.ndarray:
        if self.support_probs is None:
            return np.full(len(self.support), 1.0 / len(self.support))
        return np.asarray(self.support_probs, dtype=np.float64)


@dataclass(frozen=True)
class MomentTrace:
    """Exact moment values for one rollout along a probe grid."""

    grid: np.ndarray
    b: np.ndarray
    b2: np.ndarray
    rollout_id: int = 0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.float64)
        b2 = np.asarray(self.b2, dtype=np.float64)
        if not (grid.shape == b.shape == b2.shape):
            raise DataError("grid, b, b2 must have matching lengths")
        if grid.size and np.any(np.diff(grid) <= 0):
            raise DataError("probe grid must be strictly increasing")
        if np.any(b2 < -1e-15):
            raise DataError("second moments must be nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b2", np.maximum(b2, 0.0))


class _Walker:
    """Incremental predictive access along a growing binary context."""

    def __init__(self, rule: PredictiveRule, context: ContextTable, query_x: float):
        self.rule = rule
        self.q_star = QuerySpec(np.asarray([[float(query_x)]]), (1,))
        self.fast = hasattr(rule, "_fit") and hasattr(rule, "_update_state")
        if self.fast:
            self.state = rule._fit(context)
            self.table = None
        else:
            self.state = None
            self.table = context
        self.n = context.n

    def advance(self, x: float, y: int):
        if self.fast:
            self.state = self.rule._update_state(self.state, x, y)
        else:
            self.table = self.table.append_row([x], y)
        self.n += 1

    def _values(self, table: ContextTable, queries: QuerySpec) -> np.ndarray:
        if self.rule.substitutes_degenerate:
            sub = degenerate_fallback(table, queries, table.task)
            if sub is not None:
                return sub.values
        return self.rule.predict(table, queries).values

    def p1(self, x: float) -> float:
        """Pr(Y = 1 | x) under the current prefix."""
        if self.fast:
            return float(self.rule.label_distribution(self.state, x)[1])
        q = QuerySpec(np.asarray([[float(x)]]), (1,))
        return float(self._values(self.table, q)[0])

    def value_at_query(self) -> float:
        if self.fast:
            return float(self.rule._predict_state(self.state, self.q_star)[0])
        return float(self._values(self.table, self.q_star)[0])

    def value_after(self, x: float, y: int) -> float:
        """Predictive at the query point were (x, y) appended."""
        if self.fast:
            st = self.rule._update_state(self.state, x, y)
            return float(self.rule._predict_state(st, self.q_star)[0])
        return float(self._values(self.table.append_row([x], y), self.q_star)[0])


def _initial_context(cfg: RolloutConfig, rng: np.random.Generator) -> ContextTable:
    if cfg.init_context is not None:
        return cfg.init_context
    support = np.asarray(cfg.support, dtype=np.float64)
    for _ in range(1000):
        if cfg.init_dgp is not None:
            table = sample_dgp(cfg.init_dgp, cfg.n0, int(rng.integers(2 ** 31)))
        else:
            x = rng.choice(support, size=cfg.n0, p=cfg.probs)
            p = 1.0 / (1.0 + np.exp(-(cfg.init_coef * x + cfg.init_intercept)))
            y = (rng.random(cfg.n0) < p).astype(np.int64)
            table = ContextTable(x[:, None], y, TaskKind.binary())
        if len(set(table.ys.tolist())) == 2:
            return table
    raise DataError("could not draw an initial context containing both classes")


def rollout(rule: PredictiveRule, cfg: RolloutConfig) -> ContextTable:
    """Extend an initial context to n_end by the rule's own one-step law."""
    if not rule.supports(TaskKind.binary()):
        raise RuleError(f"rule {rule.rule_id!r} does not support binary classification")
    rng = stream(cfg.seed, "rollout")
    table = _initial_context(cfg, rng)
    if table.n != cfg.n0:
        raise DataError(f"initial context has {table.n} rows, expected n0={cfg.n0}")
    if cfg.n_end == cfg.n0:
        return table
    walker = _Walker(rule, table, cfg.query_x)
    support = np.asarray(cfg.support, dtype=np.float64)
    xs_new = rng.choice(support, size=cfg.n_end - cfg.n0, p=cfg.probs)
    us = rng.random(cfg.n_end - cfg.n0)
    new_x, new_y = [], []
    for x, u in zip(xs_new, us):
        y = int(u < walker.p1(float(x)))
        new_x.append(float(x))
        new_y.append(y)
        walker.advance(float(x), y)
    xs = np.concatenate([table.xs, np.asarray(new_x)[:, None]])
    ys = np.concatenate([table.ys, np.asarray(new_y, dtype=np.int64)])
    return ContextTable(xs, ys, TaskKind.binary())


def conditional_moments(rule, prefix: ContextTable, query_x: float, support,
                        support_probs=None) -> tuple[float, float]:
    """Exact E[Delta | prefix] and E[Delta^2 | prefix] at the query point.

    Enumerates each support point and both labels, refits on the augmented
    prefix, and averages the one-step change in the query-point predictive
    under the rule's own joint law for (X, Y).
    """
    if prefix.task.kind != "binary":
        raise DataError("conditional moments require a binary task")
    support = np.asarray(support, dtype=np.float64)
    if support.ndim != 1 or support.size == 0 or not np.all(np.isfinite(support)):
        raise DataError("support must be a nonempty finite 1-d set")
    probs = (np.full(support.size, 1.0 / support.size) if support_probs is None
             else np.asarray(support_probs, dtype=np.float64))
    walker = _Walker(rule, prefix, query_x)
    return _moments_from_walker(walker, support, probs)


def _moments_from_walker(walker: _Walker, support: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    g_star = walker.value_at_query()
    b = 0.0
    b2 = 0.0
    for xj, wj in zip(support, probs):
        p1 = walker.p1(float(xj))
        for y, py in ((0, 1.0 - p1), (1, p1)):
            if py == 0.0:
                continue
            d = walker.value_after(float(xj), y) - g_star
            b += wj * py * d
            b2 += wj * py * d * d
    return b, b2


@dataclass(frozen=True)
class PowerLawFit:
    """OLS fit of values ~ C * n^(-exponent) on log-log axes."""

    amplitude: float
    exponent: float
    ci_low: float
    ci_high: float
    stderr: float


def power_law_fit(ns, values) -> PowerLawFit:
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if ns.shape != values.shape or ns.ndim != 1:
        raise DataError("ns and values must be matching 1-d arrays")
    if ns.size < 3:
        raise DataError("power-law fit needs at least 3 points")
    if np.any(values <= 0.0) or np.any(ns <= 0.0):
        raise DataError("power-law fit needs strictly positive ns and values")
    lx = np.log(ns)
    ly = np.log(values)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if sxx <= 0.0:
        raise DataError("degenerate design: all ns equal")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    rss = float(np.sum(resid ** 2))
    se = math.sqrt(max(rss, 0.0) / (ns.size - 2) / sxx)
    exponent = -slope
    return PowerLawFit(
        amplitude=math.exp(intercept),
        exponent=exponent,
        ci_low=exponent - 1.96 * se,
        ci_high=exponent + 1.96 * se,
        stderr=se,
    )


def floor_values(values, floor: float = B_FLOOR) -> tuple[np.ndarray, int]:
    """Clamp values below the numerical floor; report how many were touched."""
    v = np.asarray(values, dtype=np.float64)
    n_floored = int(np.sum(v < floor))
    return np.maximum(v, floor), n_floored


def partial_sums(grid, values, weighted: bool = False) -> np.ndarray:
    """Trapezoidal running sums over a sparse integer grid.

    Approximates S(n) = sum_{m<=n} v_m (or T with a sqrt(m) weight) so that a
    unit-spaced grid reproduces the plain sum exactly: the trapezoid drops half
    of each endpoint, which the correction term restores.
    """
    grid = np.asarray(grid, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if grid.shape != v.shape or grid.ndim != 1 or grid.size == 0:
        raise DataError("grid and values must be matching nonempty 1-d arrays")
    if np.any(np.diff(grid) <= 0):
        raise DataError("grid must be strictly increasing")
    if weighted:
        v = v * np.sqrt(grid)
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(grid))])
    return inner + 0.5 * (v[0] + v)


@dataclass(frozen=True)
class GammaFit:
    """Per-rollout second-moment decay exponents and their median."""

    gammas: tuple
    gamma_med: float
    rescaled: tuple  # one (grid, n^gamma_med * b2) pair per trace


def gamma_fit(traces) -> GammaFit:
    traces = list(traces)
    if not traces:
        raise DataError("no traces to fit")
    gammas = []
    for tr in traces:
        keep = tr.b2 > 0.0
        if int(keep.sum()) < 3:
            raise DataError(f"rollout {tr.rollout_id}: fewer than 3 positive b2 points")
        gammas.append(power_law_fit(tr.grid[keep], tr.b2[keep]).exponent)
    med = float(np.median(gammas))
    rescaled = tuple(
        (tr.grid.copy(), tr.grid.astype(np.float64) ** med * tr.b2) for tr in traces
    )
    return GammaFit(gammas=tuple(gammas), gamma_med=med, rescaled=rescaled)


@dataclass(frozen=True)
class DiagnosticsReport:
    grid: np.ndarray
    mean_abs_b: np.ndarray
    mean_b2: np.ndarray
    beta_hat: float
    beta_ci: tuple
    gamma_med: float
    gammas: tuple
    s_trace: np.ndarray
    t_trace: np.ndarray
    flags: dict
    traces: tuple = field(repr=False, default=())

    def to_json(self) -> dict:
        return {
            "beta_hat": self.beta_hat,
            "ci": list(self.beta_ci),
            "gamma_med": self.gamma_med,
            "grid": self.grid.tolist(),
            "mean_abs_b": self.mean_abs_b.tolist(),
            "mean_b2": self.mean_b2.tolist(),
            "S_trace": self.s_trace.tolist(),
            "T_trace": self.t_trace.tolist(),
            "flags": dict(self.flags),
        }


def _probe_grid(cfg: RolloutConfig, tail_count: int) -> np.ndarray:
    early_stop = min(cfg.n0 + 100, cfg.n_end)
    early = np.arange(cfg.n0, early_stop + 1, 5, dtype=np.int64)
    if cfg.n_end >= cfg.n0 + 100:
        tail = tail_grid(cfg.n0, cfg.n_end, tail_count)
    else:
        tail = np.asarray([cfg.n_end], dtype=np.int64)
    return np.unique(np.concatenate([early, tail]))


def _one_rollout_trace(rule, cfg: RolloutConfig, grid: np.ndarray, rid: int) -> MomentTrace:
    table = rollout(rule, cfg)
    support = np.asarray(cfg.support, dtype=np.float64)
    probs = cfg.probs
    walker = _Walker(rule, table.head(int(grid[0])), cfg.query_x)
    bs, b2s = [], []
    pos = int(grid[0])
    for n in grid:
        n = int(n)
        while pos < n:
            walker.advance(float(table.xs[pos, 0]), table.ys[pos].item())
            pos += 1
        b, b2 = _moments_from_walker(walker, support, probs)
        bs.append(b)
        b2s.append(b2)
    return MomentTrace(grid=grid, b=np.asarray(bs), b2=np.asarray(b2s), rollout_id=rid)


def diagnose(rule, cfg: RolloutConfig, rollouts: int = 100, tail_count: int = 100,
             workers: int | None = None) -> DiagnosticsReport:
    """Run rollouts, probe exact moments, fit decay rates, flag plausibility."""
    if rollouts < 1:
        raise DataError("need at least one rollout")
    grid = _probe_grid(cfg, tail_count)
    configs = [
        RolloutConfig(
            n0=cfg.n0, n_end=cfg.n_end, support=cfg.support,
            support_probs=cfg.support_probs, query_x=cfg.query_x,
            seed=int(stream(cfg.seed, "rollout-seed", r).integers(2 ** 62)),
            init_dgp=cfg.init_dgp, init_context=cfg.init_context,
            init_coef=cfg.init_coef, init_intercept=cfg.init_intercept,
        )
        for r in range(rollouts)
    ]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(
                lambda rc: _one_rollout_trace(rule, rc[1], grid, rc[0]),
                enumerate(configs),
            ))
    else:
        traces = [_one_rollout_trace(rule, rc, grid, r) for r, rc in enumerate(configs)]

    mean_abs_b = np.mean([np.abs(tr.b) for tr in traces], axis=0)
    mean_b2 = np.mean([tr.b2 for tr in traces], axis=0)

    fit_mask = grid >= cfg.n0 + 100
    if int(fit_mask.sum()) < 3:
        fit_mask = np.ones_like(grid, dtype=bool)
    floored_b, n_floored = floor_values(mean_abs_b[fit_mask])
    beta = power_law_fit(grid[fit_mask], floored_b)

    tail_traces = [
        MomentTrace(tr.grid[fit_mask], tr.b[fit_mask], tr.b2[fit_mask], tr.rollout_id)
        for tr in traces
    ]
    gamma = gamma_fit(tail_traces)

    s_trace = partial_sums(grid, mean_abs_b)
    t_trace = partial_sums(grid, mean_abs_b, weighted=True)
    flags = {
        "qm_plausible": bool(beta.exponent > 1.0),
        "rootn_qm_plausible": bool(beta.exponent > 1.5),
        "floored_points": n_floored,
    }
    return DiagnosticsReport(
        grid=grid,
        mean_abs_b=mean_abs_b,
        mean_b2=mean_b2,
        beta_hat=beta.exponent,
        beta_ci=(beta.ci_low, beta.ci_high),
        gamma_med=gamma.gamma_med,
        gammas=gamma.gammas,
        s_trace=s_trace,
        t_trace=t_trace,
        flags=flags,
        traces=tuple(traces),
    )


TRACE_CSV_COLUMNS = ("rollout_id", "n", "b", "b2")


def trace_csv_rows(traces):
    """Flat rows for plotting the per-rollout moment traces."""
    for tr in traces:
        for n, b, b2 in zip(tr.grid, tr.b, tr.b2):
            yield (tr.rollout_id, int(n), float(b), float(b2))
