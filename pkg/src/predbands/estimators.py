"""Asymptotic covariance estimators for the predictive CLT.

Two routes to the same m x m matrix V: the trajectory estimator
V_n = (1/n) sum_k k^2 Delta_k Delta_k', built from the increments actually
observed, and the one-step-ahead estimator U_n = n^2 E[Delta_{n+1}
Delta_{n+1}' | z_{1:n}], approximated by resampling the appended covariate
from the empirical measure. They are deliberately independent code paths;
tests compare them against each other and against closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .data import ContextTable, QuerySpec
from .errors import DataError, RuleError
from .rules import PredictiveRule, degenerate_fallback
from .trajectory import Trajectory

_JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


@dataclass(frozen=True)
class CovarianceEstimate:
    """An m x m symmetric covariance estimate with its provenance."""

    matrix: np.ndarray
    n: int
    kind: str  # "vn" or "un"
    mc_samples: int | None = None
    jitter: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError("covariance matrix must be square")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
            raise DataError("covariance matrix must be symmetric to 1e-12")
        object.__setattr__(self, "matrix", m)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]


def vn(traj: Trajectory) -> CovarianceEstimate:
    """Trajectory estimator (1/n) sum_k k^2 Delta_k Delta_k'.

    The sum runs over the increments the trajectory actually holds; k is the
    global prefix index at which each increment landed, so a missing Delta_1
    (rules without a prior predictive) simply drops that term.
    """
    if traj.increments.shape[0] == 0:
        raise DataError("trajectory has no increments")
    k = traj.increment_ks.astype(np.float64)
    d = traj.increments
    mat = np.einsum("k,ki,kj->ij", k * k, d, d) / float(traj.n)
    mat = 0.5 * (mat + mat.T)
    return CovarianceEstimate(matrix=mat, n=traj.n, kind="vn")


def _predict_values(rule: PredictiveRule, table: ContextTable, queries: QuerySpec) -> np.ndarray:
    if rule.substitutes_degenerate:
        sub = degenerate_fallback(table, queries, table.task)
        if sub is not None:
            return sub.values
    return rule.predict(table, queries).values


class _StatePredictor:
    """One-step-update predictions, incremental when the rule supports it."""

    def __init__(self, rule: PredictiveRule, context: ContextTable, queries: QuerySpec):
        self.rule = rule
        self.context = context
        self.queries = queries
        self.fast = hasattr(rule, "_fit") and hasattr(rule, "_update_state")
        if self.fast:
            self.state = rule._fit(context)
            self.base = rule._predict_state(self.state, queries)
        else:
            self.state = None
            self.base = _predict_values(rule, context, queries)

    def after_append(self, x, y) -> np.ndarray:
        if self.fast:
            st = self.rule._update_state(self.state, x, y)
            return self.rule._predict_state(st, self.queries)
        return _predict_values(self.rule, self.context.append_row(x, y), self.queries)

    def label_distribution(self, x) -> np.ndarray:
        if hasattr(self.rule, "label_distribution") and self.fast:
            return self.rule.label_distribution(self.state, x)
        k = self.context.task.n_classes
        qs = QuerySpec(np.tile(np.asarray(x, dtype=np.float64).reshape(1, -1), (k, 1)),
                       tuple(range(k)))
        p = _predict_values(self.rule, self.context, qs)
        total = p.sum()
        if not 0.0 < total <= 1.0 + 1e-6:
            raise RuleError(f"rule label distribution sums to {total!r}")
        return p / total

    def sample_label(self, x, rng: np.random.Generator, threshold_grid) -> float:
        if hasattr(self.rule, "sample_label") and self.fast:
            return self.rule.sample_label(self.state, x, rng)
        if threshold_grid is None:
            raise DataError(
                "regression one-step resampling needs a threshold grid "
                "(task.thresholds or the threshold_grid argument)"
            )
        t = np.asarray(threshold_grid, dtype=np.float64)
        qs = QuerySpec(np.tile(np.asarray(x, dtype=np.float64).reshape(1, -1), (t.size, 1)),
                       tuple(t))
        cdf = _predict_values(self.rule, self.context, qs)
        # piecewise-uniform within cells; mass outside the grid sits on its ends
        u = rng.random()
        if u <= cdf[0]:
            return float(t[0])
        if u >= cdf[-1]:
            return float(t[-1])
        i = int(np.searchsorted(cdf, u, side="right")) - 1
        i = min(max(i, 0), t.size - 2)
        lo_p, hi_p = cdf[i], cdf[i + 1]
        frac = 0.0 if hi_p <= lo_p else (u - lo_p) / (hi_p - lo_p)
        return float(t[i] + frac * (t[i + 1] - t[i]))


def un(
    rule: PredictiveRule,
    context: ContextTable,
    queries: QuerySpec,
    mc_samples: int = 1000,
    seed: int = 0,
    label_mode: str = "auto",
    threshold_grid=None,
) -> CovarianceEstimate:
    """One-step-ahead estimator n^2 E[Delta_{n+1} Delta_{n+1}' | z_{1:n}].

    Each draw appends (X*, Y*) to the full context: X* uniform over the
    observed covariate rows, Y* from the rule's own predictive at X*. For
    classification the inner expectation over Y* is taken exactly
    (label_mode "exact", the default for <= 10 classes) or by sampling
    ("mc"); regression always samples Y*, exactly for rules that expose a
    predictive sampler and via a discretized CDF inversion otherwise.
    """
    if mc_samples < 1:
        raise DataError("mc_samples must be >= 1")
    if label_mode not in ("auto", "exact", "mc"):
        raise DataError(f"unknown label_mode {label_mode!r}")
    task = context.task
    queries.validate_for(task)
    n = context.n
    pred = _StatePredictor(rule, context, queries)
    base = pred.base

    rng = stream(seed, "un-covariates")
    idx = rng.integers(0, n, size=mc_samples)
    m = queries.m
    acc = np.zeros((m, m))

    if task.is_classification:
        exact = label_mode == "exact" or (label_mode == "auto" and task.n_classes <= 10)
        for i, row in enumerate(idx):
            x_star = context.xs[row]
            dist = pred.label_distribution(x_star)
            if exact:
                for y, w in enumerate(dist):
                    if w == 0.0:
                        continue
                    d = pred.after_append(x_star, y) - base
                    acc += w * np.outer(d, d)
            else:
                y = int(stream(seed, "un-label", i).choice(len(dist), p=dist / dist.sum()))
                d = pred.after_append(x_star, y) - base
                acc += np.outer(d, d)
    else:
        if threshold_grid is None and task.thresholds:
            threshold_grid = task.thresholds
        for i, row in enumerate(idx):
            x_star = context.xs[row]
            y = pred.sample_label(x_star, stream(seed, "un-label", i), threshold_grid)
            d = pred.after_append(x_star, y) - base
            acc += np.outer(d, d)

    mat = (float(n) ** 2 / mc_samples) * acc
    mat = 0.5 * (mat + mat.T)
    return CovarianceEstimate(matrix=mat, n=n, kind="un", mc_samples=mc_samples, seed=int(seed))


def _cholesky_with_jitter(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    for delta in _JITTER_LADDER:
        try:
            chol = np.linalg.cholesky(matrix + delta * np.eye(matrix.shape[0]))
            return chol, delta
        except np.linalg.LinAlgError:
            continue
    raise DataError("matrix still indefinite after maximum jitter 1e-8")


def regularize_psd(est: CovarianceEstimate) -> CovarianceEstimate:
    """Smallest jitter from {0, 1e-12, 1e-10, 1e-8} making Cholesky succeed."""
    _, delta = _cholesky_with_jitter(est.matrix)
    if delta == 0.0:
        return est
    return CovarianceEstimate(
        matrix=est.matrix + delta * np.eye(est.m),
        n=est.n,
        kind=est.kind,
        mc_samples=est.mc_samples,
        jitter=delta,
        seed=est.seed,
    )


def estimate_to_json(est: CovarianceEstimate) -> dict:
    return {
        "kind": est.kind,
        "n": est.n,
        "m": est.m,
        "matrix": [float(v) for v in est.matrix.reshape(-1)],
        "jitter": est.jitter,
        "mc_samples": est.mc_samples,
        "seed": est.seed,
    }


def estimate_from_json(doc: dict) -> CovarianceEstimate:
    m = int(doc["m"])
    return CovarianceEstimate(
        matrix=np.asarray(doc["matrix"], dtype=np.float64).reshape(m, m),
        n=int(doc["n"]),
        kind=doc["kind"],
        mc_samples=doc.get("mc_samples"),
        jitter=float(doc.get("jitter", 0.0)),
        seed=doc.get("seed"),
    )
