"""Evaluate a rule on expanding prefixes of a permuted context.

The trajectory P_1, ..., P_n (plus P_0 when the rule has a prior predictive)
and its increments Delta_k = P_k - P_{k-1} are the raw material for the
covariance estimators. Prefix evaluations are independent, so remote rules
are dispatched concurrently; built-in rules take a vectorized path.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import ContextTable, PredictiveVector, QuerySpec, permute_rows
from .errors import DataError, RuleError
from .rules import PredictiveRule, degenerate_fallback


@dataclass(frozen=True)
class Trajectory:
    """Prefix predictions at the evaluated lengths ``ks`` plus increments.

    ``values[i]`` is P_{ks[i]} at the m queries; ``increments[i]`` is
    ``values[i+1] - values[i]``, the update observed at prefix length
    ``ks[i+1]``. ``n`` is the full context length (the CLT normalizer).
    """

    values: np.ndarray      # (len(ks), m)
    increments: np.ndarray  # (len(ks)-1, m)
    ks: np.ndarray          # evaluated prefix lengths, increasing
    n: int
    permutation_seed: int
    rule_id: str
    queries: QuerySpec

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "increments", np.asarray(self.increments, dtype=np.float64))
        object.__setattr__(self, "ks", np.asarray(self.ks, dtype=np.int64))
        if self.values.shape[0] != self.ks.shape[0]:
            raise DataError("one value row per evaluated prefix length required")
        if self.increments.shape != (max(self.ks.shape[0] - 1, 0), self.values.shape[1]):
            raise DataError("increment shape inconsistent with values")

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def increment_ks(self) -> np.ndarray:
        """Prefix lengths at which each increment lands (the k in k^2 weights)."""
        return self.ks[1:]


def increments_matrix(traj: Trajectory) -> np.ndarray:
    """The Delta_k rows, re-checking the difference identity."""
    expect = np.diff(traj.values, axis=0)
    if not np.allclose(expect, traj.increments, rtol=0.0, atol=1e-12):
        raise DataError("corrupted trajectory: increments do not match value differences")
    return traj.increments


def _evaluate_prefix(rule: PredictiveRule, prefix: ContextTable, queries: QuerySpec) -> np.ndarray:
    if rule.substitutes_degenerate:
        sub = degenerate_fallback(prefix, queries, prefix.task)
        if sub is not None:
            return sub.values
    out = rule.predict(prefix, queries)
    if not isinstance(out, PredictiveVector):
        raise RuleError(f"rule {rule.rule_id!r} returned {type(out).__name__}, not a PredictiveVector")
    if out.m != queries.m:
        raise RuleError(f"rule {rule.rule_id!r} returned {out.m} values for {queries.m} queries")
    return out.values


def build_trajectory(
    rule: PredictiveRule,
    context: ContextTable,
    queries: QuerySpec,
    seed: int,
    stride: int = 1,
    workers: int | None = None,
) -> Trajectory:
    """Permute the context with ``seed`` and evaluate every prefix.

    ``stride`` > 1 evaluates a sub-grid k in {1, 1+s, ...} u {n} with the
    increments taken between consecutive evaluated prefixes; an approximation
    for expensive rules, documented as such. Workers default to the rule's
    in-flight budget.
    """
    if context.n < 2:
        raise DataError("context shorter than 2 rows cannot produce increments")
    if not rule.supports(context.task):
        raise RuleError(f"rule {rule.rule_id!r} does not support task {context.task.kind!r}")
    if stride < 1:
        raise DataError("stride must be >= 1")
    queries.validate_for(context.task)
    permuted = permute_rows(context, seed)
    n = permuted.n

    ks = list(range(1, n + 1, stride))
    if ks[-1] != n:
        ks.append(n)
    if rule.has_prior:
        ks = [0] + ks

    if hasattr(rule, "prefix_values"):
        all_vals = rule.prefix_values(permuted, queries)  # rows k = 0..n
        values = all_vals[np.asarray(ks)]
    else:
        jobs = [k for k in ks if k > 0]
        n_workers = workers if workers is not None else getattr(rule, "max_in_flight", 1)
        if n_workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                rows = list(
                    pool.map(lambda k: _evaluate_prefix(rule, permuted.head(k), queries), jobs)
                )
        else:
            rows = [_evaluate_prefix(rule, permuted.head(k), queries) for k in jobs]
        if rule.has_prior:
            rows = [rule.prior_predict(queries).values] + rows
        values = np.vstack(rows)

    if not np.all(np.isfinite(values)):
        raise RuleError("rule produced non-finite prediction")
    if values.min() < 0.0 or values.max() > 1.0:
        raise RuleError("rule produced prediction outside [0, 1]")
    increments = np.diff(values, axis=0)
    return Trajectory(
        values=values,
        increments=increments,
        ks=np.asarray(ks, dtype=np.int64),
        n=n,
        permutation_seed=int(seed),
        rule_id=rule.rule_id,
        queries=queries,
    )


def trajectory_csv_rows(traj: Trajectory):
    """Rows (k, query_index, value, delta) for the dump format; delta is empty
    at the first evaluated prefix."""
    rows = []
    for i, k in enumerate(traj.ks):
        for j in range(traj.m):
            delta = "" if i == 0 else repr(float(traj.increments[i - 1, j]))
            rows.append((int(k), j, repr(float(traj.values[i, j])), delta))
    return rows
