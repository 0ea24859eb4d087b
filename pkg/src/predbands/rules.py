"""Predictive rules: the black-box contract and exactly-Bayesian baselines.

A rule maps (context prefix, queries) to a predictive probability vector.
The built-in conjugate rules bin the covariate and run standard conjugate
updates per bin, so their limiting posteriors are available in closed form:
they are the oracles every estimator in this package is checked against.

The conjugate rules answer any prefix exactly (the prior handles empty bins
and one-class prefixes), so they opt out of the degenerate-prefix
substitution that wraps external rules; see ``substitutes_degenerate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from urllib.parse import parse_qsl

import numpy as np
from scipy import stats

from .data import (
    BINARY,
    MULTICLASS,
    REGRESSION_CDF,
    ContextTable,
    PredictiveVector,
    QuerySpec,
    TaskKind,
)
from .errors import DataError, UsageError
from .special import normal_cdf, std_normal_quantile


@dataclass(frozen=True)
class Binning:
    """Covariate partition: half-open intervals [e_i, e_{i+1}) or exact points.

    Interval mode takes the sorted edge list; the right edge of the last bin
    belongs to it. Discrete mode matches x exactly against the support.
    Both apply to 1-d covariates.
    """

    edges: tuple[float, ...] | None = None
    support: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.edges is None) == (self.support is None):
            raise DataError("binning needs exactly one of edges or support")
        if self.edges is not None:
            e = tuple(float(v) for v in self.edges)
            if len(e) < 2 or not all(a < b for a, b in zip(e, e[1:])):
                raise DataError("bin edges must be strictly increasing, length >= 2")
            object.__setattr__(self, "edges", e)
        else:
            s = tuple(sorted(float(v) for v in self.support))
            if len(set(s)) != len(s) or not s:
                raise DataError("support points must be distinct and nonempty")
            object.__setattr__(self, "support", s)  # sorted: bin index = rank

    @classmethod
    def intervals(cls, edges: Sequence[float]) -> "Binning":
        return cls(edges=tuple(edges))

    @classmethod
    def discrete(cls, support: Sequence[float]) -> "Binning":
        return cls(support=tuple(support))

    @classmethod
    def single(cls) -> "Binning":
        return cls(edges=(-math.inf, math.inf))

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1 if self.edges is not None else len(self.support)

    def assign(self, xs: np.ndarray) -> np.ndarray:
        """Bin index for each row of an (n, d) covariate array (d must be 1)."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        if xs.shape[1] != 1:
            raise DataError("binned conjugate rules require 1-d covariates")
        x = xs[:, 0]
        if self.edges is not None:
            e = np.asarray(self.edges)
            idx = np.searchsorted(e, x, side="right") - 1
            idx[x == e[-1]] = len(e) - 2  # closed right edge of the last bin
            bad = (idx < 0) | (idx > len(e) - 2)
        else:
            s = np.asarray(self.support)
            idx = np.searchsorted(s, x)
            idx = np.clip(idx, 0, len(s) - 1)
            bad = s[idx] != x
        if np.any(bad):
            j = int(np.where(bad)[0][0])
            raise DataError(f"covariate {x[j]!r} falls outside every configured bin")
        return idx.astype(np.int64)

    def describe(self) -> str:
        if self.edges is not None:
            return "bins=" + ",".join(f"{v:g}" for v in self.edges)
        return "support=" + ",".join(f"{v:g}" for v in self.support)


class PredictiveRule:
    """Contract every rule satisfies.

    ``predict`` must be a pure function of (prefix, queries, configuration,
    seed); outputs are validated PredictiveVectors. ``substitutes_degenerate``
    says whether the trajectory engine should answer degenerate prefixes with
    observed statistics instead of calling the rule; built-in conjugates
    decline because their prior already covers those prefixes exactly.
    """

    task_kinds: tuple[str, ...] = ()
    stateless = True
    has_prior = True
    substitutes_degenerate = False
    max_in_flight = 1
    rule_id = "rule"

    def supports(self, task: TaskKind) -> bool:
        return task.kind in self.task_kinds

    def predict(self, prefix: ContextTable, queries: QuerySpec) -> PredictiveVector:
        raise NotImplementedError

    def prior_predict(self, queries: QuerySpec) -> PredictiveVector:
        raise NotImplementedError


def degenerate_fallback(
    prefix: ContextTable, queries: QuerySpec, task: TaskKind
) -> PredictiveVector | None:
    """Observed-statistics answer for prefixes lacking label diversity.

    Classification with a single observed class c: probability 1 for c.
    Regression with fewer than two unique responses: the marginal empirical
    CDF of y_{1:k}, ignoring x. Diverse prefixes return None and the caller
    invokes the real rule.
    """
    ys = prefix.ys
    if task.is_classification:
        first = ys[0]
        if np.any(ys != first):
            return None
        vals = np.array([1.0 if int(e) == int(first) else 0.0 for e in queries.events])
        return PredictiveVector(vals, prefix.n)
    if np.unique(ys).size >= 2:
        return None
    vals = np.array([float(np.mean(ys <= float(t))) for t in queries.events])
    return PredictiveVector(vals, prefix.n)


@dataclass(frozen=True)
class BetaPosterior:
    """Exact limiting posterior Beta(a, b) of a per-bin success probability."""

    a: float
    b: float

    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def var(self) -> float:
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1.0))

    def cdf(self, v) -> float:
        return stats.beta.cdf(v, self.a, self.b)

    def ppf(self, q) -> float:
        return stats.beta.ppf(q, self.a, self.b)

    def interval(self, alpha: float) -> tuple[float, float]:
        return float(self.ppf(alpha / 2.0)), float(self.ppf(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class NormalCdfPosterior:
    """Exact posterior of the limiting CDF value V = Phi((t - mu)/sigma).

    mu carries the Normal posterior N(mu_n, tau_n^2) of the bin mean; V is a
    monotone (decreasing) transform of mu, so its quantiles are closed-form.
    """

    mu: float
    tau_sq: float
    sigma_sq: float
    t: float

    def mean(self) -> float:
        return float(normal_cdf((self.t - self.mu) / math.sqrt(self.sigma_sq + self.tau_sq)))

    def var(self) -> float:
        # Gauss-Hermite over the Normal posterior of mu
        nodes, weights = np.polynomial.hermite.hermgauss(101)
        mu = self.mu + math.sqrt(2.0 * self.tau_sq) * nodes
        v = normal_cdf((self.t - mu) / math.sqrt(self.sigma_sq))
        ex2 = float(np.sum(weights * v * v) / math.sqrt(math.pi))
        m = self.mean()
        return max(ex2 - m * m, 0.0)

    def cdf(self, v) -> float:
        if v <= 0.0:
            return 0.0
        if v >= 1.0:
            return 1.0
        tau = math.sqrt(self.tau_sq)
        sig = math.sqrt(self.sigma_sq)
        return float(normal_cdf((self.mu - self.t + sig * std_normal_quantile(v)) / tau))

    def ppf(self, q) -> float:
        tau = math.sqrt(self.tau_sq)
        sig = math.sqrt(self.sigma_sq)
        mu_hi = self.mu + tau * std_normal_quantile(1.0 - q)
        return float(normal_cdf((self.t - mu_hi) / sig))

    def interval(self, alpha: float) -> tuple[float, float]:
        return self.ppf(alpha / 2.0), self.ppf(1.0 - alpha / 2.0)


def _per_bin(value, n_bins: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n_bins, float(arr))
    if arr.shape != (n_bins,):
        raise DataError(f"{name} must be scalar or length {n_bins}")
    if np.any(arr <= 0.0):
        raise DataError(f"{name} must be positive")
    return arr


class BetaBernoulliRule(PredictiveRule):
    """Per-bin Beta-Bernoulli conjugate rule for binary tasks.

    Predictive for class 1 in bin b after s successes out of c rows:
    (alpha0 + s) / (alpha0 + beta0 + c). Exact limit posterior
    Beta(alpha0 + s, beta0 + f).
    """

    task_kinds = (BINARY,)

    def __init__(self, binning: Binning, alpha0=1.0, beta0=1.0):
        self.binning = binning
        self.alpha0 = _per_bin(alpha0, binning.n_bins, "alpha0")
        self.beta0 = _per_bin(beta0, binning.n_bins, "beta0")
        self.rule_id = (
            f"beta-bernoulli({binning.describe()},"
            f"alpha0={self.alpha0[0]:g},beta0={self.beta0[0]:g})"
        )

    # -- incremental posterior state: (counts, successes) per bin
    def _fit(self, context: ContextTable):
        b = self.binning.assign(context.xs)
        B = self.binning.n_bins
        c = np.bincount(b, minlength=B).astype(np.float64)
        s = np.bincount(b, weights=(context.ys == 1).astype(np.float64), minlength=B)
        return c, s

    def _update_state(self, state, x, y):
        c, s = state
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        c2 = c.copy()
        s2 = s.copy()
        c2[b] += 1.0
        if int(y) == 1:
            s2[b] += 1.0
        return c2, s2

    def _g(self, state) -> np.ndarray:
        c, s = state
        return (self.alpha0 + s) / (self.alpha0 + self.beta0 + c)

    def _predict_state(self, state, queries: QuerySpec) -> np.ndarray:
        qb = self.binning.assign(queries.xs)
        g = self._g(state)[qb]
        ev = np.asarray(queries.events, dtype=np.int64)
        return np.where(ev == 1, g, 1.0 - g)

    def predict(self, prefix: ContextTable, queries: QuerySpec) -> PredictiveVector:
        queries.validate_for(TaskKind.binary())
        return PredictiveVector(self._predict_state(self._fit(prefix), queries), prefix.n)

    def prior_predict(self, queries: QuerySpec) -> PredictiveVector:
        B = self.binning.n_bins
        return PredictiveVector(
            self._predict_state((np.zeros(B), np.zeros(B)), queries), 0
        )

    def prefix_values(self, context: ContextTable, queries: QuerySpec) -> np.ndarray:
        """All prefix predictions at once: rows k = 0..n, columns the queries."""
        n = context.n
        b = self.binning.assign(context.xs)
        qb = self.binning.assign(queries.xs)
        ev = np.asarray(queries.events, dtype=np.int64)
        out = np.empty((n + 1, queries.m))
        y1 = (context.ys == 1).astype(np.float64)
        for j in range(queries.m):
            inb = (b == qb[j]).astype(np.float64)
            c = np.concatenate([[0.0], np.cumsum(inb)])
            s = np.concatenate([[0.0], np.cumsum(y1 * inb)])
            g = (self.alpha0[qb[j]] + s) / (self.alpha0[qb[j]] + self.beta0[qb[j]] + c)
            out[:, j] = g if ev[j] == 1 else 1.0 - g
        return out

    def label_distribution(self, state, x) -> np.ndarray:
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        g = float(self._g(state)[b])
        return np.array([1.0 - g, g])

    def limit_posterior(self, context: ContextTable, query) -> BetaPosterior:
        x, event = query
        c, s = self._fit(context)
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        a_post = self.alpha0[b] + s[b]
        b_post = self.beta0[b] + (c[b] - s[b])
        if int(event) == 1:
            return BetaPosterior(float(a_post), float(b_post))
        return BetaPosterior(float(b_post), float(a_post))


class DirichletCategoricalRule(PredictiveRule):
    """Per-bin Dirichlet-categorical conjugate rule for multiclass tasks."""

    task_kinds = (MULTICLASS, BINARY)

    def __init__(self, binning: Binning, n_classes: int, alpha0=1.0):
        if n_classes < 2:
            raise DataError("n_classes must be >= 2")
        self.binning = binning
        self.n_classes = int(n_classes)
        a = np.asarray(alpha0, dtype=np.float64)
        if a.ndim == 0:
            a = np.full((binning.n_bins, self.n_classes), float(a))
        elif a.ndim == 1:
            if a.shape != (self.n_classes,):
                raise DataError(f"alpha0 vector must have length {self.n_classes}")
            a = np.tile(a, (binning.n_bins, 1))
        if a.shape != (binning.n_bins, self.n_classes) or np.any(a <= 0.0):
            raise DataError("alpha0 must be positive, shape (n_bins, n_classes)")
        self.alpha0 = a
        self.rule_id = f"dirichlet({binning.describe()},K={self.n_classes})"

    def _fit(self, context: ContextTable):
        b = self.binning.assign(context.xs)
        counts = np.zeros((self.binning.n_bins, self.n_classes))
        np.add.at(counts, (b, context.ys.astype(np.int64)), 1.0)
        return counts

    def _update_state(self, state, x, y):
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        c2 = state.copy()
        c2[b, int(y)] += 1.0
        return c2

    def _predict_state(self, state, queries: QuerySpec) -> np.ndarray:
        qb = self.binning.assign(queries.xs)
        ev = np.asarray(queries.events, dtype=np.int64)
        num = self.alpha0[qb, ev] + state[qb, ev]
        den = self.alpha0[qb].sum(axis=1) + state[qb].sum(axis=1)
        return num / den

    def predict(self, prefix: ContextTable, queries: QuerySpec) -> PredictiveVector:
        queries.validate_for(TaskKind.multiclass(self.n_classes))
        return PredictiveVector(self._predict_state(self._fit(prefix), queries), prefix.n)

    def prior_predict(self, queries: QuerySpec) -> PredictiveVector:
        z = np.zeros((self.binning.n_bins, self.n_classes))
        return PredictiveVector(self._predict_state(z, queries), 0)

    def prefix_values(self, context: ContextTable, queries: QuerySpec) -> np.ndarray:
        n = context.n
        b = self.binning.assign(context.xs)
        qb = self.binning.assign(queries.xs)
        ev = np.asarray(queries.events, dtype=np.int64)
        out = np.empty((n + 1, queries.m))
        y = context.ys.astype(np.int64)
        for j in range(queries.m):
            inb = (b == qb[j]).astype(np.float64)
            hits = inb * (y == ev[j])
            c = np.concatenate([[0.0], np.cumsum(inb)])
            ck = np.concatenate([[0.0], np.cumsum(hits)])
            a0 = self.alpha0[qb[j]]
            out[:, j] = (a0[ev[j]] + ck) / (a0.sum() + c)
        return out

    def label_distribution(self, state, x) -> np.ndarray:
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        w = self.alpha0[b] + state[b]
        return w / w.sum()

    def limit_posterior(self, context: ContextTable, query) -> BetaPosterior:
        x, event = query
        counts = self._fit(context)
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        w = self.alpha0[b] + counts[b]
        k = int(event)
        return BetaPosterior(float(w[k]), float(w.sum() - w[k]))


class NormalNormalRule(PredictiveRule):
    """Per-bin Normal-Normal conjugate rule (known noise variance).

    The response in bin b is N(mu_b, sigma^2) with mu_b ~ N(mu0, tau0^2);
    the predictive CDF at threshold t is Phi((t - mu_post)/sqrt(tau_post^2
    + sigma^2)).
    """

    task_kinds = (REGRESSION_CDF,)

    def __init__(self, binning: Binning, sigma_sq, mu0=0.0, tau0_sq=100.0):
        self.binning = binning
        B = binning.n_bins
        self.sigma_sq = _per_bin(sigma_sq, B, "sigma_sq")
        self.tau0_sq = _per_bin(tau0_sq, B, "tau0_sq")
        m0 = np.asarray(mu0, dtype=np.float64)
        self.mu0 = np.full(B, float(m0)) if m0.ndim == 0 else m0.astype(np.float64)
        if self.mu0.shape != (B,):
            raise DataError(f"mu0 must be scalar or length {B}")
        self.rule_id = (
            f"normal({binning.describe()},sigma_sq={self.sigma_sq[0]:g},"
            f"mu0={self.mu0[0]:g},tau0_sq={self.tau0_sq[0]:g})"
        )

    def _fit(self, context: ContextTable):
        b = self.binning.assign(context.xs)
        B = self.binning.n_bins
        c = np.bincount(b, minlength=B).astype(np.float64)
        S = np.bincount(b, weights=context.ys, minlength=B)
        return c, S

    def _update_state(self, state, x, y):
        c, S = state
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        c2, S2 = c.copy(), S.copy()
        c2[b] += 1.0
        S2[b] += float(y)
        return c2, S2

    def _posterior(self, state):
        c, S = state
        prec = 1.0 / self.tau0_sq + c / self.sigma_sq
        tau_n_sq = 1.0 / prec
        mu_n = tau_n_sq * (self.mu0 / self.tau0_sq + S / self.sigma_sq)
        return mu_n, tau_n_sq

    def _predict_state(self, state, queries: QuerySpec) -> np.ndarray:
        qb = self.binning.assign(queries.xs)
        mu_n, tau_n_sq = self._posterior(state)
        t = np.asarray(queries.events, dtype=np.float64)
        sd = np.sqrt(tau_n_sq[qb] + self.sigma_sq[qb])
        return normal_cdf((t - mu_n[qb]) / sd)

    def predict(self, prefix: ContextTable, queries: QuerySpec) -> PredictiveVector:
        queries.validate_for(TaskKind.regression())
        return PredictiveVector(self._predict_state(self._fit(prefix), queries), prefix.n)

    def prior_predict(self, queries: QuerySpec) -> PredictiveVector:
        B = self.binning.n_bins
        return PredictiveVector(
            self._predict_state((np.zeros(B), np.zeros(B)), queries), 0
        )

    def prefix_values(self, context: ContextTable, queries: QuerySpec) -> np.ndarray:
        n = context.n
        b = self.binning.assign(context.xs)
        qb = self.binning.assign(queries.xs)
        t = np.asarray(queries.events, dtype=np.float64)
        out = np.empty((n + 1, queries.m))
        for j in range(queries.m):
            jb = qb[j]
            inb = (b == jb).astype(np.float64)
            c = np.concatenate([[0.0], np.cumsum(inb)])
            S = np.concatenate([[0.0], np.cumsum(context.ys * inb)])
            prec = 1.0 / self.tau0_sq[jb] + c / self.sigma_sq[jb]
            tau_n_sq = 1.0 / prec
            mu_n = tau_n_sq * (self.mu0[jb] / self.tau0_sq[jb] + S / self.sigma_sq[jb])
            out[:, j] = normal_cdf((t[j] - mu_n) / np.sqrt(tau_n_sq + self.sigma_sq[jb]))
        return out

    def sample_label(self, state, x, rng: np.random.Generator) -> float:
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        mu_n, tau_n_sq = self._posterior(state)
        sd = math.sqrt(tau_n_sq[b] + self.sigma_sq[b])
        return float(rng.normal(mu_n[b], sd))

    def limit_posterior(self, context: ContextTable, query) -> NormalCdfPosterior:
        x, t = query
        mu_n, tau_n_sq = self._posterior(self._fit(context))
        b = int(self.binning.assign(np.asarray([x]).reshape(1, -1))[0])
        return NormalCdfPosterior(
            float(mu_n[b]), float(tau_n_sq[b]), float(self.sigma_sq[b]), float(t)
        )


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_rule(selector: str, task: TaskKind | None = None) -> PredictiveRule:
    """Build a rule from a selector string.

    Grammar: ``builtin:beta-bernoulli?bins=-10,-5,0,5,10&alpha=1&beta=1``,
    ``builtin:dirichlet?classes=4&bins=...``, ``builtin:normal?bins=...&
    sigmasq=1&mu0=0&tau0sq=100``, ``external:<endpoint>`` where the endpoint
    is ``tcp:host:port`` or ``subprocess:<command line>``; binning accepts
    either ``bins=`` edges or ``support=`` exact points, default single bin.
    """
    kind, _, rest = selector.partition(":")
    if kind == "external":
        from .remote import Endpoint, RemoteRule

        return RemoteRule(Endpoint.parse(rest))
    if kind != "builtin":
        raise UsageError(f"unknown rule scheme {kind!r} in {selector!r}")
    name, _, query = rest.partition("?")
    opts = dict(parse_qsl(query, keep_blank_values=True)) if query else {}

    if "bins" in opts and "support" in opts:
        raise UsageError("give bins= or support=, not both")
    if "bins" in opts:
        binning = Binning.intervals(_floats(opts.pop("bins")))
    elif "support" in opts:
        binning = Binning.discrete(_floats(opts.pop("support")))
    else:
        binning = Binning.single()

    def _num(key: str, default: float) -> float:
        return float(opts.pop(key)) if key in opts else default

    if name == "beta-bernoulli":
        rule: PredictiveRule = BetaBernoulliRule(
            binning, alpha0=_num("alpha", 1.0), beta0=_num("beta", 1.0)
        )
    elif name == "dirichlet":
        k = int(_num("classes", task.n_classes if task and task.n_classes else 0))
        if k < 2:
            raise UsageError("dirichlet rule needs classes=K (or a multiclass task)")
        a0 = _floats(opts.pop("alpha0")) if "alpha0" in opts else 1.0
        rule = DirichletCategoricalRule(binning, k, alpha0=a0)
    elif name == "normal":
        rule = NormalNormalRule(
            binning,
            sigma_sq=_num("sigmasq", 1.0),
            mu0=_num("mu0", 0.0),
            tau0_sq=_num("tau0sq", 100.0),
        )
    else:
        raise UsageError(f"unknown builtin rule {name!r}")
    if opts:
        raise UsageError(f"unrecognized rule options: {', '.join(sorted(opts))}")
    return rule
