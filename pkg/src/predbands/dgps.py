"""Synthetic data-generating processes with exact ground-truth targets.

Seven coverage DGPs on x ~ Uniform(-10, 10) (optionally with a covariate gap),
two extra binned Bernoulli DGPs used by the conjugate-oracle experiments, and
three small classification generators (1-d logistic, two moons, three-class
spirals). Every coverage DGP exposes its true conditional CDF or class mass
in closed form, which is what the bands are scored against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .data import ContextTable, TaskKind
from .errors import DataError
from .special import normal_cdf

DGP_NAMES = (
    "linear",
    "polynomial",
    "dependent",
    "sine",
    "poisson",
    "probit",
    "categorical",
    "bernoulli-bins",
    "linear-probit-bins",
    "logreg1d",
    "moons",
    "spirals",
)

_REGRESSION = ("linear", "polynomial", "dependent", "sine", "poisson")
_DEFAULT_THRESHOLD = {"linear": 0.0, "polynomial": 0.0, "dependent": 0.0, "sine": 0.0, "poisson": 2.0}

_DEFAULT_PARAMS: dict[str, dict] = {
    "bernoulli-bins": {"edges": (-10.0, -5.0, 0.0, 5.0, 10.0), "probs": (0.2, 0.4, 0.6, 0.8)},
    "linear-probit-bins": {"edges": (-10.0, -5.0, 0.0, 5.0, 10.0)},
    "logreg1d": {"beta": 0.25, "beta0": -0.5, "mean": 1.5, "sd": 3.0},
    "moons": {"noise": 0.1},
    "spirals": {"noise": 0.1, "n_classes": 3},
}


@dataclass(frozen=True)
class DgpSpec:
    """A named generator with its parameters; defaults are the studied values."""

    name: str
    params: dict = field(default_factory=dict)
    gap: bool = False
    threshold: float | None = None

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise DataError(f"unknown DGP {self.name!r}")
        p = dict(_DEFAULT_PARAMS.get(self.name, {}))
        p.update(self.params)
        if p.get("noise", 0.0) < 0.0:
            raise DataError("noise must be >= 0")
        object.__setattr__(self, "params", p)
        t = self.threshold
        if t is None and self.name in _DEFAULT_THRESHOLD:
            t = _DEFAULT_THRESHOLD[self.name]
        object.__setattr__(self, "threshold", t)
        if self.gap and self.name in ("logreg1d", "moons", "spirals"):
            raise DataError(f"gap variant undefined for {self.name!r}")
        if self.name == "bernoulli-bins":
            edges, probs = p["edges"], p["probs"]
            if len(probs) != len(edges) - 1:
                raise DataError("need one success probability per bin")
            if not all(0.0 <= q <= 1.0 for q in probs):
                raise DataError("bin probabilities must lie in [0, 1]")

    @property
    def task(self) -> TaskKind:
        if self.name in _REGRESSION:
            return TaskKind.regression()
        if self.name == "categorical":
            return TaskKind.multiclass(4)
        if self.name == "spirals":
            return TaskKind.multiclass(int(self.params["n_classes"]))
        return TaskKind.binary()

    @property
    def default_event(self):
        """What a band tracks by default: threshold t or class 1."""
        return self.threshold if self.name in _REGRESSION else 1


def _covariates(spec: DgpSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.gap:
        # half the draws from each side of the (-2, 2) gap, order shuffled
        n_lo = n // 2
        lo = rng.uniform(-8.0, -2.0, size=n_lo)
        hi = rng.uniform(2.0, 8.0, size=n - n_lo)
        x = np.concatenate([lo, hi])
        return x[rng.permutation(n)]
    return rng.uniform(-10.0, 10.0, size=n)


def _poisson_inverse(lam: np.ndarray, rng: np.random.Generator, kmax: int = 200) -> np.ndarray:
    """Poisson sampling by CDF inversion: exact and deterministic per draw."""
    u = rng.random(lam.shape[0])
    # u <= e^-lam inverts to 0, so zeros are the correct starting state
    y = np.zeros(lam.shape[0], dtype=np.float64)
    pmf = np.exp(-lam)
    cdf = pmf.copy()
    open_ = u > cdf
    k = 0
    while np.any(open_) and k < kmax:
        k += 1
        pmf = pmf * lam / k
        cdf = cdf + pmf
        newly = open_ & (u <= cdf)
        y[newly] = k
        open_ &= u > cdf
    y[open_] = kmax  # truncated tail mass lands on the cap
    return y


def _categorical_probs(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.stack(
        [
            -((x + 5.0) ** 2) / 10.0,
            -(x ** 2) / 30.0,
            -((x - 7.0) ** 2) / 5.0,
            -((x - 4.0) ** 2) / 8.0,
        ],
        axis=-1,
    )
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _probit_p1(x: np.ndarray) -> np.ndarray:
    return 0.6 * normal_cdf((x - 8.0) / 4.0) + 0.4 * normal_cdf((x + 8.0) / 4.0)


def _bin_probs(spec: DgpSpec, x: np.ndarray) -> np.ndarray:
    if spec.name == "linear-probit-bins":
        # smooth in x; the bin edges only matter to the rule fitted on it
        return np.asarray(normal_cdf(-0.2 * np.asarray(x, dtype=np.float64)))
    edges = np.asarray(spec.params["edges"], dtype=np.float64)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    return np.asarray(spec.params["probs"], dtype=np.float64)[idx]


def _responses(spec: DgpSpec, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    if spec.name == "linear":
        return 0.2 * x + rng.standard_normal(n)
    if spec.name == "polynomial":
        return 1.0 - 0.03 * x ** 2 + rng.standard_normal(n)
    if spec.name == "dependent":
        return 0.5 * x + 1.0 + (0.5 + 0.5 * np.abs(x)) * rng.standard_normal(n)
    if spec.name == "sine":
        return 0.5 * np.sin(x / 2.0) + 0.5 * rng.standard_normal(n)
    if spec.name == "poisson":
        return _poisson_inverse(0.05 * x ** 2 + 1.0, rng)
    if spec.name == "probit":
        return (rng.random(n) < _probit_p1(x)).astype(np.int64)
    if spec.name == "categorical":
        p = _categorical_probs(x)
        u = rng.random(n)
        return (u[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
    if spec.name in ("bernoulli-bins", "linear-probit-bins"):
        return (rng.random(n) < _bin_probs(spec, x)).astype(np.int64)
    if spec.name == "logreg1d":
        p1 = 1.0 / (1.0 + np.exp(-(spec.params["beta"] * x + spec.params["beta0"])))
        return (rng.random(n) < p1).astype(np.int64)
    raise DataError(f"no conditional response law for {spec.name!r}")


def sample_dgp(spec: DgpSpec, n: int, seed: int) -> ContextTable:
    """Draw n rows; deterministic in (spec, n, seed)."""
    if n < 1:
        raise DataError("n must be >= 1")
    if spec.name in ("moons", "spirals", "logreg1d"):
        return sample_toy2d(spec.name, n, spec.params.get("noise"), seed, spec.params)
    rng = stream(seed, "dgp", spec.name, int(spec.gap))
    x = _covariates(spec, n, rng)
    y = _responses(spec, x, rng)
    return ContextTable(x[:, None], y, spec.task)


def sample_responses(spec: DgpSpec, xs, seed: int) -> np.ndarray:
    """Draw one Y per given covariate value, holding x fixed.

    Complements sample_dgp for calibration checks that need conditional
    frequencies at chosen points. Undefined for moons/spirals, whose
    covariates are part of the construction.
    """
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DataError("need at least one covariate value")
    rng = stream(seed, "dgp-y", spec.name)
    return _responses(spec, x, rng)


def true_target(spec: DgpSpec, x, event) -> float:
    """Exact Pr(Y <= t | x) for regression or Pr(Y = class | x) otherwise."""
    xv = float(np.asarray(x).reshape(-1)[0])
    if spec.name in _REGRESSION:
        t = float(event)
        if spec.name == "linear":
            return float(normal_cdf(t - 0.2 * xv))
        if spec.name == "polynomial":
            return float(normal_cdf(t - (1.0 - 0.03 * xv ** 2)))
        if spec.name == "dependent":
            return float(normal_cdf((t - (0.5 * xv + 1.0)) / (0.5 + 0.5 * abs(xv))))
        if spec.name == "sine":
            return float(normal_cdf((t - 0.5 * math.sin(xv / 2.0)) / 0.5))
        # poisson: sum the pmf up to floor(t)
        if t < 0.0:
            return 0.0
        lam = 0.05 * xv ** 2 + 1.0
        term = math.exp(-lam)
        total = term
        for k in range(1, int(math.floor(t)) + 1):
            term *= lam / k
            total += term
        return min(total, 1.0)
    c = int(event)
    if spec.name == "probit":
        p1 = float(_probit_p1(np.asarray([xv]))[0])
        return p1 if c == 1 else 1.0 - p1
    if spec.name == "categorical":
        return float(_categorical_probs(np.asarray([xv]))[0, c])
    if spec.name in ("bernoulli-bins", "linear-probit-bins"):
        p1 = float(_bin_probs(spec, np.asarray([xv]))[0])
        return p1 if c == 1 else 1.0 - p1
    if spec.name == "logreg1d":
        p1 = 1.0 / (1.0 + math.exp(-(spec.params["beta"] * xv + spec.params["beta0"])))
        return p1 if c == 1 else 1.0 - p1
    raise DataError(f"no closed-form target for {spec.name!r}")


def sample_toy2d(name: str, n: int, noise: float | None, seed: int, params: dict | None = None) -> ContextTable:
    """The classification toys: logreg1d (d=1), moons and spirals (d=2)."""
    if n < 1:
        raise DataError("n must be >= 1")
    p = dict(_DEFAULT_PARAMS.get(name, {}))
    if params:
        p.update(params)
    if noise is not None:
        p["noise"] = noise
    rng = stream(seed, "dgp", name)

    if name == "logreg1d":
        x = rng.normal(p["mean"], p["sd"], size=n)
        prob = 1.0 / (1.0 + np.exp(-(p["beta"] * x + p["beta0"])))
        y = (rng.random(n) < prob).astype(np.int64)
        return ContextTable(x[:, None], y, TaskKind.binary())

    if name == "moons":
        # the conventional two-moons construction: upper unit half-circle at
        # the origin; lower half-circle reflected and offset by (1, -0.5)
        n_out = n // 2
        n_in = n - n_out
        th_out = np.linspace(0.0, math.pi, n_out)
        th_in = np.linspace(0.0, math.pi, n_in)
        pts = np.concatenate(
            [
                np.stack([np.cos(th_out), np.sin(th_out)], axis=1),
                np.stack([1.0 - np.cos(th_in), 1.0 - np.sin(th_in) - 0.5], axis=1),
            ]
        )
        y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
        if p["noise"] > 0.0:
            pts = pts + rng.normal(0.0, p["noise"], size=pts.shape)
        order = rng.permutation(n)
        return ContextTable(pts[order], y[order], TaskKind.binary())

    if name == "spirals":
        k = int(p.get("n_classes", 3))
        counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
        xs_parts, ys_parts = [], []
        for c, nc in enumerate(counts):
            t = rng.random(nc)
            r = 4.0 * t
            theta = 2.0 * math.pi * 2.0 * t + 2.0 * math.pi * c / k
            pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
            pts = pts + rng.normal(0.0, p["noise"], size=pts.shape)
            xs_parts.append(pts)
            ys_parts.append(np.full(nc, c, dtype=np.int64))
        pts = np.concatenate(xs_parts)
        y = np.concatenate(ys_parts)
        order = rng.permutation(n)
        return ContextTable(pts[order], y[order], TaskKind.multiclass(k))

    raise DataError(f"unknown toy generator {name!r}")
