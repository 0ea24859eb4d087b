"""Entropy split of total predictive uncertainty into aleatoric + epistemic.

Total is the entropy of the predictive mean; aleatoric is the expected
entropy of a Beta (binary) or Dirichlet (multiclass) law moment-matched to
the CLT mean and variance, in closed form through digamma identities;
epistemic is the residual, so additivity is exact by construction. All
entropies are natural-log (nats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .special import digamma

_CLIP_EPS = 1e-9


def binary_entropy(g: float) -> float:
    if g <= 0.0 or g >= 1.0:
        return 0.0
    return -(g * math.log(g) + (1.0 - g) * math.log(1.0 - g))


def shannon_entropy(g) -> float:
    g = np.asarray(g, dtype=np.float64)
    pos = g[g > 0.0]
    return float(-(pos * np.log(pos)).sum())


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise DataError("Beta parameters must be positive")


@dataclass(frozen=True)
class UncertaintySplit:
    """total = aleatoric + epistemic, exactly; nats."""

    total: float
    aleatoric: float
    epistemic: float
    method: str  # "beta", "dirichlet", or "delta"
    clipped: bool = False


def _clip_var(g: float, var: float) -> tuple[float, bool]:
    cap = (1.0 - _CLIP_EPS) * g * (1.0 - g)
    if var > cap:
        return cap, True
    return var, False


def beta_moment_match(g: float, var: float) -> BetaParams:
    """Beta(alpha, beta) with mean g and variance min(var, (1-eps) g(1-g)).

    The cap keeps the implied concentration T = g(1-g)/var - 1 strictly
    positive; with the clipped variance the match is algebraically exact.
    """
    if not 0.0 < g < 1.0:
        raise DataError(f"mean {g!r} outside (0, 1)")
    if not var > 0.0:
        raise DataError(f"variance {var!r} must be positive")
    var_c, _ = _clip_var(g, var)
    t = g * (1.0 - g) / var_c - 1.0
    return BetaParams(alpha=g * t, beta=(1.0 - g) * t)


def aleatoric_binary(g: float, var: float) -> float:
    """Closed-form E[h(G)] for G ~ Beta moment-matched to (g, var).

    With alpha = gT, beta = (1-g)T:
    Uhat_a = psi(T+1) - g psi(alpha+1) - (1-g) psi(beta+1).
    Boundary means return 0; var = 0 returns h(g), the degenerate limit.
    """
    if g <= 0.0 or g >= 1.0:
        return 0.0
    if var < 0.0:
        raise DataError(f"negative variance {var!r}")
    if var == 0.0:
        return binary_entropy(g)
    p = beta_moment_match(g, var)
    t = p.alpha + p.beta
    return digamma(t + 1.0) - g * digamma(p.alpha + 1.0) - (1.0 - g) * digamma(p.beta + 1.0)


def aleatoric_multiclass(g, var) -> float:
    """Expected Shannon entropy of the Dirichlet matched to (g, per-class var).

    alpha0 = (1 - ||g||^2)/sum(var) - 1 with sum(var) clipped strictly below
    1 - ||g||^2; alpha_k = g_k alpha0. Zero-probability classes contribute
    nothing; a one-hot mean or vanishing variances fall back to their limits.
    """
    g = np.asarray(g, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if g.shape != var.shape or g.ndim != 1:
        raise DataError("mean and variance vectors must share one shape")
    if np.any(g < 0.0) or abs(float(g.sum()) - 1.0) > 1e-9:
        raise DataError("mean vector must lie on the probability simplex")
    if np.any(var < 0.0):
        raise DataError("negative per-class variance")
    spread = 1.0 - float(g @ g)
    if spread <= 0.0:  # one-hot mean: entropy identically zero in the limit
        return 0.0
    vs = float(var.sum())
    if vs == 0.0:
        return shannon_entropy(g)
    vs = min(vs, (1.0 - _CLIP_EPS) * spread)
    alpha0 = spread / vs - 1.0
    out = digamma(alpha0 + 1.0)
    for gk in g:
        if gk > 0.0:
            out -= gk * digamma(gk * alpha0 + 1.0)
    return float(out)


def delta_method_aleatoric(g: float, var: float) -> float:
    """Second-order comparator h(g) - var/(2 g (1-g)).

    Unstable near the boundaries and may go negative; kept only for
    comparison against the moment-matched route.
    """
    if not 0.0 < g < 1.0:
        raise DataError(f"mean {g!r} outside (0, 1)")
    return binary_entropy(g) - var / (2.0 * g * (1.0 - g))


def decompose(g, var, method: str = "beta") -> UncertaintySplit:
    """Split total entropy at the predictive mean into aleatoric + epistemic.

    Binary means take method "beta" or "delta"; simplex vectors take
    "dirichlet". Epistemic is defined as the residual total - aleatoric, so
    the three numbers are exactly additive.
    """
    if method not in ("beta", "dirichlet", "delta"):
        raise DataError(f"unknown method {method!r}")
    vec = np.ndim(g) == 1
    if vec:
        if method != "dirichlet":
            raise DataError(f"method {method!r} does not apply to class vectors")
        g = np.asarray(g, dtype=np.float64)
        var = np.asarray(var, dtype=np.float64)
        total = shannon_entropy(g)
        aleatoric = aleatoric_multiclass(g, var)
        spread = 1.0 - float(g @ g)
        clipped = spread > 0.0 and float(var.sum()) > (1.0 - _CLIP_EPS) * spread
    else:
        if method == "dirichlet":
            raise DataError("dirichlet method needs a class-probability vector")
        g = float(g)
        var = float(var)
        if g <= 0.0 or g >= 1.0:
            return UncertaintySplit(0.0, 0.0, 0.0, method, False)
        total = binary_entropy(g)
        if method == "beta":
            aleatoric = aleatoric_binary(g, var)
        else:
            aleatoric = delta_method_aleatoric(g, var)
        clipped = var > (1.0 - _CLIP_EPS) * g * (1.0 - g)
    epistemic = total - aleatoric
    if method in ("beta", "dirichlet"):
        if aleatoric < 0.0 or epistemic < -1e-12:
            raise DataError("moment-matched split left its admissible range")
    return UncertaintySplit(total, aleatoric, epistemic, method, clipped)
