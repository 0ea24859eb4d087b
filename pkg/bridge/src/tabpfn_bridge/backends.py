"""Prediction backends: the real model and a deterministic stand-in.

Both expose the same two entry points. `class_probs` returns one row of k
class probabilities per query point; `cdf_at` returns the predictive CDF
evaluated at one threshold per query, computed from a discretized output
distribution by `cdf_from_bins`. Backends are pure functions of
(constructor config, request arrays), so a fixed-seed server answers
identical requests with identical bytes for its whole lifetime.
"""

from __future__ import annotations

import numpy as np


class BackendError(RuntimeError):
    """Request-level backend failure; reported in-band, never fatal."""


def cdf_from_bins(edges: np.ndarray, masses: np.ndarray, t: float) -> float:
    """Mass of (-inf, t] given bin edges and per-bin masses.

    Bins fully below t contribute whole; the bin straddling t contributes
    the linear fraction (t - lo) / (hi - lo) of its mass. Outside the
    binned range the CDF saturates at 0 or 1.
    """
    if t <= edges[0]:
        return 0.0
    if t >= edges[-1]:
        return 1.0
    b = int(np.searchsorted(edges, t, side="right")) - 1
    frac = (t - edges[b]) / (edges[b + 1] - edges[b])
    return float(masses[:b].sum() + masses[b] * frac)


def _temper(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scale rows of probabilities; T=1 is the identity."""
    if temperature == 1.0:
        return probs
    scaled = np.power(np.clip(probs, 1e-300, None), 1.0 / temperature)
    return scaled / scaled.sum(axis=1, keepdims=True)


class StubBackend:
    """Seeded kernel smoother with the same interface as the real model.

    An ensemble member is a bandwidth perturbation; member scales are drawn
    once at construction, which is what makes the server's answers stable
    across its lifetime. Laplace smoothing keeps every class probability
    strictly inside (0, 1) even for classes absent from the context.
    """

    N_BINS = 32

    def __init__(self, cfg):
        self.model_id = f"stub-{cfg.model_kind}"
        rng = np.random.default_rng(cfg.seed)
        self._scales = np.exp(rng.normal(0.0, 0.25, cfg.ensemble))
        self._temperature = cfg.temperature

    def _weights(self, xs: np.ndarray, queries: np.ndarray, scale: float) -> np.ndarray:
        # (m, n) Gaussian kernel weights with a data-scale bandwidth
        spread = float(np.sqrt(np.mean(np.var(xs, axis=0)) + 1e-12))
        h = max(spread * xs.shape[0] ** -0.2, 1e-6) * scale
        d2 = ((queries[:, None, :] - xs[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * h * h))

    def class_probs(self, xs, ys, k: int, queries) -> np.ndarray:
        labels = ys.astype(np.int64)
        onehot = np.zeros((xs.shape[0], k))
        onehot[np.arange(xs.shape[0]), labels] = 1.0
        acc = np.zeros((queries.shape[0], k))
        for scale in self._scales:
            w = self._weights(xs, queries, scale)
            counts = w @ onehot + 0.5
            acc += counts / counts.sum(axis=1, keepdims=True)
        return _temper(acc / len(self._scales), self._temperature)

    def _bin_edges(self, ys: np.ndarray) -> np.ndarray:
        lo, hi = float(ys.min()), float(ys.max())
        pad = 0.05 * (hi - lo) + 0.5
        return np.linspace(lo - pad, hi + pad, self.N_BINS + 1)

    def cdf_at(self, xs, ys, queries, thresholds) -> np.ndarray:
        edges = self._bin_edges(ys)
        which = np.clip(np.digitize(ys, edges[1:-1]), 0, self.N_BINS - 1)
        onehot = np.zeros((xs.shape[0], self.N_BINS))
        onehot[np.arange(xs.shape[0]), which] = 1.0
        acc = np.zeros((queries.shape[0], self.N_BINS))
        for scale in self._scales:
            w = self._weights(xs, queries, scale)
            masses = w @ onehot + 1e-3 / self.N_BINS
            acc += masses / masses.sum(axis=1, keepdims=True)
        acc /= len(self._scales)
        return np.array([
            cdf_from_bins(edges, acc[j], float(thresholds[j]))
            for j in range(queries.shape[0])
        ])


class TabPFNBackend:
    """Adapter over the published TabPFN estimators.

    Fits per request (the protocol is stateless by design) and pins the
    member count and seed at construction. Import happens here, not at
    module load, so the stub path works without the model installed.
    """

    def __init__(self, cfg):
        try:
            import tabpfn
        except ImportError as exc:
            raise BackendError(
                "tabpfn is not installed; install the 'tabpfn' extra or use --backend stub"
            ) from exc
        self._cfg = cfg
        self.model_id = f"tabpfn-{cfg.model_kind}"
        kwargs = dict(n_estimators=cfg.ensemble, device=cfg.device, random_state=cfg.seed)
        if cfg.model_kind == "classifier":
            self._model = tabpfn.TabPFNClassifier(
                softmax_temperature=cfg.temperature, **kwargs
            )
        else:
            self._model = tabpfn.TabPFNRegressor(**kwargs)

    def class_probs(self, xs, ys, k: int, queries) -> np.ndarray:
        self._model.fit(xs, ys.astype(np.int64))
        raw = np.asarray(self._model.predict_proba(queries), dtype=np.float64)
        # scatter into k columns; the fit may have seen fewer classes
        probs = np.full((queries.shape[0], k), 1e-9)
        seen = [int(c) for c in getattr(self._model, "classes_", range(raw.shape[1]))]
        for col, cls in enumerate(seen):
            if not 0 <= cls < k:
                raise BackendError(f"model emitted class {cls} outside [0, {k})")
            probs[:, cls] = raw[:, col]
        return probs / probs.sum(axis=1, keepdims=True)

    def cdf_at(self, xs, ys, queries, thresholds) -> np.ndarray:
        self._model.fit(xs, ys.astype(np.float64))
        full = self._model.predict(queries, output_type="full")
        logits = np.asarray(full["logits"], dtype=np.float64)
        crit = full["criterion"]
        edges = np.asarray(crit.borders, dtype=np.float64)
        shift = np.max(logits, axis=1, keepdims=True)
        masses = np.exp(logits - shift)
        masses /= masses.sum(axis=1, keepdims=True)
        return np.array([
            cdf_from_bins(edges, masses[j], float(thresholds[j]))
            for j in range(queries.shape[0])
        ])


def make_backend(cfg):
    if cfg.backend == "stub":
        return StubBackend(cfg)
    return TabPFNBackend(cfg)
