"""Experiment orchestration: coverage studies, gap runs, real-data bands.

Each replication draws a fresh context, permutes it, runs the prefix
trajectory, turns the chosen covariance estimator into bands over a covariate
grid, and scores them against the generator's exact conditional target. The
pointwise rate averages per-point coverage frequencies over the grid; the
simultaneous rate is the frequency with which a band covers the target at
every grid point at once. Everything is deterministic given the config seed.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._rng import stream
from .bands import Band, band_csv_rows, BAND_CSV_COLUMNS, pointwise_band, supt_band
from .data import ContextTable, QuerySpec, TaskKind
from .dgps import DgpSpec, sample_dgp, true_target
from .errors import DataError, RuleError, UsageError
from .estimators import un, vn
from .rules import PredictiveRule, parse_rule
from .trajectory import build_trajectory

ESTIMATOR_NAMES = ("vn", "un")
BAND_KINDS = ("pointwise", "sup-t")


def _resolve_rule(rule, task: TaskKind) -> PredictiveRule:
    if isinstance(rule, str):
        return parse_rule(rule, task)
    return rule


@dataclass(frozen=True)
class CoverageConfig:
    dgp: DgpSpec
    rule: object  # PredictiveRule or a selector string
    ns: tuple = (500,)
    reps: int = 100
    alpha: float = 0.05
    grid: tuple = tuple(np.linspace(-10.0, 10.0, 100))
    estimators: tuple = ("vn",)
    band_kinds: tuple = BAND_KINDS
    seed: int = 0
    mc_samples: int = 1000
    supt_draws: int = 10_000
    band_source: str = "clt"  # or "exact-bayes"

    def __post_init__(self):
        if self.reps < 1:
            raise DataError("at least one replication required")
        if not self.grid:
            raise DataError("evaluation grid is empty")
        if not all(e in ESTIMATOR_NAMES for e in self.estimators):
            raise UsageError(f"estimators must be among {ESTIMATOR_NAMES}")
        if not all(k in BAND_KINDS for k in self.band_kinds):
            raise UsageError(f"band kinds must be among {BAND_KINDS}")
        if self.band_source not in ("clt", "exact-bayes"):
            raise UsageError("band_source must be 'clt' or 'exact-bayes'")
        if self.band_source == "exact-bayes" and tuple(self.band_kinds) != ("pointwise",):
            raise UsageError("exact-bayes bands are pointwise only")
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "band_kinds", tuple(self.band_kinds))


@dataclass(frozen=True)
class CoverageCell:
    n: int
    estimator: str
    kind: str
    rate: float
    mean_width: float
    reps: int
    failed: int

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise DataError(f"coverage rate {self.rate!r} outside [0, 1]")
        if self.mean_width < 0.0:
            raise DataError("mean width must be >= 0")


@dataclass(frozen=True)
class CoverageReport:
    dgp: str
    alpha: float
    cells: tuple
    records: tuple = field(repr=False, default=())
    failures: tuple = ()

    def cell(self, n: int, estimator: str, kind: str) -> CoverageCell:
        for c in self.cells:
            if (c.n, c.estimator, c.kind) == (n, estimator, kind):
                return c
        raise KeyError((n, estimator, kind))

    def to_json(self) -> dict:
        return {
            "dgp": self.dgp,
            "alpha": self.alpha,
            "cells": [vars(c).copy() for c in self.cells],
            "records": [dict(r) for r in self.records],
            "failures": list(self.failures),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CoverageReport":
        return cls(
            dgp=doc["dgp"],
            alpha=doc["alpha"],
            cells=tuple(CoverageCell(**c) for c in doc["cells"]),
            records=tuple(doc.get("records", [])),
            failures=tuple(doc.get("failures", [])),
        )


def _seeded_ints(seed: int, *tags, count: int) -> list[int]:
    gen = stream(seed, *tags)
    return [int(v) for v in gen.integers(2 ** 62, size=count)]


def _exact_bayes_band(rule, context, grid, event, alpha) -> Band:
    if not hasattr(rule, "limit_posterior"):
        raise UsageError(
            f"rule {rule.rule_id!r} exposes no closed-form posterior; "
            "exact-bayes bands need a conjugate rule"
        )
    centers, lowers, uppers = [], [], []
    for x in grid:
        post = rule.limit_posterior(context, ((x,), event))
        lo, hi = post.interval(alpha)
        centers.append(post.mean())
        lowers.append(min(max(lo, 0.0), 1.0))
        uppers.append(min(max(hi, 0.0), 1.0))
    center = np.clip(np.asarray(centers), 0.0, 1.0)
    return Band(
        center=center,
        lower=np.minimum(np.asarray(lowers), center),
        upper=np.maximum(np.asarray(uppers), center),
        alpha=alpha,
        kind="pointwise",
        critical=float("nan"),
        sigma=None,
        L=0,
        seed=0,
    )


def _check_nested(inner: Band, outer: Band):
    if np.any(outer.lower > inner.lower + 1e-12) or np.any(outer.upper < inner.upper - 1e-12):
        raise DataError("simultaneous band fails to contain the pointwise band")


def _one_replication(cfg: CoverageConfig, rule, queries, truth, n: int, rep: int):
    """Returns a list of raw records, one per (estimator, kind)."""
    dseed, pseed, useed, sseed = _seeded_ints(cfg.seed, "coverage", n, rep, count=4)
    context = sample_dgp(cfg.dgp, n, dseed)
    out = []
    if cfg.band_source == "exact-bayes":
        band = _exact_bayes_band(rule, context, cfg.grid, cfg.dgp.default_event, cfg.alpha)
        covered = band.contains(truth)
        out.append({
            "n": n, "rep": rep, "estimator": "exact-bayes", "kind": "pointwise",
            "frac_covered": float(np.mean(covered)),
            "covered_all": bool(np.all(covered)),
            "width": float(np.mean(band.width)),
        })
        return out
    traj = build_trajectory(rule, context, queries, seed=pseed)
    center = traj.values[-1]
    for est_name in cfg.estimators:
        if est_name == "vn":
            sigma = vn(traj)
        else:
            sigma = un(rule, context, queries, mc_samples=cfg.mc_samples, seed=useed)
        built = {}
        for kind in cfg.band_kinds:
            if kind == "pointwise":
                band = pointwise_band(center, sigma, cfg.alpha)
            else:
                band = supt_band(center, sigma, cfg.alpha, L=cfg.supt_draws, seed=sseed)
            built[kind] = band
            covered = band.contains(truth)
            out.append({
                "n": n, "rep": rep, "estimator": est_name, "kind": kind,
                "frac_covered": float(np.mean(covered)),
                "covered_all": bool(np.all(covered)),
                "width": float(np.mean(band.width)),
            })
        if "pointwise" in built and "sup-t" in built:
            _check_nested(built["pointwise"], built["sup-t"])
    return out


def coverage_experiment(cfg: CoverageConfig, workers: int | None = None) -> CoverageReport:
    task = cfg.dgp.task
    rule = _resolve_rule(cfg.rule, task)
    if not rule.supports(task):
        raise RuleError(f"rule {rule.rule_id!r} does not support task {task.kind!r}")
    event = cfg.dgp.default_event
    queries = QuerySpec.for_grid(cfg.grid, event)
    truth = np.asarray([true_target(cfg.dgp, x, event) for x in cfg.grid])

    records: list[dict] = []
    failures: list[str] = []
    jobs = [(n, rep) for n in cfg.ns for rep in range(cfg.reps)]

    def run(job):
        n, rep = job
        try:
            return _one_replication(cfg, rule, queries, truth, n, rep)
        except (DataError, RuleError) as exc:
            return f"n={n} rep={rep}: {exc}"

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    for res in results:
        if isinstance(res, str):
            failures.append(res)
        else:
            records.extend(res)
    if failures:
        warnings.warn(
            f"{len(failures)} of {len(jobs)} replications failed and were excluded",
            stacklevel=2,
        )

    est_names = ("exact-bayes",) if cfg.band_source == "exact-bayes" else cfg.estimators
    cells = []
    for n in cfg.ns:
        n_failed = sum(1 for f in failures if f.startswith(f"n={n} "))
        for est_name in est_names:
            for kind in cfg.band_kinds:
                recs = [
                    r for r in records
                    if (r["n"], r["estimator"], r["kind"]) == (n, est_name, kind)
                ]
                if not recs:
                    continue
                if kind == "pointwise":
                    rate = float(np.mean([r["frac_covered"] for r in recs]))
                else:
                    rate = float(np.mean([r["covered_all"] for r in recs]))
                cells.append(CoverageCell(
                    n=n, estimator=est_name, kind=kind, rate=rate,
                    mean_width=float(np.mean([r["width"] for r in recs])),
                    reps=len(recs), failed=n_failed,
                ))
    return CoverageReport(
        dgp=cfg.dgp.name,
        alpha=cfg.alpha,
        cells=tuple(cells),
        records=tuple(records),
        failures=tuple(failures),
    )


@dataclass(frozen=True)
class GapConfig:
    dgp: DgpSpec
    rule: object
    ns: tuple = (200, 500, 1000)
    alpha: float = 0.05
    grid: tuple = tuple(np.linspace(-8.0, 8.0, 100))
    estimator: str = "vn"
    seed: int = 0
    mc_samples: int = 1000
    supt_draws: int = 10_000

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_NAMES:
            raise UsageError(f"estimator must be one of {ESTIMATOR_NAMES}")
        object.__setattr__(self, "dgp", replace(self.dgp, gap=True))
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))


@dataclass(frozen=True)
class GapRunResult:
    n: int
    context: ContextTable
    bands: dict  # kind -> Band
    band_csv: str | None
    data_csv: str | None


def gap_experiment(cfg: GapConfig, out_dir=None) -> list[GapRunResult]:
    """Bands on gapped data for each sample size; no coverage aggregation."""
    task = cfg.dgp.task
    rule = _resolve_rule(cfg.rule, task)
    event = cfg.dgp.default_event
    queries = QuerySpec.for_grid(cfg.grid, event)
    out = []
    for n in cfg.ns:
        dseed, pseed, useed, sseed = _seeded_ints(cfg.seed, "gap", n, count=4)
        context = sample_dgp(cfg.dgp, n, dseed)
        traj = build_trajectory(rule, context, queries, seed=pseed)
        if cfg.estimator == "vn":
            sigma = vn(traj)
        else:
            sigma = un(rule, context, queries, mc_samples=cfg.mc_samples, seed=useed)
        center = traj.values[-1]
        bands = {
            "pointwise": pointwise_band(center, sigma, cfg.alpha),
            "sup-t": supt_band(center, sigma, cfg.alpha, L=cfg.supt_draws, seed=sseed),
        }
        band_path = data_path = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            band_path = str(out_dir / f"bands_{cfg.dgp.name}_n{n}.csv")
            data_path = str(out_dir / f"data_{cfg.dgp.name}_n{n}.csv")
            _write_csv(
                band_path, BAND_CSV_COLUMNS,
                [row for kind in bands for row in band_csv_rows(bands[kind], queries)],
            )
            _write_csv(
                data_path, ("x", "y"),
                [(";".join(repr(v) for v in x), y) for x, y in zip(context.xs.tolist(), context.ys.tolist())],
            )
        out.append(GapRunResult(n=n, context=context, bands=bands,
                                band_csv=band_path, data_csv=data_path))
    return out


def real_data_pipeline(
    csv_path,
    label_column: str,
    task: TaskKind,
    rule,
    alpha: float = 0.05,
    grid=None,
    estimator: str = "vn",
    event=None,
    reliability: bool = False,
    seed: int = 0,
    mc_samples: int = 1000,
    supt_draws: int = 10_000,
    allow_extrapolation: bool = False,
    out_path=None,
):
    """Bands for a CSV dataset; optionally the upper-tail reliability 1 - F.

    Returns (queries, bands dict, csv rows). The grid defaults to 100 evenly
    spaced points across the observed range of the first covariate and must
    stay inside the covariate hull unless extrapolation is explicitly allowed.
    """
    from .data import load_table

    if estimator not in ESTIMATOR_NAMES:
        raise UsageError(f"estimator must be one of {ESTIMATOR_NAMES}")
    context, _classes = load_table(csv_path, label_column, task)
    if context.d != 1:
        raise DataError("band grids are 1-d; dataset must have a single covariate")
    if reliability and task.is_classification:
        raise UsageError("reliability output 1 - F(t|x) needs a regression task")
    if event is None:
        event = 1 if task.is_classification else 0.0
    lo, hi = float(context.xs.min()), float(context.xs.max())
    if grid is None:
        grid = np.linspace(lo, hi, 100)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if not allow_extrapolation and (grid.min() < lo or grid.max() > hi):
        raise DataError(
            f"grid range [{grid.min():g}, {grid.max():g}] leaves the covariate "
            f"hull [{lo:g}, {hi:g}]; pass allow_extrapolation to override"
        )
    rule = _resolve_rule(rule, task)
    queries = QuerySpec.for_grid(grid, event)
    pseed, useed, sseed = _seeded_ints(seed, "real-data", count=3)
    traj = build_trajectory(rule, context, queries, seed=pseed)
    if estimator == "vn":
        sigma = vn(traj)
    else:
        sigma = un(rule, context, queries, mc_samples=mc_samples, seed=useed)
    center = traj.values[-1]
    bands = {
        "pointwise": pointwise_band(center, sigma, alpha),
        "sup-t": supt_band(center, sigma, alpha, L=supt_draws, seed=sseed),
    }
    if reliability:
        bands = {kind: _complement_band(b) for kind, b in bands.items()}
    rows = [row for kind in ("pointwise", "sup-t") for row in band_csv_rows(bands[kind], queries)]
    if out_path is not None:
        _write_csv(out_path, BAND_CSV_COLUMNS, rows)
    return queries, bands, rows


ENTROPY_CSV_COLUMNS = ("x", "total", "aleatoric", "epistemic", "method")


def entropy_profile(
    rule,
    context: ContextTable,
    grid,
    event=None,
    estimator: str = "vn",
    method: str = "beta",
    seed: int = 0,
    mc_samples: int = 1000,
):
    """Uncertainty decomposition along a covariate grid.

    The final predictive supplies the mean; the chosen covariance estimator
    supplies the posterior variance proxy Sigma_jj / n. The dirichlet method
    decomposes the full class distribution at each grid point; beta and delta
    track the single configured event.
    """
    from .entropy import decompose

    task = context.task
    rule = _resolve_rule(rule, task)
    if estimator not in ESTIMATOR_NAMES:
        raise UsageError(f"estimator must be one of {ESTIMATOR_NAMES}")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    pseed, useed = _seeded_ints(seed, "entropy-profile", count=2)
    if method == "dirichlet":
        if not task.is_classification:
            raise UsageError("dirichlet decomposition needs a classification task")
        k = task.n_classes
        xs = np.repeat(grid, k)[:, None]
        events = tuple(int(c) for _ in grid for c in range(k))
        queries = QuerySpec(xs, events)
    else:
        if event is None:
            event = 1 if task.is_classification else 0.0
        queries = QuerySpec.for_grid(grid, event)
    traj = build_trajectory(rule, context, queries, seed=pseed)
    if estimator == "vn":
        sigma = vn(traj)
    else:
        sigma = un(rule, context, queries, mc_samples=mc_samples, seed=useed)
    g = traj.values[-1]
    var = np.diag(sigma.matrix) / sigma.n
    rows = []
    for i, x in enumerate(grid):
        if method == "dirichlet":
            sl = slice(i * task.n_classes, (i + 1) * task.n_classes)
            split = decompose(g[sl], var[sl], method="dirichlet")
        else:
            split = decompose(float(g[i]), float(var[i]), method=method)
        rows.append((float(x), split.total, split.aleatoric, split.epistemic, split.method))
    return rows


def _complement_band(band: Band) -> Band:
    """Map a band for F(t|x) to the band for the reliability 1 - F(t|x)."""
    return Band(
        center=1.0 - band.center,
        lower=1.0 - band.upper,
        upper=1.0 - band.lower,
        alpha=band.alpha,
        kind=band.kind,
        critical=band.critical,
        sigma=band.sigma,
        L=band.L,
        seed=band.seed,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


REPORT_CSV_COLUMNS = ("dgp", "n", "estimator", "kind", "rate", "mean_width", "reps", "failed")


def emit_report(report: CoverageReport, path, fmt: str = "json") -> None:
    """Serialize a coverage report with stable field ordering."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=False)
            fh.write("\n")
    elif fmt == "csv":
        _write_csv(
            path, REPORT_CSV_COLUMNS,
            [
                (report.dgp, c.n, c.estimator, c.kind, repr(c.rate),
                 repr(c.mean_width), c.reps, c.failed)
                for c in report.cells
            ],
        )
    else:
        raise UsageError(f"unknown report format {fmt!r}")


def load_report(path) -> CoverageReport:
    with open(path, "r", encoding="utf-8") as fh:
        return CoverageReport.from_json(json.load(fh))
