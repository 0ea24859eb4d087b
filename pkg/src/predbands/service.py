"""HTTP service exposing the band/entropy/experiment machinery.

Each route is a thin shell over a handler function taking a request model and
returning a response model; the CLI calls the same handlers in-process when no
server is configured, so both surfaces honor one behavior.
"""

from __future__ import annotations

import numpy as np

from . import __version__
from .data import QuerySpec, TaskKind
from .diagnostics import RolloutConfig, diagnose, rollout
from .dgps import sample_dgp, true_target
from .entropy import decompose
from .errors import DataError, RuleError, UsageError
from .estimators import un, vn
from .bands import pointwise_band, supt_band
from .harness import (
    CoverageConfig,
    GapConfig,
    coverage_experiment,
    entropy_profile,
    gap_experiment,
)
from .rules import parse_rule
from .schemas import (
    BandModel,
    BandsRequest,
    BandsResponse,
    CoverageCellModel,
    CoverageRequest,
    CoverageResponse,
    DatasetModel,
    DgpSampleRequest,
    DgpSampleResponse,
    DiagnoseRequest,
    DiagnoseResponse,
    EntropyProfileRequest,
    EntropyProfileResponse,
    EntropyRequest,
    EntropyResponse,
    EntropyRow,
    EstimatorBandsModel,
    GapRequest,
    GapResponse,
    GapRunModel,
    HealthResponse,
    RolloutRequest,
    RolloutResponse,
    TraceModel,
)
from .trajectory import build_trajectory


def _resolve_context(req):
    """(context, dgp_spec_or_None) from an inline dataset or a DGP draw."""
    if (req.data is None) == (req.dgp is None):
        raise UsageError("provide exactly one of 'data' or 'dgp'")
    if req.data is not None:
        return req.data.to_table(), None
    if req.n is None or req.n < 2:
        raise UsageError("'dgp' input needs n >= 2")
    spec = req.dgp.to_spec()
    return sample_dgp(spec, req.n, req.seed), spec


def _resolve_grid(req, context, spec):
    if req.grid:
        return [float(x) for x in req.grid]
    if context.d != 1:
        raise DataError("a default grid needs a single covariate; pass 'grid'")
    if spec is not None and spec.name not in ("logreg1d", "moons", "spirals"):
        lo, hi = (-8.0, 8.0) if spec.gap else (-10.0, 10.0)
    else:
        lo, hi = float(context.xs.min()), float(context.xs.max())
    return [float(x) for x in np.linspace(lo, hi, 100)]


def _resolve_event(req, context, spec):
    if req.event is not None:
        ev = req.event
        return int(ev) if context.task.is_classification else float(ev)
    if spec is not None:
        return spec.default_event
    return 1 if context.task.is_classification else 0.0


def handle_bands(req: BandsRequest) -> BandsResponse:
    context, spec = _resolve_context(req)
    grid = _resolve_grid(req, context, spec)
    event = _resolve_event(req, context, spec)
    rule = parse_rule(req.rule, context.task)
    queries = QuerySpec.for_grid(grid, event)
    traj = build_trajectory(rule, context, queries, seed=req.seed, stride=req.stride)
    center = traj.values[-1]
    names = ("vn", "un") if req.estimator == "both" else (req.estimator,)
    results = []
    for name in names:
        if name == "vn":
            sigma = vn(traj)
        else:
            sigma = un(rule, context, queries, mc_samples=req.mc_samples, seed=req.seed)
        results.append(EstimatorBandsModel(
            estimator=name,
            pointwise=BandModel.from_band(pointwise_band(center, sigma, req.alpha)),
            sup_t=BandModel.from_band(
                supt_band(center, sigma, req.alpha, L=req.supt_draws, seed=req.seed)
            ),
        ))
    return BandsResponse(n=context.n, grid=grid, event=event, results=results)


def handle_entropy(req: EntropyRequest) -> EntropyResponse:
    split = decompose(req.g, req.var, method=req.method)
    return EntropyResponse(
        total=split.total,
        aleatoric=split.aleatoric,
        epistemic=split.epistemic,
        method=split.method,
        clipped=split.clipped,
    )


def handle_entropy_profile(req: EntropyProfileRequest) -> EntropyProfileResponse:
    context, spec = _resolve_context(req)
    grid = _resolve_grid(req, context, spec)
    event = req.event
    if event is None and spec is not None and req.method != "dirichlet":
        event = spec.default_event
    rows = entropy_profile(
        req.rule, context, grid, event=event, estimator=req.estimator,
        method=req.method, seed=req.seed, mc_samples=req.mc_samples,
    )
    return EntropyProfileResponse(rows=[
        EntropyRow(x=x, total=t, aleatoric=a, epistemic=e, method=m)
        for x, t, a, e, m in rows
    ])


def handle_dgp_sample(req: DgpSampleRequest) -> DgpSampleResponse:
    spec = req.dgp.to_spec()
    table = sample_dgp(spec, req.n, req.seed)
    truth = None
    if req.with_truth:
        event = req.truth_event if req.truth_event is not None else spec.default_event
        truth = [true_target(spec, x, event) for x in table.xs[:, 0]]
    return DgpSampleResponse(data=DatasetModel.from_table(table), truth=truth)


def handle_coverage(req: CoverageRequest) -> CoverageResponse:
    spec = req.dgp.to_spec()
    grid = req.grid or [float(x) for x in np.linspace(-10.0, 10.0, 100)]
    cfg = CoverageConfig(
        dgp=spec,
        rule=req.rule,
        ns=tuple(req.ns),
        reps=req.reps,
        alpha=req.alpha,
        grid=tuple(grid),
        estimators=tuple(req.estimators),
        band_kinds=("pointwise",) if req.band_source == "exact-bayes" else tuple(req.band_kinds),
        seed=req.seed,
        mc_samples=req.mc_samples,
        supt_draws=req.supt_draws,
        band_source=req.band_source,
    )
    report = coverage_experiment(cfg, workers=req.workers)
    return CoverageResponse(
        dgp=report.dgp,
        alpha=report.alpha,
        cells=[CoverageCellModel(**vars(c)) for c in report.cells],
        failures=list(report.failures),
        records=[dict(r) for r in report.records] if req.include_records else None,
    )


def handle_gap(req: GapRequest) -> GapResponse:
    spec = req.dgp.to_spec()
    cfg_kwargs = dict(
        dgp=spec, rule=req.rule, ns=tuple(req.ns), alpha=req.alpha,
        estimator=req.estimator, seed=req.seed,
        mc_samples=req.mc_samples, supt_draws=req.supt_draws,
    )
    if req.grid:
        cfg_kwargs["grid"] = tuple(float(x) for x in req.grid)
    cfg = GapConfig(**cfg_kwargs)
    runs = gap_experiment(cfg)
    event = cfg.dgp.default_event
    return GapResponse(
        grid=list(cfg.grid),
        event=event,
        runs=[
            GapRunModel(
                n=r.n,
                data=DatasetModel.from_table(r.context),
                pointwise=BandModel.from_band(r.bands["pointwise"]),
                sup_t=BandModel.from_band(r.bands["sup-t"]),
            )
            for r in runs
        ],
    )


def _rollout_config(req) -> RolloutConfig:
    return RolloutConfig(
        n0=req.n0,
        n_end=req.n_end,
        support=tuple(req.support),
        support_probs=tuple(req.support_probs) if req.support_probs else None,
        query_x=req.query_x,
        seed=req.seed,
    )


def handle_diagnose(req: DiagnoseRequest) -> DiagnoseResponse:
    rule = parse_rule(req.rule, TaskKind.binary())
    report = diagnose(
        rule, _rollout_config(req), rollouts=req.rollouts,
        tail_count=req.tail_count, workers=req.workers,
    )
    doc = report.to_json()
    traces = None
    if req.include_traces:
        traces = [
            TraceModel(
                rollout_id=tr.rollout_id,
                grid=[int(v) for v in tr.grid],
                b=[float(v) for v in tr.b],
                b2=[float(v) for v in tr.b2],
            )
            for tr in report.traces
        ]
    return DiagnoseResponse(
        beta_hat=doc["beta_hat"],
        ci=doc["ci"],
        gamma_med=doc["gamma_med"],
        grid=doc["grid"],
        mean_abs_b=doc["mean_abs_b"],
        mean_b2=doc["mean_b2"],
        s_trace=doc["S_trace"],
        t_trace=doc["T_trace"],
        flags=doc["flags"],
        traces=traces,
    )


def handle_rollout(req: RolloutRequest) -> RolloutResponse:
    rule = parse_rule(req.rule, TaskKind.binary())
    table = rollout(rule, _rollout_config(req))
    return RolloutResponse(data=DatasetModel.from_table(table))


def create_app():
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="predbands", version=__version__)

    def _handler(status):
        async def respond(request: Request, exc: Exception):
            return JSONResponse(status_code=status, content={"detail": str(exc)})
        return respond

    app.add_exception_handler(UsageError, _handler(422))
    app.add_exception_handler(DataError, _handler(400))
    app.add_exception_handler(RuleError, _handler(502))

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/bands", response_model=BandsResponse)
    def bands(req: BandsRequest) -> BandsResponse:
        return handle_bands(req)

    @app.post("/v1/entropy", response_model=EntropyResponse)
    def entropy(req: EntropyRequest) -> EntropyResponse:
        return handle_entropy(req)

    @app.post("/v1/entropy/profile", response_model=EntropyProfileResponse)
    def entropy_rows(req: EntropyProfileRequest) -> EntropyProfileResponse:
        return handle_entropy_profile(req)

    @app.post("/v1/dgp/sample", response_model=DgpSampleResponse)
    def dgp_sample(req: DgpSampleRequest) -> DgpSampleResponse:
        return handle_dgp_sample(req)

    @app.post("/v1/coverage", response_model=CoverageResponse)
    def coverage(req: CoverageRequest) -> CoverageResponse:
        return handle_coverage(req)

    @app.post("/v1/gap", response_model=GapResponse)
    def gap(req: GapRequest) -> GapResponse:
        return handle_gap(req)

    @app.post("/v1/diagnose", response_model=DiagnoseResponse)
    def diagnose_route(req: DiagnoseRequest) -> DiagnoseResponse:
        return handle_diagnose(req)

    @app.post("/v1/rollout", response_model=RolloutResponse)
    def rollout_route(req: RolloutRequest) -> RolloutResponse:
        return handle_rollout(req)

    return app
