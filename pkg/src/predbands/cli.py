"""Command-line surface.

Every subcommand builds the same request model the HTTP service accepts, then
either calls the in-process handler or, with --server, POSTs it to a running
service and renders the response identically. Exit codes: 0 success, 1 usage,
2 data error, 3 rule or protocol error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np
from pydantic import ValidationError

from .bands import BAND_CSV_COLUMNS
from .data import TaskKind, load_table
from .errors import DataError, RuleError, UsageError
from .harness import ENTROPY_CSV_COLUMNS, REPORT_CSV_COLUMNS
from .schemas import (
    BandsRequest,
    BandsResponse,
    CoverageRequest,
    CoverageResponse,
    DatasetModel,
    DgpModel,
    DgpSampleRequest,
    DgpSampleResponse,
    DiagnoseRequest,
    DiagnoseResponse,
    EntropyProfileRequest,
    EntropyProfileResponse,
    EntropyRequest,
    EntropyResponse,
    GapRequest,
    GapResponse,
    RolloutRequest,
    RolloutResponse,
    TaskModel,
)

_TASK_CHOICES = {"binary": "binary", "multiclass": "multiclass", "regression": "regression_cdf"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _grid(text: str) -> list[float]:
    """Either 'lo:hi:count' or an explicit comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid must be lo:hi:count, got {text!r}")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"grid must be lo:hi:count, got {text!r}") from None
        if count < 1:
            raise UsageError("grid count must be >= 1")
        return [float(x) for x in np.linspace(lo, hi, count)]
    return _floats(text)


def _json_arg(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON argument: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("JSON argument must be an object")
    return doc


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--server", help="base URL of a running service; runs in-process when absent")
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")


def _add_data_source(p: argparse.ArgumentParser):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--label-column", default="y")
    p.add_argument("--task", choices=sorted(_TASK_CHOICES), default="binary")
    p.add_argument("--classes", type=int, help="class count for --task multiclass")
    p.add_argument("--thresholds", type=_floats,
                   help="regression threshold grid (for one-step label resampling)")
    p.add_argument("--dgp", help="generator name instead of --data")
    p.add_argument("--n", type=int, help="sample size when drawing from --dgp")
    p.add_argument("--gap", action="store_true", help="gapped covariate variant of --dgp")
    p.add_argument("--dgp-params", type=_json_arg, default=None)
    p.add_argument("--dgp-threshold", type=float, default=None)


def _task_model(args) -> TaskModel:
    kind = _TASK_CHOICES[args.task]
    if kind == "multiclass" and not args.classes:
        raise UsageError("--task multiclass needs --classes")
    return TaskModel(kind=kind, n_classes=args.classes, thresholds=args.thresholds)


def _dataset_args(args) -> dict:
    """The data/dgp/n request fields shared by bands and entropy profiles."""
    if (args.data is None) == (args.dgp is None):
        raise UsageError("provide exactly one of --data or --dgp")
    if args.data is not None:
        task = _task_model(args).to_task()
        table, _ = load_table(args.data, args.label_column, task)
        return {"data": DatasetModel.from_table(table)}
    if args.n is None:
        raise UsageError("--dgp needs --n")
    return {
        "dgp": DgpModel(name=args.dgp, params=args.dgp_params or {},
                        gap=args.gap, threshold=args.dgp_threshold),
        "n": args.n,
    }


def _dgp_model(args) -> DgpModel:
    if not args.dgp:
        raise UsageError("--dgp is required")
    return DgpModel(name=args.dgp, params=args.dgp_params or {},
                    gap=args.gap, threshold=args.dgp_threshold)


def _call(server, path, req, resp_cls, local_fn):
    if not server:
        return local_fn(req)
    import httpx

    url = server.rstrip("/") + path
    try:
        r = httpx.post(url, json=req.model_dump(mode="json"), timeout=600.0)
    except httpx.HTTPError as exc:
        raise RuleError(f"request to {url} failed: {exc}") from exc
    if r.status_code == 200:
        return resp_cls.model_validate(r.json())
    try:
        detail = r.json().get("detail", r.text)
    except ValueError:
        detail = r.text
    if r.status_code == 422:
        raise UsageError(f"server rejected request: {detail}")
    if r.status_code == 400:
        raise DataError(str(detail))
    raise RuleError(f"server returned {r.status_code}: {detail}")


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _band_rows(resp: BandsResponse, estimator: str):
    for result in resp.results:
        if result.estimator != estimator:
            continue
        for band in (result.pointwise, result.sup_t):
            for j, x in enumerate(resp.grid):
                yield (j, repr(float(x)), resp.event, repr(band.center[j]),
                       repr(band.lower[j]), repr(band.upper[j]), band.kind, band.alpha)


def _cmd_bands(args) -> int:
    req = BandsRequest(
        rule=args.rule,
        grid=args.grid,
        event=args.event,
        alpha=args.alpha,
        estimator=args.estimator,
        seed=args.seed,
        mc_samples=args.mc_samples,
        supt_draws=args.supt_draws,
        stride=args.stride,
        **_dataset_args(args),
    )
    resp = _call(args.server, "/v1/bands", req, BandsResponse, _local("handle_bands"))
    if args.format == "json":
        _emit(resp.model_dump_json(indent=2) + "\n", args.out)
        return 0
    names = [r.estimator for r in resp.results]
    if len(names) == 1:
        _emit(_csv_text(BAND_CSV_COLUMNS, _band_rows(resp, names[0])), args.out)
        return 0
    if not args.out:
        raise UsageError("--estimator both needs --out to write one file per estimator")
    stem = args.out[:-4] if args.out.endswith(".csv") else args.out
    for name in names:
        with open(f"{stem}.{name}.csv", "w", encoding="utf-8") as fh:
            fh.write(_csv_text(BAND_CSV_COLUMNS, _band_rows(resp, name)))
    return 0


def _cmd_entropy(args) -> int:
    if args.g is not None or args.var is not None:
        if args.g is None or args.var is None:
            raise UsageError("--g and --var go together")
        g = args.g[0] if len(args.g) == 1 else args.g
        var = args.var[0] if len(args.var) == 1 else args.var
        req = EntropyRequest(g=g, var=var, method=args.method)
        resp = _call(args.server, "/v1/entropy", req, EntropyResponse, _local("handle_entropy"))
        _emit(resp.model_dump_json(indent=2) + "\n", args.out)
        return 0
    req = EntropyProfileRequest(
        rule=args.rule,
        grid=args.grid,
        event=args.event,
        estimator=args.estimator,
        method=args.method,
        seed=args.seed,
        mc_samples=args.mc_samples,
        **_dataset_args(args),
    )
    resp = _call(args.server, "/v1/entropy/profile", req, EntropyProfileResponse,
                 _local("handle_entropy_profile"))
    rows = [
        (repr(r.x), repr(r.total), repr(r.aleatoric), repr(r.epistemic), r.method)
        for r in resp.rows
    ]
    if args.format == "json":
        _emit(resp.model_dump_json(indent=2) + "\n", args.out)
    else:
        _emit(_csv_text(ENTROPY_CSV_COLUMNS, rows), args.out)
    return 0


def _cmd_coverage(args) -> int:
    reps = args.reps
    grid = args.grid
    if args.fast:
        reps = 30 if args.reps is None else args.reps
        grid = grid or [float(x) for x in np.linspace(-10.0, 10.0, 40)]
    elif reps is None:
        reps = 100
    estimators = ["vn", "un"] if args.estimator == "both" else [args.estimator]
    req = CoverageRequest(
        dgp=_dgp_model(args),
        rule=args.rule,
        ns=args.ns,
        reps=reps,
        alpha=args.alpha,
        grid=grid,
        estimators=estimators,
        band_kinds=["pointwise"] if args.band_source == "exact-bayes" else ["pointwise", "sup-t"],
        seed=args.seed,
        mc_samples=args.mc_samples,
        supt_draws=args.supt_draws,
        band_source=args.band_source,
        workers=args.workers,
        include_records=args.include_records,
    )
    resp = _call(args.server, "/v1/coverage", req, CoverageResponse, _local("handle_coverage"))
    if args.format == "csv":
        rows = [
            (resp.dgp, c.n, c.estimator, c.kind, repr(c.rate), repr(c.mean_width),
             c.reps, c.failed)
            for c in resp.cells
        ]
        _emit(_csv_text(REPORT_CSV_COLUMNS, rows), args.out)
    else:
        _emit(resp.model_dump_json(indent=2, exclude_none=True) + "\n", args.out)
    for line in resp.failures:
        print(f"warning: failed replication: {line}", file=sys.stderr)
    return 0


def _cmd_gap(args) -> int:
    req = GapRequest(
        dgp=_dgp_model(args),
        rule=args.rule,
        ns=args.ns,
        alpha=args.alpha,
        grid=args.grid,
        estimator=args.estimator,
        seed=args.seed,
        mc_samples=args.mc_samples,
        supt_draws=args.supt_draws,
    )
    resp = _call(args.server, "/v1/gap", req, GapResponse, _local("handle_gap"))
    from pathlib import Path

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for run in resp.runs:
        rows = []
        for band in (run.pointwise, run.sup_t):
            for j, x in enumerate(resp.grid):
                rows.append((j, repr(float(x)), resp.event, repr(band.center[j]),
                             repr(band.lower[j]), repr(band.upper[j]), band.kind, band.alpha))
        (out_dir / f"bands_{req.dgp.name}_n{run.n}.csv").write_text(
            _csv_text(BAND_CSV_COLUMNS, rows), encoding="utf-8"
        )
        data_rows = [
            (";".join(repr(float(v)) for v in x), y)
            for x, y in zip(run.data.xs, run.data.ys)
        ]
        (out_dir / f"data_{req.dgp.name}_n{run.n}.csv").write_text(
            _csv_text(("x", "y"), data_rows), encoding="utf-8"
        )
        print(f"n={run.n}: wrote bands and data CSVs to {out_dir}")
    return 0


def _cmd_diagnose(args) -> int:
    req = DiagnoseRequest(
        rule=args.rule,
        n0=args.n0,
        n_end=args.n_end,
        support=args.support,
        support_probs=args.support_probs,
        query_x=args.query_x,
        rollouts=args.rollouts,
        tail_count=args.tail_count,
        seed=args.seed,
        workers=args.workers,
        include_traces=bool(args.traces_csv),
    )
    resp = _call(args.server, "/v1/diagnose", req, DiagnoseResponse, _local("handle_diagnose"))
    if args.traces_csv and resp.traces is not None:
        rows = [
            (tr.rollout_id, n, repr(b), repr(b2))
            for tr in resp.traces
            for n, b, b2 in zip(tr.grid, tr.b, tr.b2)
        ]
        with open(args.traces_csv, "w", encoding="utf-8") as fh:
            fh.write(_csv_text(("rollout_id", "n", "b", "b2"), rows))
    doc = resp.model_dump(exclude={"traces"})
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def _cmd_rollout(args) -> int:
    req = RolloutRequest(
        rule=args.rule,
        n0=args.n0,
        n_end=args.n_end,
        support=args.support,
        support_probs=args.support_probs,
        query_x=args.query_x,
        seed=args.seed,
    )
    resp = _call(args.server, "/v1/rollout", req, RolloutResponse, _local("handle_rollout"))
    rows = [
        (";".join(repr(float(v)) for v in x), int(y))
        for x, y in zip(resp.data.xs, resp.data.ys)
    ]
    _emit(_csv_text(("x", "y"), rows), args.out)
    return 0


def _cmd_dgp(args) -> int:
    req = DgpSampleRequest(
        dgp=_dgp_model(args),
        n=args.n if args.n is not None else 100,
        seed=args.seed,
        with_truth=args.with_truth,
        truth_event=args.event,
    )
    resp = _call(args.server, "/v1/dgp/sample", req, DgpSampleResponse, _local("handle_dgp_sample"))
    if args.format == "json":
        _emit(resp.model_dump_json(indent=2, exclude_none=True) + "\n", args.out)
        return 0
    header = ["x", "y"] + (["truth"] if resp.truth is not None else [])
    rows = []
    for i, (x, y) in enumerate(zip(resp.data.xs, resp.data.ys)):
        row = [";".join(repr(float(v)) for v in x), repr(float(y))]
        if resp.truth is not None:
            row.append(repr(resp.truth[i]))
        rows.append(row)
    _emit(_csv_text(header, rows), args.out)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def _local(name):
    """Late import: subcommands that stay remote never load fastapi deps."""
    def call(req):
        from . import service

        return getattr(service, name)(req)
    return call


def build_parser() -> _Parser:
    parser = _Parser(prog="predbands",
                     description="Credible bands and uncertainty splits for "
                                 "one-step predictive rules")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_bands = sub.add_parser("bands", help="credible bands over a covariate grid")
    _add_data_source(p_bands)
    p_bands.add_argument("--rule", required=True)
    p_bands.add_argument("--grid", type=_grid)
    p_bands.add_argument("--event", type=float,
                         help="tracked class index or regression threshold")
    p_bands.add_argument("--alpha", type=float, default=0.05)
    p_bands.add_argument("--estimator", choices=("vn", "un", "both"), default="vn")
    p_bands.add_argument("--stride", type=int, default=1)
    p_bands.add_argument("--mc-samples", type=int, default=1000)
    p_bands.add_argument("--supt-draws", type=int, default=10_000)
    p_bands.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_common(p_bands)
    p_bands.set_defaults(fn=_cmd_bands)

    p_ent = sub.add_parser("entropy", help="total/aleatoric/epistemic split")
    _add_data_source(p_ent)
    p_ent.add_argument("--rule")
    p_ent.add_argument("--g", type=_floats, help="predictive mean(s); with --var, "
                       "skip the profile and decompose directly")
    p_ent.add_argument("--var", type=_floats, help="posterior variance(s)")
    p_ent.add_argument("--grid", type=_grid)
    p_ent.add_argument("--event", type=float)
    p_ent.add_argument("--method", choices=("beta", "dirichlet", "delta"), default="beta")
    p_ent.add_argument("--estimator", choices=("vn", "un"), default="vn")
    p_ent.add_argument("--mc-samples", type=int, default=1000)
    p_ent.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_common(p_ent)
    p_ent.set_defaults(fn=_cmd_entropy)

    p_cov = sub.add_parser("coverage", help="frequentist coverage study")
    _add_data_source(p_cov)
    p_cov.add_argument("--rule", required=True)
    p_cov.add_argument("--ns", type=_ints, default=[500],
                       help="comma-separated sample sizes")
    p_cov.add_argument("--reps", type=int, default=None)
    p_cov.add_argument("--alpha", type=float, default=0.05)
    p_cov.add_argument("--grid", type=_grid)
    p_cov.add_argument("--estimator", choices=("vn", "un", "both"), default="vn")
    p_cov.add_argument("--band-source", choices=("clt", "exact-bayes"), default="clt")
    p_cov.add_argument("--fast", action="store_true",
                       help="CI preset: 30 replications on a 40-point grid")
    p_cov.add_argument("--mc-samples", type=int, default=1000)
    p_cov.add_argument("--supt-draws", type=int, default=10_000)
    p_cov.add_argument("--workers", type=int)
    p_cov.add_argument("--include-records", action="store_true")
    p_cov.add_argument("--format", choices=("json", "csv"), default="json")
    _add_common(p_cov)
    p_cov.set_defaults(fn=_cmd_coverage)

    p_gap = sub.add_parser("gap", help="bands across a covariate gap, several n")
    _add_data_source(p_gap)
    p_gap.add_argument("--rule", required=True)
    p_gap.add_argument("--ns", type=_ints, default=[200, 500, 1000])
    p_gap.add_argument("--alpha", type=float, default=0.05)
    p_gap.add_argument("--grid", type=_grid)
    p_gap.add_argument("--estimator", choices=("vn", "un"), default="vn")
    p_gap.add_argument("--mc-samples", type=int, default=1000)
    p_gap.add_argument("--supt-draws", type=int, default=10_000)
    p_gap.add_argument("--out-dir", default="gap-out")
    _add_common(p_gap)
    p_gap.set_defaults(fn=_cmd_gap)

    p_diag = sub.add_parser("diagnose", help="quasi-martingale drift diagnostics")
    p_diag.add_argument("--rule", required=True)
    p_diag.add_argument("--n0", type=int, default=25)
    p_diag.add_argument("--n-end", type=int, default=1025)
    p_diag.add_argument("--support", type=_floats, default=[-1.0, 0.0, 1.0, 2.0])
    p_diag.add_argument("--support-probs", type=_floats)
    p_diag.add_argument("--query-x", type=float, default=0.0)
    p_diag.add_argument("--rollouts", type=int, default=100)
    p_diag.add_argument("--tail-count", type=int, default=100)
    p_diag.add_argument("--workers", type=int)
    p_diag.add_argument("--traces-csv", help="also dump per-rollout moment traces")
    _add_common(p_diag)
    p_diag.set_defaults(fn=_cmd_diagnose)

    p_roll = sub.add_parser("rollout", help="extend a context by the rule's own law")
    p_roll.add_argument("--rule", required=True)
    p_roll.add_argument("--n0", type=int, default=25)
    p_roll.add_argument("--n-end", type=int, default=1025)
    p_roll.add_argument("--support", type=_floats, default=[-1.0, 0.0, 1.0, 2.0])
    p_roll.add_argument("--support-probs", type=_floats)
    p_roll.add_argument("--query-x", type=float, default=0.0)
    _add_common(p_roll)
    p_roll.set_defaults(fn=_cmd_rollout)

    p_dgp = sub.add_parser("dgp", help="draw from a synthetic generator")
    p_dgp.add_argument("--dgp", required=True, help="generator name")
    p_dgp.add_argument("--n", type=int)
    p_dgp.add_argument("--gap", action="store_true")
    p_dgp.add_argument("--dgp-params", type=_json_arg, default=None)
    p_dgp.add_argument("--dgp-threshold", type=float, default=None)
    p_dgp.add_argument("--event", type=float, help="event for the --with-truth column")
    p_dgp.add_argument("--with-truth", action="store_true")
    p_dgp.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_common(p_dgp)
    p_dgp.set_defaults(fn=_cmd_dgp)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--config", help="JSON file of flag defaults")
    p_serve.set_defaults(fn=_cmd_serve)

    return parser


def _apply_config(parser: _Parser, argv) -> None:
    probe = _Parser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError("config file must hold a JSON object")
    # flag-spelled keys are accepted too: {"mc-samples": 500}
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    parser.set_defaults(**doc)
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in doc.items() if k in dests})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return 1
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        # mirror the service, which turns these into 422 responses
        first = exc.errors()[0]
        loc = ".".join(str(part) for part in first["loc"]) or "request"
        print(f"error: {loc}: {first['msg']}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except RuleError as exc:
        print(f"rule error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
