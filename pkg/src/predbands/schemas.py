"""Request and response models for the HTTP service and the thin-client CLI.

These are the only shapes crossing the wire between the CLI and the service;
every field mirrors a keyword of the underlying library call.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from .bands import Band
from .data import ContextTable, TaskKind
from .dgps import DgpSpec
from .errors import DataError


class TaskModel(BaseModel):
    kind: Literal["binary", "multiclass", "regression_cdf"] = "binary"
    n_classes: Optional[int] = None
    thresholds: Optional[list[float]] = None

    def to_task(self) -> TaskKind:
        if self.kind == "binary":
            return TaskKind.binary()
        if self.kind == "multiclass":
            if self.n_classes is None:
                raise DataError("multiclass task needs n_classes")
            return TaskKind.multiclass(self.n_classes)
        return TaskKind.regression(tuple(self.thresholds) if self.thresholds else None)

    @classmethod
    def from_task(cls, task: TaskKind) -> "TaskModel":
        return cls(
            kind=task.kind,
            n_classes=task.n_classes if task.is_classification else None,
            thresholds=list(task.thresholds) if task.thresholds else None,
        )


class DatasetModel(BaseModel):
    xs: list[list[float]]
    ys: list[float]
    task: TaskModel = Field(default_factory=TaskModel)

    def to_table(self) -> ContextTable:
        import numpy as np

        task = self.task.to_task()
        ys = np.asarray(self.ys)
        if task.is_classification:
            ys = ys.astype("int64")
        return ContextTable(np.asarray(self.xs, dtype="float64"), ys, task)

    @classmethod
    def from_table(cls, table: ContextTable) -> "DatasetModel":
        return cls(
            xs=table.xs.tolist(),
            ys=[float(v) for v in table.ys.tolist()],
            task=TaskModel.from_task(table.task),
        )


class DgpModel(BaseModel):
    name: str
    params: dict = Field(default_factory=dict)
    gap: bool = False
    threshold: Optional[float] = None

    def to_spec(self) -> DgpSpec:
        return DgpSpec(name=self.name, params=dict(self.params),
                       gap=self.gap, threshold=self.threshold)


class BandModel(BaseModel):
    kind: str
    alpha: float
    critical: Optional[float] = None
    center: list[float]
    lower: list[float]
    upper: list[float]

    @classmethod
    def from_band(cls, band: Band) -> "BandModel":
        crit = band.critical
        if crit is not None and crit != crit:  # NaN -> null
            crit = None
        return cls(
            kind=band.kind,
            alpha=band.alpha,
            critical=crit,
            center=[float(v) for v in band.center],
            lower=[float(v) for v in band.lower],
            upper=[float(v) for v in band.upper],
        )


class BandsRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rule: str
    data: Optional[DatasetModel] = None
    dgp: Optional[DgpModel] = None
    n: Optional[int] = None
    grid: Optional[list[float]] = None
    event: Optional[Union[float, int]] = None
    alpha: float = 0.05
    estimator: Literal["vn", "un", "both"] = "vn"
    seed: int = 0
    mc_samples: int = 1000
    supt_draws: int = 10_000
    stride: int = 1


class EstimatorBandsModel(BaseModel):
    estimator: str
    pointwise: BandModel
    sup_t: BandModel


class BandsResponse(BaseModel):
    n: int
    grid: list[float]
    event: Union[float, int]
    results: list[EstimatorBandsModel]


class EntropyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    g: Union[float, list[float]]
    var: Union[float, list[float]]
    method: Literal["beta", "dirichlet", "delta"] = "beta"


class EntropyResponse(BaseModel):
    total: float
    aleatoric: float
    epistemic: float
    method: str
    clipped: bool


class EntropyProfileRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rule: str
    data: Optional[DatasetModel] = None
    dgp: Optional[DgpModel] = None
    n: Optional[int] = None
    grid: Optional[list[float]] = None
    event: Optional[Union[float, int]] = None
    estimator: Literal["vn", "un"] = "vn"
    method: Literal["beta", "dirichlet", "delta"] = "beta"
    seed: int = 0
    mc_samples: int = 1000


class EntropyRow(BaseModel):
    x: float
    total: float
    aleatoric: float
    epistemic: float
    method: str


class EntropyProfileResponse(BaseModel):
    rows: list[EntropyRow]


class DgpSampleRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dgp: DgpModel
    n: int
    seed: int = 0
    with_truth: bool = False
    truth_event: Optional[Union[float, int]] = None


class DgpSampleResponse(BaseModel):
    data: DatasetModel
    truth: Optional[list[float]] = None


class CoverageRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dgp: DgpModel
    rule: str
    ns: list[int] = Field(default_factory=lambda: [500])
    reps: int = 100
    alpha: float = 0.05
    grid: Optional[list[float]] = None
    estimators: list[Literal["vn", "un"]] = Field(default_factory=lambda: ["vn"])
    band_kinds: list[Literal["pointwise", "sup-t"]] = Field(
        default_factory=lambda: ["pointwise", "sup-t"]
    )
    seed: int = 0
    mc_samples: int = 1000
    supt_draws: int = 10_000
    band_source: Literal["clt", "exact-bayes"] = "clt"
    workers: Optional[int] = None
    include_records: bool = False


class CoverageCellModel(BaseModel):
    n: int
    estimator: str
    kind: str
    rate: float
    mean_width: float
    reps: int
    failed: int


class CoverageResponse(BaseModel):
    dgp: str
    alpha: float
    cells: list[CoverageCellModel]
    failures: list[str]
    records: Optional[list[dict]] = None


class GapRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dgp: DgpModel
    rule: str
    ns: list[int] = Field(default_factory=lambda: [200, 500, 1000])
    alpha: float = 0.05
    grid: Optional[list[float]] = None
    estimator: Literal["vn", "un"] = "vn"
    seed: int = 0
    mc_samples: int = 1000
    supt_draws: int = 10_000


class GapRunModel(BaseModel):
    n: int
    data: DatasetModel
    pointwise: BandModel
    sup_t: BandModel


class GapResponse(BaseModel):
    grid: list[float]
    event: Union[float, int]
    runs: list[GapRunModel]


class DiagnoseRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rule: str
    n0: int = 25
    n_end: int = 1025
    support: list[float] = Field(default_factory=lambda: [-1.0, 0.0, 1.0, 2.0])
    support_probs: Optional[list[float]] = None
    query_x: float = 0.0
    rollouts: int = 100
    tail_count: int = 100
    seed: int = 0
    workers: Optional[int] = None
    include_traces: bool = False


class TraceModel(BaseModel):
    rollout_id: int
    grid: list[int]
    b: list[float]
    b2: list[float]


class DiagnoseResponse(BaseModel):
    beta_hat: float
    ci: list[float]
    gamma_med: float
    grid: list[int]
    mean_abs_b: list[float]
    mean_b2: list[float]
    s_trace: list[float]
    t_trace: list[float]
    flags: dict
    traces: Optional[list[TraceModel]] = None


class RolloutRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rule: str
    n0: int = 25
    n_end: int = 1025
    support: list[float] = Field(default_factory=lambda: [-1.0, 0.0, 1.0, 2.0])
    support_probs: Optional[list[float]] = None
    query_x: float = 0.0
    seed: int = 0


class RolloutResponse(BaseModel):
    data: DatasetModel


class HealthResponse(BaseModel):
    status: str
    version: str
