"""Credible bands and uncertainty decomposition for one-step predictive rules.

The core objects: a ``ContextTable`` of observations, a ``PredictiveRule``
mapping any prefix of it to event probabilities, the permuted prefix
``Trajectory``, the ``vn``/``un`` covariance estimators, and the band and
entropy constructions built on top. ``harness`` orchestrates the experiment
families; ``service``/``cli`` expose them over HTTP and the command line.
"""

__version__ = "0.1.0"

from .bands import Band, pointwise_band, sample_mvn, supt_band
from .data import (
    BINARY,
    MULTICLASS,
    REGRESSION_CDF,
    ContextTable,
    Observation,
    PredictiveVector,
    QuerySpec,
    TaskKind,
    load_table,
    permute_rows,
    validate_context,
)
from .dgps import DGP_NAMES, DgpSpec, sample_dgp, sample_responses, sample_toy2d, true_target
from .diagnostics import (
    MomentTrace,
    RolloutConfig,
    conditional_moments,
    diagnose,
    gamma_fit,
    partial_sums,
    power_law_fit,
    rollout,
    tail_grid,
)
from .entropy import (
    UncertaintySplit,
    aleatoric_binary,
    aleatoric_multiclass,
    beta_moment_match,
    binary_entropy,
    decompose,
    delta_method_aleatoric,
    shannon_entropy,
)
from .errors import DataError, ProtocolError, RuleError, UsageError
from .estimators import (
    CovarianceEstimate,
    estimate_from_json,
    estimate_to_json,
    regularize_psd,
    un,
    vn,
)
from .harness import (
    CoverageConfig,
    CoverageReport,
    GapConfig,
    coverage_experiment,
    emit_report,
    entropy_profile,
    gap_experiment,
    load_report,
    real_data_pipeline,
)
from .remote import Capabilities, Endpoint, RemoteRule, handshake, remote_predict
from .rules import (
    BetaBernoulliRule,
    BetaPosterior,
    Binning,
    DirichletCategoricalRule,
    NormalCdfPosterior,
    NormalNormalRule,
    PredictiveRule,
    degenerate_fallback,
    parse_rule,
)
from .trajectory import Trajectory, build_trajectory, increments_matrix

__all__ = [name for name in dir() if not name.startswith("_")]
