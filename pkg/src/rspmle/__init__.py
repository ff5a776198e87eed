"""Randomized shortest paths: path likelihoods and estimation of ``beta`` from trajectories."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._kernels import BACKEND
from .complete import (
    EdgeCostResult,
    MleResult,
    edge_cost_gradient,
    log_likelihood_complete,
    mle_beta_complete,
    mle_edge_costs,
)
from .graph import (
    CostField,
    Graph,
    GraphError,
    build_grid,
    gaussian_landscape,
    load_edge_list,
    load_raster,
    make_rng,
    save_edge_list,
    save_raster,
)
from .incomplete import (
    BinomialObservationModel,
    InconsistentDataError,
    SeriesCapError,
    SeriesConfig,
    SeriesUnderflowError,
    binomial_log_likelihood,
    likelihood_curve,
    log_likelihood_incomplete,
    mle_beta_incomplete,
    multi_edge_log_likelihood,
    multi_node_log_likelihood,
    observation_log_likelihood,
    one_edge_log_likelihood,
    one_node_log_likelihood,
)
from .quadrature import QuadratureConfig, quadrature_log_likelihoods
from .rsp import (
    BracketError,
    RspContext,
    RspError,
    UnreachableError,
    beta_for_relative_entropy,
    biased_transitions,
    expected_cost,
    expected_edge_traversals,
    expected_node_visits,
    hitting_partition_matrix,
    log_partition_function,
    partition_function,
    relative_entropy,
    rsp_betweenness,
)
from .sampler import (
    Observation,
    SamplingError,
    Trajectory,
    determine_endpoints,
    read_jsonl,
    sample_path,
    subsample_edges,
    subsample_nodes,
    write_jsonl,
)

__all__ = [name for name in dir() if not name.startswith("_")]
