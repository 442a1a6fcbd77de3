"""Persistent homology, cohomological flow layers and topology-regularised training."""

from .complex import (FilteredComplex, SparseFieldMatrix, boundary_matrix, build_from_weights, build_rips,
                      coboundary_matrix, cohomology_rank, hodge_laplacian)
from .errors import (CohoflowError, InvalidDimensionError, InvalidInputError, InvalidStateError,
                     NumericalOverflowError, ParseError, UndefinedCorrelationError, ZeroVarianceError)
from .flow import CochainState, FlowLayerParams, aggregate, flow_backward, flow_forward, init_state, stack_forward
from .metrics import betti_similarity, bottleneck_distance, wasserstein_distance
from .persistence import (BettiCurve, PersistenceDiagram, ReductionTranscript, betti_curve, compute_persistence,
                          naive_persistence)
from .training import CompositeLossConfig, FlowModel, TaskHead, composite_loss, gradient_check, train
from .vectorize import ImageParams, vectorize, vectorize_gradient

__version__ = "0.1.0"

__all__ = [
    "BettiCurve",
    "CochainState",
    "CohoflowError",
    "CompositeLossConfig",
    "FilteredComplex",
    "FlowLayerParams",
    "FlowModel",
    "ImageParams",
    "InvalidDimensionError",
    "InvalidInputError",
    "InvalidStateError",
    "NumericalOverflowError",
    "ParseError",
    "PersistenceDiagram",
    "ReductionTranscript",
    "SparseFieldMatrix",
    "TaskHead",
    "UndefinedCorrelationError",
    "ZeroVarianceError",
    "aggregate",
    "betti_curve",
    "betti_similarity",
    "bottleneck_distance",
    "boundary_matrix",
    "build_from_weights",
    "build_rips",
    "coboundary_matrix",
    "cohomology_rank",
    "composite_loss",
    "compute_persistence",
    "flow_backward",
    "flow_forward",
    "gradient_check",
    "hodge_laplacian",
    "init_state",
    "naive_persistence",
    "stack_forward",
    "train",
    "vectorize",
    "vectorize_gradient",
    "wasserstein_distance",
]
