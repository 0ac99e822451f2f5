"""Range-only localization lab: recursive filters, factor graphs, benchmarks."""

from .core import (
    DecompositionError,
    DomainError,
    EstimationError,
    GaussianBelief,
    LinearMeasurementModel,
    MeasurementModel,
    ProcessModel,
    RobustKernel,
    StateVector,
)
from .fgo import (
    FactorGraph,
    MeasurementFactor,
    PriorFactor,
    PropagationFactor,
    RankDeficiencyError,
    SlidingWindow,
    SolverOptions,
    assemble_normal_equations,
    gauss_newton_solve,
    marginalize_oldest,
    refgo_step,
    run_refgo,
    run_swfgo,
    swfgo_step,
)
from .kfv import (
    KfvVariant,
    ekf_update,
    iekf_update,
    kf_predict,
    kf_update,
    rekf_update,
    riekf_update,
    run_filter,
)
from .reports import EpochRecord, IterationTrace, RunReport
from .sim import DataScheme, Dataset, generate_dataset, named_scheme, read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "DataScheme",
    "Dataset",
    "DecompositionError",
    "DomainError",
    "EpochRecord",
    "EstimationError",
    "FactorGraph",
    "GaussianBelief",
    "IterationTrace",
    "KfvVariant",
    "LinearMeasurementModel",
    "MeasurementFactor",
    "MeasurementModel",
    "PriorFactor",
    "ProcessModel",
    "PropagationFactor",
    "RankDeficiencyError",
    "RobustKernel",
    "RunReport",
    "SlidingWindow",
    "SolverOptions",
    "StateVector",
    "assemble_normal_equations",
    "ekf_update",
    "gauss_newton_solve",
    "generate_dataset",
    "iekf_update",
    "kf_predict",
    "kf_update",
    "marginalize_oldest",
    "named_scheme",
    "read_dataset",
    "refgo_step",
    "rekf_update",
    "riekf_update",
    "run_filter",
    "run_refgo",
    "run_swfgo",
    "swfgo_step",
    "write_dataset",
]
