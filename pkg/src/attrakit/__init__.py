"""attrakit: detect, construct, and measure continuous attractors.

Spectral analysis of local Jacobians for recurrent-style dynamical
systems: equilibrium finding, numerical-rank based attractor dimensions,
ground-truth relu constructions, slow-fast trajectory diagnostics, and a
classifier probe tracking singular-value stratification during training.
"""

__version__ = "0.1.0"

from .construct import (
    ConstructedAttractor,
    ConstructionError,
    construct_relu_attractor,
    sample_attractor_points,
    verify_construction,
)
from .dynsys import (
    Activation,
    DynamicalSystem,
    KinkWarning,
    SystemForm,
    eval_field,
    jacobian_analytic,
    jacobian_fd,
    load_system,
    make_system,
    save_system,
)
from .equilibria import (
    EquilibriumReport,
    FunctionalDependence,
    attractor_dimension,
    dimension_from_dependence,
    find_equilibria,
    verify_dependence,
)
from .probe import (
    CvTrace,
    Dataset,
    TinyNet,
    TrainConfig,
    classifier_jacobian,
    load_idx,
    stratification_study,
    synth_blobs,
    train,
)
from .simulate import (
    SlowFastReport,
    Trajectory,
    integrate_rk4,
    iterate_map,
    sine_map_system,
    slow_fast_report,
)
from .spectral import (
    SpectrumReport,
    cv_metric,
    eig_spectrum,
    numerical_rank,
    svd_spectrum,
)

__all__ = [
    "__version__",
    "Activation",
    "ConstructedAttractor",
    "ConstructionError",
    "CvTrace",
    "Dataset",
    "DynamicalSystem",
    "EquilibriumReport",
    "FunctionalDependence",
    "KinkWarning",
    "SlowFastReport",
    "SpectrumReport",
    "SystemForm",
    "TinyNet",
    "TrainConfig",
    "Trajectory",
    "attractor_dimension",
    "classifier_jacobian",
    "construct_relu_attractor",
    "cv_metric",
    "dimension_from_dependence",
    "eig_spectrum",
    "eval_field",
    "find_equilibria",
    "integrate_rk4",
    "iterate_map",
    "jacobian_analytic",
    "jacobian_fd",
    "load_idx",
    "load_system",
    "make_system",
    "numerical_rank",
    "sample_attractor_points",
    "save_system",
    "sine_map_system",
    "slow_fast_report",
    "stratification_study",
    "svd_spectrum",
    "synth_blobs",
    "train",
    "verify_construction",
    "verify_dependence",
]
