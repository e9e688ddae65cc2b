"""Identification of simulation-model parameters from response curves.

Latin Hypercube designs, Pearson sensitivity analysis, layered networks
trained by an evolutionary optimizer with restart zones, and a staged
identification pipeline that ties them together.
"""
__version__ = "0.1.0"

from .ann import Network, Topology, propagate
from .core import (
    CurveFeature,
    NormalizationRule,
    Parameter,
    ParameterSpace,
    ResponseCurve,
    extract_peak,
    extract_yield,
    normalize,
    denormalize,
    stress_at_strain,
)
from .doe import AnnealConfig, DesignMatrix, decorrelate, lhs_sample
from .errors import ComputeError, ConfigError, DataError, ParamIdError
from .grade import CerafConfig, Domain, GradeConfig, evolve
from .models import ExternalModel, ExternalModelSpec, SurrogateModel, SurrogateSpec, run_batch, surrogate_curve
from .pipeline import (
    IdentificationPlan,
    StageSpec,
    build_dataset,
    identify,
    run_plan,
    solve_coupled,
    train_stage,
    validate_stage,
)
from .stats import CurveBundle, pearson, peak_sensitivity, sensitivity_evolution

__all__ = [
    "AnnealConfig", "CerafConfig", "ComputeError", "ConfigError", "CurveBundle", "CurveFeature",
    "DataError", "DesignMatrix", "Domain", "ExternalModel", "ExternalModelSpec", "GradeConfig",
    "IdentificationPlan", "Network", "NormalizationRule", "Parameter", "ParameterSpace",
    "ParamIdError", "ResponseCurve", "StageSpec", "SurrogateModel", "SurrogateSpec", "Topology",
    "build_dataset", "decorrelate", "denormalize", "evolve", "extract_peak", "extract_yield",
    "identify", "lhs_sample", "normalize", "pearson", "peak_sensitivity", "propagate", "run_batch",
    "run_plan", "sensitivity_evolution", "solve_coupled", "stress_at_strain", "surrogate_curve",
    "train_stage", "validate_stage",
]


def data_path(name: str):
    """Path of a file shipped in the package's ``data`` directory."""
    from importlib.resources import files

    return files(__name__).joinpath("data", name)
