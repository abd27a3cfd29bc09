"""Specification-driven design of free-form planar patch antennas."""

from importlib import resources

from .evaluators import (
    CachedEvaluator,
    EvaluationStore,
    ExternalEvaluator,
    FrequencySweep,
    ReflectionResponse,
    SyntheticEvaluator,
    SyntheticModelParams,
    cached,
)
from .features import FeatureSet, FeatureSpec, extract_features, find_local_extrema
from .geometry import (
    DesignBounds,
    DesignVector,
    GeometryConfig,
    build_geometry,
    check_consistency,
    derive_bounds,
    normalize_angles,
    random_design,
    template_bounds,
)
from .optimizer import (
    ObjectiveSpec,
    TrustRegionConfig,
    objective_feature,
    objective_minmax,
    optimize,
    optimize_minmax_benchmark,
    solve_subproblem,
)
from .screening import screen, score_minmax

__version__ = "0.1.0"


def load_reported_x0():
    """The 53-parameter initial design of the reported UWB case, as listed, rounded to two decimals."""
    text = resources.files(__package__).joinpath("data/x0_reported.txt").read_text()
    line = next(ln for ln in text.splitlines() if ln and not ln.startswith("#"))
    return DesignVector.from_line(line)

__all__ = [
    "CachedEvaluator", "EvaluationStore", "ExternalEvaluator", "FrequencySweep", "ReflectionResponse",
    "SyntheticEvaluator", "SyntheticModelParams", "cached",
    "FeatureSet", "FeatureSpec", "extract_features", "find_local_extrema",
    "DesignBounds", "DesignVector", "GeometryConfig", "build_geometry", "check_consistency", "derive_bounds",
    "normalize_angles", "random_design", "template_bounds",
    "ObjectiveSpec", "TrustRegionConfig", "objective_feature", "objective_minmax", "optimize",
    "optimize_minmax_benchmark", "solve_subproblem",
    "screen", "score_minmax", "load_reported_x0",
]
