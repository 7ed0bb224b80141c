"""Marginal treatment effects for multivalued treatments chosen by threshold crossings."""

from .algebra import (
    AlgebraError,
    RulePolynomial,
    SelectionModel,
    ThresholdEventSet,
    builtin_model,
    check_partition,
    decompose,
    index_and_degree,
    leading_subsets,
)
from .copulas import Archimedean, GaussianCopula, Generator, Independence, LinearIndexLaw
from .dgp import DgpSpec, SampleSet, builtin, simulate, true_mte, true_propensity
from .expr import ExpressionError, parse_rule
from .flows import FlowVerdict, classify_flows, classify_model
from .mte import (
    IdentificationError,
    OracleSource,
    SampleSource,
    Transform,
    estimate_density,
    estimate_mte,
    estimate_zero_index,
    specification_test,
)
from .smoother import Grid, Surface, fit_many

__version__ = "0.1.0"

__all__ = [
    "AlgebraError", "Archimedean", "DgpSpec", "ExpressionError", "FlowVerdict", "GaussianCopula",
    "Generator", "Grid", "IdentificationError", "Independence", "LinearIndexLaw", "OracleSource",
    "RulePolynomial", "SampleSet", "SampleSource", "SelectionModel", "Surface", "ThresholdEventSet",
    "Transform", "builtin", "builtin_model", "check_partition", "classify_flows", "classify_model",
    "decompose", "estimate_density", "estimate_mte", "estimate_zero_index", "fit_many",
    "index_and_degree", "leading_subsets", "parse_rule", "simulate", "specification_test",
    "true_mte", "true_propensity",
]
