"""Driving-volatility features and generalized hierarchical mixed logit models."""

from . import errors
from .draws import DrawBlock, build_draw_block, draws_for, halton_sequence
from .estimation import (FitResult, fit, information_criteria, log_likelihood,
                         null_log_likelihood, simulated_probabilities, simulated_probability)
from .inference import (MarginalEffectTable, Perturbation, ProbabilityCurve, ScenarioResult,
                        apply_perturbation, marginal_effect, marginal_effects,
                        mean_probabilities, probability_curve, reduction_scheme,
                        run_scenarios, scenario_simulate)
from .kinematics import (CensoredTrace, EventTrace, EventType, VolatilityVector,
                         censor, coefficient_of_variation, derive_series,
                         sign_partition, volatility_indices)
from .model import (ChoiceDataset, Coefficient, CoefficientLayout, ModelClass, ModelSpec,
                    Outcome, ParameterSet, blend_coefficients, choice_probabilities,
                    scale_factor, utilities)
from .sklearn_api import GeneralizedMixedLogit, VolatilityFeaturizer
from .synthetic import CovariateSpec, GeneratorConfig, TraceConfig, generate, generate_traces

__version__ = "0.1.0"

__all__ = [
    "errors",
    "CensoredTrace", "EventTrace", "EventType", "VolatilityVector",
    "censor", "coefficient_of_variation", "derive_series", "sign_partition", "volatility_indices",
    "ChoiceDataset", "Coefficient", "CoefficientLayout", "ModelClass", "ModelSpec",
    "Outcome", "ParameterSet", "blend_coefficients", "choice_probabilities",
    "scale_factor", "utilities",
    "DrawBlock", "build_draw_block", "draws_for", "halton_sequence",
    "FitResult", "fit", "information_criteria", "log_likelihood",
    "null_log_likelihood", "simulated_probabilities", "simulated_probability",
    "MarginalEffectTable", "Perturbation", "ProbabilityCurve", "ScenarioResult",
    "apply_perturbation", "marginal_effect", "marginal_effects", "mean_probabilities",
    "probability_curve", "reduction_scheme", "run_scenarios", "scenario_simulate",
    "CovariateSpec", "GeneratorConfig", "TraceConfig", "generate", "generate_traces",
    "GeneralizedMixedLogit", "VolatilityFeaturizer",
]
