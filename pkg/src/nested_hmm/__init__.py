"""Nested hidden Markov models for multilevel longitudinal data, fitted by pairwise likelihood."""

from nested_hmm.chain import AugmentedChain, build_tridiagonal, compose_augmented, pair_emission_vector
from nested_hmm.em import EmConfig, FitResult, e_step, fit, m_step_chain, m_step_regression, pairwise_loglik
from nested_hmm.errors import (
    ConfigError,
    DataError,
    NestedHMMError,
    ParameterError,
    SingularMatrixError,
    ZeroLikelihoodError,
)
from nested_hmm.forward_backward import PairPosterior, collapse_posteriors, forward_loglik, posteriors
from nested_hmm.model import (
    ClusterData,
    Constraint,
    ModelSpec,
    PanelDataset,
    ParameterSet,
    UnitData,
    flatten_parameters,
    unflatten_parameters,
    validate_dataset,
)

__version__ = "0.1.0"
