"""Vine-copula models for several event times censored by a terminal event."""

from vinemetic.copulas import (
    CopulaSpec,
    Family,
    alpha_from_tau,
    copula_cdf,
    copula_density,
    h_function,
    h_inverse,
    link_eval,
    tau_from_alpha,
)
from vinemetic.estimation import (
    FitConfig,
    FitError,
    FitResult,
    fit_all,
    fit_edge,
    fit_pair,
    fit_pair_pooled,
    fit_terminal,
    tau_unconditional,
)
from vinemetic.likelihood import IntegrationPolicy
from vinemetic.marginals import MarginalModel, MeticDataset, TransformationG, read_csv, write_csv
from vinemetic.simulation import Sim1Config, Sim2Config, simulate_nested_clayton, simulate_sim1
from vinemetic.vine import Edge, VineGraph, build_cvine, build_dvine

__version__ = "0.1.0"

__all__ = [
    "CopulaSpec", "Family", "alpha_from_tau", "copula_cdf", "copula_density", "h_function",
    "h_inverse", "link_eval", "tau_from_alpha",
    "FitConfig", "FitError", "FitResult", "fit_all", "fit_edge", "fit_pair", "fit_pair_pooled",
    "fit_terminal", "tau_unconditional",
    "IntegrationPolicy",
    "MarginalModel", "MeticDataset", "TransformationG", "read_csv", "write_csv",
    "Sim1Config", "Sim2Config", "simulate_nested_clayton", "simulate_sim1",
    "Edge", "VineGraph", "build_cvine", "build_dvine",
]
