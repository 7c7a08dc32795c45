"""Experiment driver: studies, acceptance suite, config files and the CLI."""
from .acceptance import AcceptanceSuite, CriterionResult, run_acceptance
from .config import RunConfig, builtin_config, load_config, parse_config
from .studies import (ExperimentPlan, RunCache, bounds_study, cauchy_study,
                      contraction_study, doubling_study, increment_study,
                      vtilde_coupling_check)

__all__ = [
    "AcceptanceSuite", "CriterionResult", "run_acceptance",
    "RunConfig", "builtin_config", "load_config", "parse_config",
    "ExperimentPlan", "RunCache", "bounds_study", "cauchy_study", "contraction_study",
    "doubling_study", "increment_study", "vtilde_coupling_check",
]
