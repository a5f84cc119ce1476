"""Risk-averse antibiotic treatment planning."""

from ._atm import (
    ConfigError,
    Genotype,
    GrowthRateDataset,
    ParseError,
    ScenarioSet,
    cvar,
    cvar_lp,
    dynamic_values,
    load_growth_rates,
    out_of_sample,
    run_experiment,
    sample_scenarios,
    solve_dynamic,
    solve_static,
    static_values,
    synth_dataset,
    transition_matrix,
)

__all__ = [
    "ConfigError",
    "Genotype",
    "GrowthRateDataset",
    "ParseError",
    "ScenarioSet",
    "cvar",
    "cvar_lp",
    "dynamic_values",
    "load_growth_rates",
    "out_of_sample",
    "run_experiment",
    "sample_scenarios",
    "solve_dynamic",
    "solve_static",
    "static_values",
    "synth_dataset",
    "transition_matrix",
]
