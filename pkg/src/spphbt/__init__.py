"""Simulation and inference for two-detector intensity correlations of few-emitter sources."""

__version__ = "0.1.0"

from .correlator import (
    CorrelationHistogram,
    TimeTagStream,
    auto_correlate,
    cross_correlate,
    swap_symmetry_check,
)
from .fitter import (
    FitConfig,
    FitResult,
    PhotophysicsReport,
    dip_width_compare,
    fit_curve,
    fit_g2,
    report_photophysics,
)
from .kinetics import (
    DerivedParams,
    EnsembleConfig,
    Populations,
    RateSet,
    conditional_intensity,
    derived_params,
    exact_decay_params,
    exact_invert_rates,
    g2_model,
    g2_zero,
    invert_rates,
    quantum_yield,
    steady_emission_rate,
    steady_state,
)
from .montecarlo import (
    BACKGROUND_ID,
    EmissionEvent,
    EventStream,
    SimConfig,
    poisson_background,
    simulate_emitter,
    simulate_ensemble,
    simulate_trajectory,
)
from .optics import (
    DetectionGeometry,
    DipoleMix,
    EfficiencyBudget,
    collection_fraction,
    coupling_ratio,
    expected_channel_efficiencies,
    route_events,
    scenario_budget,
    spp_ring_na,
)
from .pipeline import PipelineResult, RunManifest, run_pipeline
from .scenarios import (
    Scenario,
    budget_preset,
    builtin_scenario,
    builtin_scenario_names,
    geometry_preset,
    load_scenario,
    rate_preset,
    scenario_from_mapping,
    validate_config,
)
from .tagio import read_histogram_csv, read_time_tags, write_histogram_csv, write_time_tags

__all__ = [
    "__version__",
    "BACKGROUND_ID",
    "CorrelationHistogram",
    "DerivedParams",
    "DetectionGeometry",
    "DipoleMix",
    "EfficiencyBudget",
    "EmissionEvent",
    "EnsembleConfig",
    "EventStream",
    "FitConfig",
    "FitResult",
    "PhotophysicsReport",
    "PipelineResult",
    "Populations",
    "RateSet",
    "RunManifest",
    "Scenario",
    "SimConfig",
    "TimeTagStream",
    "auto_correlate",
    "budget_preset",
    "builtin_scenario",
    "builtin_scenario_names",
    "collection_fraction",
    "conditional_intensity",
    "coupling_ratio",
    "cross_correlate",
    "derived_params",
    "dip_width_compare",
    "exact_decay_params",
    "exact_invert_rates",
    "expected_channel_efficiencies",
    "fit_curve",
    "fit_g2",
    "g2_model",
    "g2_zero",
    "geometry_preset",
    "invert_rates",
    "load_scenario",
    "poisson_background",
    "quantum_yield",
    "rate_preset",
    "read_histogram_csv",
    "read_time_tags",
    "report_photophysics",
    "route_events",
    "run_pipeline",
    "scenario_budget",
    "scenario_from_mapping",
    "simulate_emitter",
    "simulate_ensemble",
    "simulate_trajectory",
    "spp_ring_na",
    "steady_emission_rate",
    "steady_state",
    "swap_symmetry_check",
    "validate_config",
    "write_histogram_csv",
    "write_time_tags",
]
