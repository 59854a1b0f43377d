"""End-to-end orchestration: simulate, route, correlate, fit, report, manifest.

A run is fully determined by its scenario (including the seed): emission
sampling consumes substreams of the scenario seed and detector routing uses
a separately derived stream, so artifacts are byte-identical across reruns.
The manifest records the config hash and artifact checksums instead of
timestamps for exactly that reason.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .correlator import CorrelationHistogram, TimeTagStream, auto_correlate, cross_correlate
from .fitter import FitConfig, FitResult, PhotophysicsReport, fit_g2, report_photophysics
from .kinetics import RateSet, steady_emission_rate
from .montecarlo import SimConfig, simulate_ensemble
from .optics import expected_channel_efficiencies, route_events
from .scenarios import Scenario
from .tagio import sha256_file, write_histogram_csv, write_json, write_time_tags

__all__ = [
    "RunManifest",
    "PipelineResult",
    "resolve_background",
    "acquire",
    "correlate_tags",
    "fit_histogram",
    "run_pipeline",
    "fit_to_mapping",
    "fit_from_mapping",
    "report_to_mapping",
    "report_from_mapping",
]

_ROUTE_SALT = 0x5EED


@dataclass(frozen=True)
class RunManifest:
    """Provenance of one pipeline run; deliberately free of wall-clock data."""

    config_sha256: str
    seed: int
    package_version: str
    artifacts: dict

    def to_mapping(self) -> dict:
        return {
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "package_version": self.package_version,
            "artifacts": self.artifacts,
        }


@dataclass(frozen=True)
class PipelineResult:
    scenario: Scenario
    background_rate: float
    rho_effective: float
    histogram: CorrelationHistogram
    fit: FitResult | None
    report: PhotophysicsReport | None
    manifest: RunManifest
    paths: dict


def expected_signal_rate(scenario: Scenario) -> float:
    """Analytic detected signal rate on channel A in ns^-1."""
    eff_a, _ = expected_channel_efficiencies(
        scenario.routing_geometry, scenario.budget, scenario.mix, scenario.routing_mode)
    return scenario.n_emitters * steady_emission_rate(scenario.rates) * eff_a


def resolve_background(scenario: Scenario) -> tuple[float, float]:
    """Per-detector background rate (ns^-1) and the resulting signal fraction.

    A target rho is converted into the background level that produces it for
    this scenario's analytic signal rate; an explicit background_rate is
    taken as-is.
    """
    signal = expected_signal_rate(scenario)
    if scenario.rho is not None:
        if scenario.rho <= 0.0:
            raise ValueError("rho = 0 is unreachable: it would need infinite background")
        background = signal * (1.0 - scenario.rho) / scenario.rho
        return background, scenario.rho
    background = scenario.background_rate or 0.0
    rho_eff = signal / (signal + background) if signal + background > 0.0 else 1.0
    return background, rho_eff


def acquire(scenario: Scenario) -> tuple[TimeTagStream, TimeTagStream, dict]:
    """Simulate emission and detection; returns both channels plus run info."""
    background, rho_eff = resolve_background(scenario)
    events = simulate_ensemble(SimConfig(
        duration=scenario.duration_ns,
        seed=scenario.seed,
        n_emitters=scenario.n_emitters,
        rates=scenario.rates,
        background_rate=background,
    ))
    routed = route_events(
        events,
        scenario.routing_geometry,
        scenario.budget,
        scenario.mix,
        np.random.SeedSequence(entropy=(scenario.seed, _ROUTE_SALT)),
        mode=scenario.routing_mode,
        jitter_sigma_ns=scenario.jitter_sigma_ns,
    )
    a = TimeTagStream(routed.tags_a, "A", routed.duration_ps)
    b = TimeTagStream(routed.tags_b, "B", routed.duration_ps)
    info = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "fiber_config": scenario.fiber_config,
        "correlation": scenario.correlation_kind,
        "n_events": routed.n_events,
        "background_rate_per_ns": background,
        "rho_effective": rho_eff,
        "bin_width_ps": scenario.bin_width_ps,
        "window_ps": scenario.window_ps,
        "fit": {"k12": scenario.fit_k12, "max_iterations": scenario.fit_max_iterations,
                "inversion": scenario.fit_inversion},
        "n_emitters": scenario.n_emitters,
    }
    return a, b, info


def correlate_tags(
    a: TimeTagStream,
    b: TimeTagStream,
    kind: str,
    window_ps: int,
    bin_width_ps: int,
) -> CorrelationHistogram:
    """Histogram the two channels; same-point runs pool the channels first."""
    if kind == "cross":
        return cross_correlate(a, b, window_ps, bin_width_ps)
    if kind != "auto":
        raise ValueError(f"correlation kind must be 'auto' or 'cross', got {kind!r}")
    tags = np.sort(np.concatenate([a.tags, b.tags]))
    pooled = TimeTagStream(tags, a.channel_label, min(a.duration, b.duration))
    return auto_correlate(pooled, window_ps, bin_width_ps)


def fit_histogram(hist: CorrelationHistogram, max_iterations: int = 200) -> FitResult:
    config = FitConfig.from_histogram(hist, max_iterations=max_iterations)
    return fit_g2(hist, config)


def _config_sha256(scenario: Scenario) -> str:
    canonical = json.dumps(scenario.to_mapping(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def fit_to_mapping(fit: FitResult) -> dict:
    return {
        "params": dict(zip(("gamma1", "gamma2", "beta", "c"), fit.params)),
        "errors": dict(zip(("gamma1", "gamma2", "beta", "c"), fit.errors)),
        "covariance": [[float(v) for v in row] for row in fit.covariance],
        "chi2_reduced": fit.chi2_reduced,
        "converged": fit.converged,
        "n_iterations": fit.n_iterations,
        "n_points": fit.n_points,
        "diagnostics": {k: v for k, v in fit.diagnostics.items() if k != "cost_history"},
    }


def fit_from_mapping(payload: dict) -> FitResult:
    params = payload["params"]
    return FitResult(
        params=tuple(float(params[k]) for k in ("gamma1", "gamma2", "beta", "c")),
        covariance=np.asarray(payload["covariance"], dtype=float),
        chi2_reduced=float(payload["chi2_reduced"]),
        converged=bool(payload["converged"]),
        n_iterations=int(payload["n_iterations"]),
        n_points=int(payload["n_points"]),
        diagnostics=dict(payload.get("diagnostics", {})),
    )


def report_to_mapping(report: PhotophysicsReport) -> dict:
    return {
        "rates_per_ns": {"k12": report.rates.k12, "k21": report.rates.k21,
                         "k23": report.rates.k23, "k31": report.rates.k31},
        "tau12_ns": report.tau12,
        "tau21_ns": report.tau21,
        "tau23_ns": None if report.tau23 == float("inf") else report.tau23,
        "tau31_ns": report.tau31,
        "quantum_yield": report.quantum_yield,
        "errors": report.errors,
        "no_shelving": report.no_shelving,
        "c_fitted": report.c_fitted,
        "c_expected": report.c_expected,
        "inversion": report.inversion,
    }


def report_from_mapping(payload: dict) -> PhotophysicsReport:
    rates = payload["rates_per_ns"]
    tau23 = payload["tau23_ns"]
    return PhotophysicsReport(
        rates=RateSet(float(rates["k12"]), float(rates["k21"]),
                      float(rates["k23"]), float(rates["k31"])),
        tau12=float(payload["tau12_ns"]),
        tau21=float(payload["tau21_ns"]),
        tau23=float("inf") if tau23 is None else float(tau23),
        tau31=float(payload["tau31_ns"]),
        quantum_yield=float(payload["quantum_yield"]),
        errors=dict(payload.get("errors", {})),
        no_shelving=bool(payload["no_shelving"]),
        c_fitted=float(payload["c_fitted"]),
        c_expected=None if payload.get("c_expected") is None else float(payload["c_expected"]),
        inversion=str(payload["inversion"]),
    )


def run_pipeline(scenario: Scenario, out_dir) -> PipelineResult:
    """Full chain: simulate -> route -> correlate -> fit -> report -> manifest.

    Writes all artifacts under out_dir using the scenario name as the stem
    and returns the in-memory results alongside the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = scenario.name
    paths: dict[str, Path] = {}

    a, b, info = acquire(scenario)
    paths["tags"] = write_time_tags(out / f"{stem}.ttag", a, b, metadata=info)
    paths["tags_sidecar"] = Path(str(paths["tags"]) + ".json")

    hist = correlate_tags(a, b, scenario.correlation_kind,
                          scenario.window_ps, scenario.bin_width_ps)
    paths["histogram"] = write_histogram_csv(out / f"{stem}_g2.csv", hist, metadata=info)
    paths["histogram_sidecar"] = Path(str(paths["histogram"]) + ".json")

    fit = fit_histogram(hist, scenario.fit_max_iterations)
    report = None
    if scenario.fit_k12 is not None and fit.converged:
        report = report_photophysics(
            fit, scenario.fit_k12, scenario.n_emitters, info["rho_effective"],
            inversion=scenario.fit_inversion)

    fit_payload = {
        "scenario": scenario.name,
        "fit": fit_to_mapping(fit),
        "report": None if report is None else report_to_mapping(report),
        "context": {
            "k12": scenario.fit_k12,
            "inversion": scenario.fit_inversion,
            "n_emitters": scenario.n_emitters,
            "rho_effective": info["rho_effective"],
        },
    }
    paths["fit"] = write_json(out / f"{stem}_fit.json", fit_payload)
    if report is not None:
        paths["report"] = out / f"{stem}_report.txt"
        paths["report"].write_text(report.format_table(scenario.name) + "\n")

    artifact_records = {
        name: {
            "path": p.name,
            "bytes": p.stat().st_size,
            "sha256": sha256_file(p),
        }
        for name, p in sorted(paths.items())
    }
    manifest = RunManifest(
        config_sha256=_config_sha256(scenario),
        seed=scenario.seed,
        package_version=__version__,
        artifacts=artifact_records,
    )
    paths["manifest"] = write_json(out / f"{stem}_manifest.json", manifest.to_mapping())
    return PipelineResult(
        scenario=scenario,
        background_rate=info["background_rate_per_ns"],
        rho_effective=info["rho_effective"],
        histogram=hist,
        fit=fit,
        report=report,
        manifest=manifest,
        paths=paths,
    )
