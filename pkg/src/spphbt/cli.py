"""Command-line interface.

Subcommands mirror the pipeline stages and pipe into each other through
files: `simulate` writes time tags, `correlate` turns tags into a histogram,
`fit` turns a histogram into model parameters and a photophysics report,
`report` pretty-prints a stored fit, `validate` checks a scenario without
running it, and `run` does the whole chain.  The default output directory
comes from --out, falling back to the SPPHBT_OUT environment variable and
then ./spphbt_out.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError, EmptyStream, NonConvergence, UnknownScenario
from .fitter import report_photophysics
from .pipeline import (
    correlate_tags,
    fit_from_mapping,
    fit_histogram,
    fit_to_mapping,
    report_from_mapping,
    report_to_mapping,
    run_pipeline,
)
from .scenarios import builtin_scenario_names, validate_config
from .tagio import read_histogram_csv, read_time_tags, write_histogram_csv, write_json

OUT_ENV_VAR = "SPPHBT_OUT"


def _out_dir(value: str | None) -> Path:
    out = Path(value or os.environ.get(OUT_ENV_VAR) or "spphbt_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scenario_arg(source: str, seed: int | None):
    scenario, diagnostics = validate_config(source)
    if scenario is None:
        raise ConfigError(diagnostics)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    return scenario


def _cmd_validate(args) -> int:
    scenario, diagnostics = validate_config(args.scenario)
    if scenario is None:
        print(f"invalid scenario {args.scenario!r}:", file=sys.stderr)
        for line in diagnostics:
            print(f"  - {line}", file=sys.stderr)
        return 2
    t12, t21, t23, t31 = scenario.rates.lifetimes
    print(f"ok: {scenario.name}")
    print(f"  rates: tau12={t12:g} tau21={t21:g} tau23={t23:g} tau31={t31:g} ns")
    print(f"  n_emitters={scenario.n_emitters} duration={scenario.duration_ns:g} ns "
          f"seed={scenario.seed}")
    print(f"  fiber_config={scenario.fiber_config} correlation={scenario.correlation_kind}")
    return 0


def _cmd_simulate(args) -> int:
    scenario = _load_scenario_arg(args.scenario, args.seed)
    out = _out_dir(args.out)
    from .pipeline import acquire
    from .tagio import write_time_tags

    a, b, info = acquire(scenario)
    path = write_time_tags(out / f"{scenario.name}.ttag", a, b, metadata=info)
    print(f"wrote {path} ({len(a)} + {len(b)} tags, "
          f"rates {a.rate_hz:.0f}/{b.rate_hz:.0f} Hz)")
    return 0


def _cmd_correlate(args) -> int:
    a, b, meta = read_time_tags(args.tags)
    inner = meta.get("metadata", {})
    kind = args.kind or inner.get("correlation", "cross")
    window = args.window or int(inner.get("window_ps", 150_000))
    bins = args.bins or int(inner.get("bin_width_ps", 1000))
    hist = correlate_tags(a, b, kind, window, bins)
    out = _out_dir(args.out)
    stem = Path(args.tags).stem
    path = write_histogram_csv(out / f"{stem}_g2.csv", hist, metadata=inner)
    zero_bin = (0 - hist.lag_min) // hist.bin_width
    print(f"wrote {path} ({hist.n_bins} bins of {bins} ps, "
          f"g2(0) bin = {hist.g2[zero_bin]:.3f})")
    return 0


def _cmd_fit(args) -> int:
    hist, meta = read_histogram_csv(args.hist)
    fit = fit_histogram(hist, max_iterations=args.max_iterations)
    k12 = args.k12 if args.k12 is not None else (meta.get("fit") or {}).get("k12")
    inversion = args.inversion or (meta.get("fit") or {}).get("inversion", "model")
    report = None
    if k12 is not None and fit.converged:
        report = report_photophysics(
            fit, float(k12),
            int(meta.get("n_emitters", 1)),
            meta.get("rho_effective"),
            inversion=inversion,
        )
    payload = {
        "scenario": meta.get("scenario", Path(args.hist).stem),
        "fit": fit_to_mapping(fit),
        "report": None if report is None else report_to_mapping(report),
        "context": {"k12": k12, "inversion": inversion,
                    "n_emitters": meta.get("n_emitters", 1),
                    "rho_effective": meta.get("rho_effective")},
    }
    out = _out_dir(args.out)
    path = write_json(out / f"{Path(args.hist).stem}_fit.json", payload)
    g1, g2, beta, c = fit.params
    print(f"wrote {path}")
    print(f"  gamma1={g1:.5g} gamma2={g2:.5g} beta={beta:.4g} c={c:.4g} "
          f"(chi2_red={fit.chi2_reduced:.3g}, {'converged' if fit.converged else 'NOT converged'})")
    if report is not None:
        print(report.format_table(payload["scenario"]))
    return 0


def _cmd_report(args) -> int:
    import json

    payload = json.loads(Path(args.fit).read_text())
    # an explicit flag recomputes; the stored table only serves the bare call
    recompute = args.k12 is not None or args.inversion is not None
    if payload.get("report") and not recompute:
        report = report_from_mapping(payload["report"])
    else:
        k12 = args.k12 if args.k12 is not None else (payload.get("context") or {}).get("k12")
        if k12 is None:
            print("stored fit has no report; pass --k12 to compute one", file=sys.stderr)
            return 2
        fit = fit_from_mapping(payload["fit"])
        ctx = payload.get("context") or {}
        report = report_photophysics(
            fit, float(k12), int(ctx.get("n_emitters") or 1), ctx.get("rho_effective"),
            inversion=args.inversion or ctx.get("inversion", "model"))
    print(report.format_table(payload.get("scenario", "stored fit")))
    return 0


def _cmd_run(args) -> int:
    scenario = _load_scenario_arg(args.scenario, args.seed)
    result = run_pipeline(scenario, _out_dir(args.out))
    zero_bin = (0 - result.histogram.lag_min) // result.histogram.bin_width
    print(f"scenario {scenario.name}: {result.histogram.counts.sum()} pairs, "
          f"g2(0) bin = {result.histogram.g2[zero_bin]:.3f}")
    if result.fit is not None:
        g1, g2, beta, c = result.fit.params
        print(f"  fit: gamma1={g1:.5g} gamma2={g2:.5g} beta={beta:.4g} c={c:.4g}")
    if result.report is not None:
        print(result.report.format_table(scenario.name))
    print(f"  artifacts in {result.paths['manifest'].parent}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spphbt",
        description="Simulate and analyse two-detector correlation measurements "
                    "of few-emitter plasmonic sources.",
        epilog=f"builtin scenarios: {', '.join(builtin_scenario_names())}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_args(p):
        p.add_argument("--scenario", required=True,
                       help="YAML scenario file or builtin scenario name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV_VAR} or ./spphbt_out)")

    p = sub.add_parser("run", help="full pipeline: simulate, correlate, fit, report")
    add_scenario_args(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("simulate", help="generate detector time tags")
    add_scenario_args(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("correlate", help="histogram a tag file into g2(tau)")
    p.add_argument("--tags", required=True, help="TTAG file from simulate")
    p.add_argument("--bins", type=int, default=None, help="bin width in ps")
    p.add_argument("--window", type=int, default=None, help="max |lag| in ps")
    p.add_argument("--kind", choices=("auto", "cross"), default=None,
                   help="override the correlation kind stored with the tags")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("fit", help="fit the correlation model to a histogram")
    p.add_argument("--hist", required=True, help="histogram CSV from correlate")
    p.add_argument("--k12", type=float, default=None,
                   help="pump rate in ns^-1 for the rate inversion")
    p.add_argument("--inversion", choices=("model", "exact"), default=None)
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("report", help="print the photophysics table of a stored fit")
    p.add_argument("--fit", required=True, help="fit JSON file")
    p.add_argument("--k12", type=float, default=None)
    p.add_argument("--inversion", choices=("model", "exact"), default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("validate", help="check a scenario file and echo resolved values")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownScenario) as exc:
        if isinstance(exc, ConfigError):
            print("configuration error:", file=sys.stderr)
            for line in exc.diagnostics:
                print(f"  - {line}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EmptyStream, NonConvergence, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
