"""Command-line surface: featurize -> fit -> effects / curve / simulate, plus synth.

Exit codes: 0 success, 2 input or validation problem, 3 join/consistency
failure, 4 internal error. All randomness flows from --seed; verbosity is
controlled by the VOLATIX_LOG environment variable (DEBUG, INFO, WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import estimation, inference, io, synthetic
from .errors import (CollinearCovariate, InvalidParameter, InvalidScenario, InvalidTarget,
                     JoinError, LayoutError, NotFitted, SchemaError, VolatixError)
from .model import ChoiceDataset, ModelSpec, ParameterSet

logger = logging.getLogger("volatix.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_JOIN = 3
EXIT_INTERNAL = 4


def _configure_logging():
    level = os.environ.get("VOLATIX_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed overriding any seed in spec/config files")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for likelihood evaluation (does not change results)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="report format for effects/curve/simulate outputs")
    parser.add_argument("--out", required=True, help="output directory")


def _write_records(records, out_dir: Path, stem: str, fmt: str) -> Path:
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        with open(path, "w") as fh:
            json.dump(records, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        path = out_dir / f"{stem}.csv"
        pd.DataFrame.from_records(records).to_csv(path, index=False, float_format="%.12g")
    return path


def _load_spec(path, seed):
    spec = io.read_spec(path)
    if seed is not None:
        spec = ModelSpec(model_class=spec.model_class, layout=spec.layout,
                         scale_covariates=spec.scale_covariates, n_draws=spec.n_draws,
                         draw_scheme=spec.draw_scheme, seed=int(seed))
    return spec


def _load_tables(args):
    features = io.read_features(args.features)
    attributes = io.read_attributes(args.attributes)
    return features, attributes


def _known_covariates(dataset: ChoiceDataset):
    names = [n for n in (*dataset.crash_names, *dataset.near_crash_names) if n != "const"]
    return tuple(dict.fromkeys(names))


def _check_covariate(dataset, covariate):
    if covariate not in _known_covariates(dataset):
        raise SchemaError(f"unknown covariate {covariate!r}; valid names: "
                          f"{', '.join(_known_covariates(dataset))}")


# ---------------------------------------------------------------------------
# Commands


def cmd_featurize(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces = io.read_traces(args.traces, args.events)
    if not traces:
        logger.warning("no events found in %s; writing empty feature file", args.traces)
    frame, rejects = io.featurize_traces(traces)
    features_path = out_dir / "features.csv"
    io.write_features(frame, features_path)
    outputs = [features_path]
    rejects_path = out_dir / "rejects.csv"
    pd.DataFrame(rejects, columns=["event_id", "reason"]).to_csv(rejects_path, index=False)
    outputs.append(rejects_path)
    if rejects:
        logger.warning("%d events rejected by censoring; see %s", len(rejects), rejects_path)
    io.write_manifest(out_dir, "featurize", [args.traces, args.events], outputs, seed=args.seed)
    print(f"featurize: {len(frame)} events featurized, {len(rejects)} rejected")
    return EXIT_OK


def cmd_fit(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _load_spec(args.spec, args.seed)
    features, attributes = _load_tables(args)
    dataset = io.dataset_from_tables(features, attributes, spec)
    result = estimation.fit(spec, dataset, standardize=args.standardize, n_threads=args.threads)
    fit_path = out_dir / "fit.json"
    io.write_fit_result(result, fit_path)
    io.write_manifest(out_dir, "fit", [args.spec, args.features, args.attributes], [fit_path],
                      seed=spec.seed)
    print(result.summary())
    if not result.converged:
        logger.warning("fit did not converge (gradient norm %.3g)", result.gradient_norm)
    return EXIT_OK


def _inference_setup(args):
    result = io.read_fit_result(args.fit)
    features, attributes = _load_tables(args)
    dataset = io.dataset_from_tables(features, attributes, result.spec)
    if not result.converged and not args.force:
        raise NotFitted("fit did not converge; rerun with --force to analyze it anyway")
    return result, dataset


def cmd_effects(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result, dataset = _inference_setup(args)
    covariates = args.covariates.split(",") if args.covariates else None
    if covariates:
        for cov in covariates:
            _check_covariate(dataset, cov)
    table = inference.marginal_effects(result, dataset, covariates=covariates,
                                       n_threads=args.threads, force=True)
    path = _write_records(table.to_records(), out_dir, "effects", args.format)
    io.write_manifest(out_dir, "effects", [args.fit, args.features, args.attributes], [path],
                      seed=result.spec.seed)
    print(f"effects: {len(table.rows)} covariate-utility rows -> {path}")
    return EXIT_OK


def cmd_curve(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result, dataset = _inference_setup(args)
    _check_covariate(dataset, args.covariate)
    if args.grid:
        grid = np.asarray([float(v) for v in args.grid.split(",")])
    else:
        grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    curve = inference.probability_curve(result, dataset, args.covariate, grid,
                                        target=args.target, n_threads=args.threads, force=True)
    for note in curve.warnings:
        logger.warning("%s", note)
    path = _write_records(curve.to_records(), out_dir, "curve", args.format)
    io.write_manifest(out_dir, "curve", [args.fit, args.features, args.attributes], [path],
                      seed=result.spec.seed)
    print(f"curve: {len(curve.grid)} grid points x 3 outcomes -> {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result, dataset = _inference_setup(args)
    _check_covariate(dataset, args.covariate)
    if args.scheme == "paper":
        perturbations = inference.reduction_scheme(args.covariate, args.target)
    elif args.sd is not None:
        perturbations = [inference.Perturbation(args.covariate, "sd", args.sd, args.target)]
    else:
        percent = args.percent if args.percent is not None else 0.0
        perturbations = [inference.Perturbation(args.covariate, "percent", percent / 100.0, args.target)]
    scenarios = inference.run_scenarios(result, dataset, perturbations,
                                        denominator=args.denominator, n_threads=args.threads,
                                        force=True)
    records = [rec for sc in scenarios for rec in sc.to_records()]
    path = _write_records(records, out_dir, "scenarios", args.format)
    io.write_manifest(out_dir, "simulate", [args.fit, args.features, args.attributes], [path],
                      seed=result.spec.seed)
    print(f"simulate: {len(scenarios)} scenario rows (incl. baseline) -> {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.config) as fh:
        doc = json.load(fh)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    outputs = []
    if args.kind == "dataset":
        try:
            spec = io.spec_from_dict(doc["spec"])
            params = ParameterSet(
                beta_crash=doc["params"]["beta_crash"],
                beta_near_crash=doc["params"]["beta_near_crash"],
                omega_sd=doc["params"].get("omega_sd", ()),
                theta=doc["params"].get("theta", ()),
                tau=float(doc["params"].get("tau", 0.0)),
                kappa_raw=(ParameterSet.kappa_to_raw(doc["params"]["kappa"])
                           if "kappa" in doc["params"] else float(doc["params"].get("kappa_raw", 0.0))),
            )
            config = synthetic.GeneratorConfig(
                spec=spec, params=params, n_events=int(doc["n_events"]),
                covariates=doc.get("covariates", {}), seed=int(seed))
        except KeyError as exc:
            raise SchemaError(f"generator config: missing key {exc}") from exc
        frame = synthetic.covariate_frame(config)
        path = out_dir / "attributes.csv"
        frame.to_csv(path, index=False, float_format="%.12g")
        outputs.append(path)
        print(f"synth: {len(frame)} events -> {path}")
    else:
        try:
            config = synthetic.TraceConfig(**{**doc, "seed": int(seed)})
        except TypeError as exc:
            raise SchemaError(f"trace config: {exc}") from exc
        traces = synthetic.generate_traces(config)
        traces_path = out_dir / "traces.csv"
        events_path = out_dir / "events.csv"
        io.write_traces(traces, traces_path, events_path)
        outputs.extend([traces_path, events_path])
        print(f"synth: {len(traces)} traces -> {traces_path}")
    io.write_manifest(out_dir, "synth", [args.config], outputs, seed=seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volatix",
        description="Driving-volatility features and generalized mixed logit crash-propensity models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="compute volatility indices from trace CSVs")
    p.add_argument("--traces", required=True)
    p.add_argument("--events", default=None, help="sidecar CSV with reaction/impact times")
    _add_common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("fit", help="fit a choice model by maximum simulated likelihood")
    p.add_argument("--features", required=True)
    p.add_argument("--attributes", required=True)
    p.add_argument("--spec", required=True, help="model spec JSON")
    p.add_argument("--standardize", action="store_true",
                   help="scale continuous covariates during optimization")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("effects", help="average marginal effects from a fitted model")
    p.add_argument("--fit", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--attributes", required=True)
    p.add_argument("--covariates", default=None, help="comma-separated subset")
    p.add_argument("--force", action="store_true", help="analyze a non-converged fit")
    _add_common(p)
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("curve", help="mean probability curves over a covariate grid")
    p.add_argument("--fit", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--attributes", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--target", choices=("crash", "near_crash", "both"), default="both")
    p.add_argument("--grid", default=None, help="comma-separated grid values")
    p.add_argument("--grid-min", type=float, default=0.0)
    p.add_argument("--grid-max", type=float, default=2.0)
    p.add_argument("--grid-points", type=int, default=50)
    p.add_argument("--force", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("simulate", help="outcome-share forecasting under covariate perturbations")
    p.add_argument("--fit", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--attributes", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--target", choices=("crash", "near_crash"), default="crash")
    p.add_argument("--scheme", choices=("paper",), default=None,
                   help="preset: 10%%-50%% decreases in 10%% steps plus 1 and 2 SD decreases")
    p.add_argument("--percent", type=float, default=None, help="single percent decrease (10 = -10%%)")
    p.add_argument("--sd", type=float, default=None, help="single decrease in sample SDs")
    p.add_argument("--denominator", type=int, default=None,
                   help="event count used to convert shares to predicted counts")
    p.add_argument("--force", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="generate synthetic datasets or traces")
    p.add_argument("--kind", choices=("dataset", "traces"), required=True)
    p.add_argument("--config", required=True, help="generator config JSON")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, InvalidParameter, InvalidTarget, InvalidScenario,
            LayoutError, CollinearCovariate, NotFitted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except JoinError as exc:
        print(f"error: incomplete join: {exc}", file=sys.stderr)
        return EXIT_JOIN
    except VolatixError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
