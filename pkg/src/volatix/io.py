"""File formats: trace/event/feature/attribute CSVs, spec and fit JSON, manifests.

Trace CSV (long format): event_id, event_type, t_sec, speed_kph,
accel_long_mps2, accel_lat_mps2. Sidecar event CSV: event_id,
reaction_t_sec (optional), impact_t_sec (optional). Feature CSV: event_id,
event_type, then the ten volatility fields with empty cells for missing
components. Attribute CSV: event_id, outcome, covariate columns.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import JoinError, SchemaError
from .kinematics import FEATURE_NAMES, EventTrace, EventType, InsufficientData, volatility_indices
from .model import ChoiceDataset, Coefficient, CoefficientLayout, ModelClass, ModelSpec, ParameterSet
from .estimation import FitResult

TRACE_COLUMNS = ("event_id", "event_type", "t_sec", "speed_kph", "accel_long_mps2", "accel_lat_mps2")
EVENT_COLUMNS = ("event_id", "reaction_t_sec", "impact_t_sec")
FEATURE_COLUMNS = ("event_id", "event_type") + FEATURE_NAMES

TOOL_VERSION = "0.1.0"
_REL_TOL = 1e-6


def _require_columns(frame: pd.DataFrame, required, path) -> None:
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")


def _numeric_column(frame: pd.DataFrame, column: str, path) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = np.nonzero(~np.isfinite(values))[0]
    if bad.size:
        raise SchemaError(f"{path}: column {column!r} has non-numeric or non-finite "
                          f"values at rows {bad[:5].tolist()}")
    return values


def read_traces(traces_path, events_path=None) -> list[EventTrace]:
    """Load event traces from the long-format CSV plus the optional marker sidecar.

    Timestamps must be uniformly spaced within each event; the sample period
    is inferred from them. Reaction/impact times are converted to sample
    indices relative to each event's first timestamp.
    """
    traces_path = Path(traces_path)
    try:
        frame = pd.read_csv(traces_path)
    except pd.errors.EmptyDataError:
        return []
    _require_columns(frame, TRACE_COLUMNS, traces_path)
    markers = {}
    if events_path is not None:
        events_path = Path(events_path)
        side = pd.read_csv(events_path)
        _require_columns(side, ("event_id",), events_path)
        for _, row in side.iterrows():
            markers[str(row["event_id"])] = (
                row.get("reaction_t_sec", math.nan), row.get("impact_t_sec", math.nan))

    if frame.empty:
        return []
    t_sec = _numeric_column(frame, "t_sec", traces_path)
    speed = _numeric_column(frame, "speed_kph", traces_path)
    accel_long = _numeric_column(frame, "accel_long_mps2", traces_path)
    accel_lat = _numeric_column(frame, "accel_lat_mps2", traces_path)

    traces = []
    for event_id, idx in frame.groupby("event_id", sort=False).indices.items():
        idx = np.sort(np.asarray(idx))
        t = t_sec[idx]
        if len(t) < 2:
            raise SchemaError(f"{traces_path}: event {event_id!r} has fewer than 2 samples")
        order = np.argsort(t, kind="stable")
        t = t[order]
        steps = np.diff(t)
        dt = float(steps[0])
        if dt <= 0 or np.any(np.abs(steps - dt) > _REL_TOL * max(dt, 1.0)):
            raise SchemaError(f"{traces_path}: column 't_sec' is not uniformly spaced "
                              f"for event {event_id!r} (no gaps or duplicates allowed)")
        try:
            kind = EventType.parse(frame["event_type"].iloc[idx[0]])
        except ValueError as exc:
            raise SchemaError(f"{traces_path}: column 'event_type': {exc}") from exc

        reaction_idx = impact_idx = None
        if str(event_id) in markers:
            reaction_t, impact_t = markers[str(event_id)]
            t0 = t[0]
            if reaction_t is not None and not pd.isna(reaction_t):
                reaction_idx = int(round((float(reaction_t) - t0) / dt))
            if impact_t is not None and not pd.isna(impact_t):
                impact_idx = int(round((float(impact_t) - t0) / dt))
        sel = idx[order]
        try:
            traces.append(EventTrace(
                event_id=str(event_id), event_type=kind,
                speed=speed[sel], accel_longitudinal=accel_long[sel], accel_lateral=accel_lat[sel],
                sample_period=dt, reaction_index=reaction_idx, impact_index=impact_idx))
        except ValueError as exc:
            raise SchemaError(f"{traces_path}: event {event_id!r}: {exc}") from exc
    return traces


def write_traces(traces, traces_path, events_path=None) -> None:
    """Emit the long-format trace CSV (and marker sidecar) for a trace list."""
    rows = []
    marker_rows = []
    for tr in traces:
        t = np.arange(len(tr)) * tr.sample_period
        rows.append(pd.DataFrame({
            "event_id": tr.event_id, "event_type": tr.event_type.value, "t_sec": t,
            "speed_kph": tr.speed, "accel_long_mps2": tr.accel_longitudinal,
            "accel_lat_mps2": tr.accel_lateral}))
        marker_rows.append({
            "event_id": tr.event_id,
            "reaction_t_sec": "" if tr.reaction_index is None else tr.reaction_index * tr.sample_period,
            "impact_t_sec": "" if tr.impact_index is None else tr.impact_index * tr.sample_period})
    frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=TRACE_COLUMNS)
    frame.to_csv(traces_path, index=False, float_format="%.10g")
    if events_path is not None:
        pd.DataFrame(marker_rows, columns=EVENT_COLUMNS).to_csv(events_path, index=False, float_format="%.10g")


def featurize_traces(traces) -> tuple[pd.DataFrame, list[dict]]:
    """Volatility feature rows for each trace plus rejects with reasons."""
    rows, rejects = [], []
    for tr in traces:
        try:
            vec = volatility_indices(tr)
        except InsufficientData as exc:
            rejects.append({"event_id": tr.event_id, "reason": str(exc)})
            continue
        row = {"event_id": tr.event_id, "event_type": tr.event_type.value}
        row.update(vec.as_dict())
        rows.append(row)
    frame = pd.DataFrame(rows, columns=list(FEATURE_COLUMNS))
    return frame, rejects


def write_features(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.12g")


def read_features(path) -> pd.DataFrame:
    path = Path(path)
    frame = pd.read_csv(path)
    _require_columns(frame, FEATURE_COLUMNS, path)
    return frame


def read_attributes(path) -> pd.DataFrame:
    path = Path(path)
    frame = pd.read_csv(path)
    _require_columns(frame, ("event_id", "outcome"), path)
    return frame


def join_features_attributes(features: pd.DataFrame, attributes: pd.DataFrame) -> pd.DataFrame:
    """Inner-join the two tables on event_id, failing loudly on orphans."""
    f_ids = set(features["event_id"].astype(str))
    a_ids = set(attributes["event_id"].astype(str))
    orphans = sorted(f_ids.symmetric_difference(a_ids))
    if orphans:
        raise JoinError(orphans)
    features = features.copy()
    attributes = attributes.copy()
    features["event_id"] = features["event_id"].astype(str)
    attributes["event_id"] = attributes["event_id"].astype(str)
    return features.merge(attributes, on="event_id", how="inner", validate="one_to_one")


def dataset_from_tables(features: pd.DataFrame, attributes: pd.DataFrame, spec: ModelSpec) -> ChoiceDataset:
    joined = join_features_attributes(features, attributes)
    return ChoiceDataset.from_frame(joined, spec)


# ---------------------------------------------------------------------------
# JSON documents


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "model_class": spec.model_class.value,
        "coefficients": {
            "crash": [{"name": c.name, "random": c.random} for c in spec.layout.crash],
            "near_crash": [{"name": c.name, "random": c.random} for c in spec.layout.near_crash],
        },
        "scale_covariates": list(spec.scale_covariates),
        "n_draws": spec.n_draws,
        "draw_scheme": spec.draw_scheme,
        "seed": spec.seed,
    }


def spec_from_dict(doc: dict) -> ModelSpec:
    try:
        layout = CoefficientLayout(
            crash=tuple(Coefficient(c["name"], bool(c.get("random", False)))
                        for c in doc["coefficients"]["crash"]),
            near_crash=tuple(Coefficient(c["name"], bool(c.get("random", False)))
                             for c in doc["coefficients"]["near_crash"]),
        )
        return ModelSpec(
            model_class=ModelClass.parse(doc["model_class"]),
            layout=layout,
            scale_covariates=tuple(doc.get("scale_covariates", ())),
            n_draws=doc.get("n_draws"),
            draw_scheme=doc.get("draw_scheme", "halton"),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"model spec document: {exc!r}") from exc


def read_spec(path) -> ModelSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def write_spec(spec: ModelSpec, path) -> None:
    _dump_json(spec_to_dict(spec), path)


def fit_result_to_dict(result: FitResult) -> dict:
    z = result.z_values
    return {
        "spec": spec_to_dict(result.spec),
        "estimates": {
            "beta_crash": result.estimates.beta_crash.tolist(),
            "beta_near_crash": result.estimates.beta_near_crash.tolist(),
            "omega_sd": result.estimates.omega_sd.tolist(),
            "theta": result.estimates.theta.tolist(),
            "tau": result.estimates.tau,
            "kappa_raw": result.estimates.kappa_raw,
            "kappa": result.estimates.kappa,
        },
        "param_names": list(result.param_names),
        "natural": result.natural.tolist(),
        "se": [v if math.isfinite(v) else None for v in result.se.tolist()],
        "z": [v if math.isfinite(v) else None for v in z.tolist()],
        "se_method": result.se_method,
        "vcov": result.vcov.tolist() if result.vcov is not None else None,
        "loglik": result.loglik,
        "loglik_null": result.loglik_null,
        "aic": result.aic,
        "pseudo_r2": result.pseudo_r2,
        "converged": result.converged,
        "iterations": result.iterations,
        "gradient_norm": result.gradient_norm,
        "n_events": result.n_events,
        "k": result.k,
        "underflow_count": result.underflow_count,
        "warnings": int(not result.converged) + int(result.underflow_count > 0)
                    + int(not result.se_available),
        "iteration_log": list(result.iteration_log),
        "seed": result.spec.seed,
        "draw_config": {"n_draws": result.spec.n_draws, "scheme": result.spec.draw_scheme,
                        "seed": result.spec.seed},
        "tool_version": TOOL_VERSION,
    }


def fit_result_from_dict(doc: dict) -> FitResult:
    try:
        spec = spec_from_dict(doc["spec"])
        est = doc["estimates"]
        estimates = ParameterSet(
            beta_crash=np.asarray(est["beta_crash"], dtype=float),
            beta_near_crash=np.asarray(est["beta_near_crash"], dtype=float),
            omega_sd=np.asarray(est["omega_sd"], dtype=float),
            theta=np.asarray(est["theta"], dtype=float),
            tau=float(est["tau"]),
            kappa_raw=float(est["kappa_raw"]),
        )
        se = np.asarray([math.nan if v is None else v for v in doc["se"]], dtype=float)
        return FitResult(
            spec=spec, estimates=estimates, param_names=tuple(doc["param_names"]),
            natural=np.asarray(doc["natural"], dtype=float), se=se,
            vcov=None if doc.get("vcov") is None else np.asarray(doc["vcov"], dtype=float),
            se_method=doc.get("se_method", "unavailable"),
            vcov_alternatives={}, loglik=float(doc["loglik"]), loglik_null=float(doc["loglik_null"]),
            aic=float(doc["aic"]), pseudo_r2=float(doc["pseudo_r2"]), converged=bool(doc["converged"]),
            iterations=int(doc["iterations"]), gradient_norm=float(doc["gradient_norm"]),
            n_events=int(doc["n_events"]), k=int(doc["k"]),
            underflow_count=int(doc.get("underflow_count", 0)),
            iteration_log=tuple(doc.get("iteration_log", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"fit result document: {exc!r}") from exc


def read_fit_result(path) -> FitResult:
    with open(path) as fh:
        return fit_result_from_dict(json.load(fh))


def write_fit_result(result: FitResult, path) -> None:
    _dump_json(fit_result_to_dict(result), path)


def _dump_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Run manifests


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, inputs, outputs, seed=None, extra=None) -> Path:
    """Write run_manifest.json beside a command's outputs.

    The manifest records the command, content hashes of every input, output
    paths, the seed, and the tool version; it contains no timestamps so
    repeated runs with identical inputs are byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "tool_version": TOOL_VERSION,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
    }
    if extra:
        doc.update(extra)
    path = out_dir / "run_manifest.json"
    _dump_json(doc, path)
    return path
