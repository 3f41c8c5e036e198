"""Synthetic data generation: known-parameter choice data and 10 Hz event traces.

The choice generator draws covariates, forms each event's coefficient vector
through the same scale/blend machinery used in estimation, and samples the
observed outcome from the implied probabilities, so fitted models can be
checked against a known truth. The trace generator synthesizes speed and
acceleration series whose volatility indices land near requested targets,
exercising the kinematics pipeline end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, InvalidTarget
from .kinematics import EventTrace, EventType
from .model import ChoiceDataset, ModelSpec, Outcome, ParameterSet, softmax_rows

_DISTRIBUTIONS = ("normal", "bernoulli", "uniform")


@dataclass(frozen=True)
class CovariateSpec:
    """Marginal distribution for one synthetic covariate."""

    dist: str
    params: tuple

    def __post_init__(self):
        if self.dist not in _DISTRIBUTIONS:
            raise InvalidParameter(f"unknown covariate distribution {self.dist!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.dist == "normal" and (len(self.params) != 2 or self.params[1] < 0):
            raise InvalidParameter("normal covariate needs (mean, sd>=0)")
        if self.dist == "bernoulli" and (len(self.params) != 1 or not 0 <= self.params[0] <= 1):
            raise InvalidParameter("bernoulli covariate needs p in [0, 1]")
        if self.dist == "uniform" and (len(self.params) != 2 or self.params[0] > self.params[1]):
            raise InvalidParameter("uniform covariate needs (low <= high)")

    def sample(self, rng, n):
        if self.dist == "normal":
            return rng.normal(self.params[0], self.params[1], n)
        if self.dist == "bernoulli":
            return (rng.random(n) < self.params[0]).astype(float)
        return rng.uniform(self.params[0], self.params[1], n)

    @classmethod
    def parse(cls, obj) -> "CovariateSpec":
        if isinstance(obj, cls):
            return obj
        if isinstance(obj, dict):
            d = dict(obj)
            dist = d.pop("dist")
            if dist == "normal":
                return cls("normal", (d.get("mean", 0.0), d.get("sd", 1.0)))
            if dist == "bernoulli":
                return cls("bernoulli", (d.get("p", 0.5),))
            if dist == "uniform":
                return cls("uniform", (d.get("low", 0.0), d.get("high", 1.0)))
            raise InvalidParameter(f"unknown covariate distribution {dist!r}")
        dist, *params = obj
        return cls(dist, tuple(params))


# Covariate defaults sized like observed volatility indices (means near one,
# sub-unit spread) so synthetic tests run in a realistic numeric regime.
DEFAULT_COVARIATE = CovariateSpec("normal", (1.0, 0.4))


@dataclass(frozen=True)
class GeneratorConfig:
    """True parameters and covariate distributions for the choice-data DGP."""

    spec: ModelSpec
    params: ParameterSet
    n_events: int
    covariates: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.n_events < 1:
            raise InvalidParameter(f"n_events must be at least 1, got {self.n_events}")
        object.__setattr__(self, "covariates",
                           {name: CovariateSpec.parse(cs) for name, cs in self.covariates.items()})


def generate(config: GeneratorConfig) -> ChoiceDataset:
    """Sample a ChoiceDataset from the configured data-generating process."""
    spec, params = config.spec, config.params
    layout = spec.layout
    n = config.n_events
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(config.seed), spawn_key=(1,)))

    names = []
    for name in (*layout.crash_names, *layout.near_crash_names, *spec.scale_covariates):
        if name != "const" and name not in names:
            names.append(name)
    values = {"const": np.ones(n)}
    for name in names:
        cs = config.covariates.get(name, DEFAULT_COVARIATE)
        values[name] = cs.sample(rng, n)

    x_c = np.column_stack([values[c] for c in layout.crash_names]) if layout.n_crash else np.zeros((n, 0))
    x_nc = np.column_stack([values[c] for c in layout.near_crash_names]) if layout.n_near_crash else np.zeros((n, 0))
    z = np.column_stack([values[c] for c in spec.scale_covariates]) if spec.scale_covariates else np.zeros((n, 0))

    tau = params.tau if spec.model_class.scales else 0.0
    kappa = spec.model_class.fixed_kappa
    if kappa is None:
        kappa = params.kappa if spec.model_class.free_kappa else 1.0
    eps0 = rng.standard_normal(n)
    if spec.model_class.scales:
        shift = z @ params.theta[: spec.n_scale] if spec.model_class.hierarchical and spec.n_scale else 0.0
        sigma = np.exp(-0.5 * tau * tau + shift + tau * eps0)
    else:
        sigma = np.ones(n)

    positions = layout.random_positions()
    w = np.zeros((n, layout.n_beta))
    if spec.model_class.mixes and positions:
        w[:, positions] = rng.standard_normal((n, len(positions))) * params.omega_sd[: len(positions)]

    beta = params.beta  # stacked: crash block then near-crash block
    mix_w = kappa + (1.0 - kappa) * sigma
    beta_i = sigma[:, None] * beta[None, :] + mix_w[:, None] * w

    v_c = np.einsum("np,np->n", x_c, beta_i[:, : layout.n_crash]) if layout.n_crash else np.zeros(n)
    v_nc = np.einsum("np,np->n", x_nc, beta_i[:, layout.n_crash:]) if layout.n_near_crash else np.zeros(n)
    probs = softmax_rows(np.column_stack([np.zeros(n), v_nc, v_c]))

    cum = np.cumsum(probs, axis=1)
    u = rng.random(n)
    observed = np.minimum(np.sum(u[:, None] >= cum, axis=1), 2).astype(int)

    return ChoiceDataset(
        x_crash=x_c, x_near_crash=x_nc, z_scale=z,
        observed=[Outcome(int(o)) for o in observed],
        event_ids=tuple(f"ev{i:06d}" for i in range(n)),
        crash_names=layout.crash_names, near_crash_names=layout.near_crash_names,
        z_names=spec.scale_covariates)


def covariate_frame(config: GeneratorConfig):
    """Regenerate the covariate table (with outcomes) behind :func:`generate`.

    Returns a pandas DataFrame matching the attribute-CSV schema, built from
    the same seed so it is column-for-column consistent with the dataset.
    """
    import pandas as pd

    dataset = generate(config)
    frame = pd.DataFrame({"event_id": dataset.event_ids})
    frame["outcome"] = [Outcome(int(o)).label for o in dataset.observed]
    seen = {}
    for names, x in ((dataset.crash_names, dataset.x_crash),
                     (dataset.near_crash_names, dataset.x_near_crash),
                     (dataset.z_names, dataset.z_scale)):
        for j, name in enumerate(names):
            if name != "const" and name not in seen:
                seen[name] = x[:, j]
    for name, col in seen.items():
        frame[name] = col
    return frame


# ---------------------------------------------------------------------------
# Trace synthesis


@dataclass(frozen=True)
class TraceConfig:
    """Targets and sizes for synthetic 10 Hz event traces.

    ``cv_jerk_*`` set the coefficient of variation of each jerk regime on the
    retained (pre-reaction) prefix; acceleration-regime CVs emerge from
    integrating the jerk series. ``dispersion`` scales every CV target, so 0
    yields constant series. ``target_jitter`` spreads targets across events
    with a mean-one log-normal multiplier, and the per-type CV scales let
    safety-critical events run more volatile than baselines. A fraction of
    safety-critical events carries no reaction marker and is censored at
    impact instead.
    """

    n_baseline: int = 0
    n_near_crash: int = 0
    n_crash: int = 0
    prefix_samples: int = 200
    sample_period: float = 0.1
    mean_speed_kph: float = 50.0
    cv_speed: float = 0.15
    cv_jerk_pos_long: float = 1.0
    cv_jerk_neg_long: float = 0.85
    cv_jerk_pos_lat: float = 1.0
    cv_jerk_neg_lat: float = 0.9
    jerk_magnitude: float = 1.5
    dispersion: float = 1.0
    target_jitter: float = 0.0
    near_crash_cv_scale: float = 1.0
    crash_cv_scale: float = 1.0
    no_reaction_fraction: float = 0.145
    tail_samples: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_baseline + self.n_near_crash + self.n_crash < 1:
            raise InvalidTarget("at least one event is required")
        if self.dispersion < 0:
            raise InvalidTarget(f"dispersion must be nonnegative, got {self.dispersion}")
        for name in ("cv_speed", "cv_jerk_pos_long", "cv_jerk_neg_long",
                     "cv_jerk_pos_lat", "cv_jerk_neg_lat"):
            if getattr(self, name) < 0:
                raise InvalidTarget(f"{name} must be nonnegative")
        if self.mean_speed_kph <= 0:
            raise InvalidTarget("mean_speed_kph must be positive")
        if self.target_jitter < 0:
            raise InvalidTarget("target_jitter must be nonnegative")
        if self.near_crash_cv_scale <= 0 or self.crash_cv_scale <= 0:
            raise InvalidTarget("event-type CV scales must be positive")
        if not 0 <= self.no_reaction_fraction <= 1:
            raise InvalidTarget("no_reaction_fraction must lie in [0, 1]")
        if self.prefix_samples < 8:
            raise InvalidTarget("prefix_samples must be at least 8")
        if self.dispersion > 0 and self.prefix_samples < 12 and self._any_cv_target():
            raise InvalidTarget("prefix too short to realize a positive CV target")

    def _any_cv_target(self):
        return any(getattr(self, f) > 0 for f in
                   ("cv_speed", "cv_jerk_pos_long", "cv_jerk_neg_long",
                    "cv_jerk_pos_lat", "cv_jerk_neg_lat"))


def _match_cv(magnitudes: np.ndarray, target_cv: float) -> np.ndarray:
    """Power-transform positive magnitudes so their sample CV matches the target.

    CV(m**g) is increasing in g, so a short bisection pins the sample CV
    while positivity is preserved by construction.
    """
    if magnitudes.min() <= 0 or np.ptp(magnitudes) == 0:
        return magnitudes

    def cv_at(g):
        x = magnitudes ** g
        return x.std(ddof=1) / x.mean()

    lo, hi = 1e-3, 1.0
    while cv_at(hi) < target_cv and hi < 64:
        hi *= 2.0
    if cv_at(hi) < target_cv or cv_at(lo) > target_cv:
        return magnitudes
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if cv_at(mid) < target_cv:
            lo = mid
        else:
            hi = mid
    g = 0.5 * (lo + hi)
    adjusted = magnitudes ** g
    return adjusted * (magnitudes.mean() / adjusted.mean())


def _jerk_series(rng, length, cv_pos, cv_neg, magnitude):
    """Alternating-sign jerk samples whose regime sample CVs hit the targets.

    Gamma magnitudes with shape 1/cv^2 give the requested population CV;
    the power correction then pins the sample CV exactly.
    """
    signs = np.where(np.arange(length) % 2 == 0, 1.0, -1.0)
    out = np.empty(length)
    for sign, cv in ((1.0, cv_pos), (-1.0, cv_neg)):
        idx = signs == sign
        count = int(idx.sum())
        if cv <= 0:
            mags = np.full(count, magnitude)
        else:
            shape = 1.0 / (cv * cv)
            mags = rng.gamma(shape, magnitude / shape, count)
            mags = np.maximum(mags, 1e-9 * magnitude)
            mags = _match_cv(mags, cv)
        out[idx] = sign * mags
    return out


def _speed_series(accel_long, n_prefix, mean_kph, cv, dt):
    """Speed consistent with the longitudinal acceleration shape, rescaled so
    the retained prefix hits the target mean and CV, clipped at zero."""
    length = len(accel_long)
    centered = accel_long - accel_long[:n_prefix].mean()
    raw = np.concatenate([[0.0], np.cumsum(centered[:-1]) * dt * 3.6])
    raw = raw - raw[:n_prefix].mean()
    sd = raw[:n_prefix].std(ddof=1)
    if cv <= 0 or sd == 0:
        return np.full(length, mean_kph)
    speed = mean_kph + raw * (mean_kph * cv / sd)
    return np.maximum(speed, 0.0)


def generate_traces(config: TraceConfig) -> list[EventTrace]:
    """Synthesize event traces whose volatility indices land near the targets.

    Jerk-regime targets are realized exactly on the retained prefix; the
    acceleration-regime CVs emerge from integration. Safety-critical events
    append a noisier post-reaction tail that censoring discards.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(config.seed), spawn_key=(2,)))
    disp = config.dispersion
    dt = config.sample_period
    traces = []
    kinds = ([EventType.BASELINE] * config.n_baseline
             + [EventType.NEAR_CRASH] * config.n_near_crash
             + [EventType.CRASH] * config.n_crash)
    for i, kind in enumerate(kinds):
        n_prefix = config.prefix_samples
        tail = 0 if kind is EventType.BASELINE else max(2, config.tail_samples)
        length = n_prefix + tail
        type_scale = {EventType.BASELINE: 1.0, EventType.NEAR_CRASH: config.near_crash_cv_scale,
                      EventType.CRASH: config.crash_cv_scale}[kind]

        def jitter():
            # Independent mean-one multiplier per regime, so the realized
            # indices are dispersed but not collinear across events.
            if config.target_jitter == 0:
                return 1.0
            return math.exp(config.target_jitter * rng.standard_normal()
                            - 0.5 * config.target_jitter ** 2)

        def accel_from_jerk(cv_pos, cv_neg):
            if disp == 0:
                return np.zeros(length)
            scale = disp * type_scale
            jerk = _jerk_series(rng, n_prefix - 1, cv_pos * scale * jitter(),
                                cv_neg * scale * jitter(), config.jerk_magnitude)
            if tail:
                evasive = rng.normal(0.0, 3.0 * config.jerk_magnitude, tail)
                jerk = np.concatenate([jerk, evasive])
            accel = np.concatenate([[0.0], np.cumsum(jerk) * dt])
            return accel - accel[:n_prefix].mean()

        accel_long = accel_from_jerk(config.cv_jerk_pos_long, config.cv_jerk_neg_long)
        accel_lat = accel_from_jerk(config.cv_jerk_pos_lat, config.cv_jerk_neg_lat)
        speed = _speed_series(accel_long, n_prefix, config.mean_speed_kph, config.cv_speed * disp, dt)

        reaction = impact = None
        if kind is not EventType.BASELINE:
            if rng.random() < config.no_reaction_fraction:
                impact = n_prefix
            else:
                reaction = n_prefix
                impact = min(length - 1, n_prefix + max(1, tail // 2))
        traces.append(EventTrace(
            event_id=f"{kind.value}_{i:05d}", event_type=kind,
            speed=speed, accel_longitudinal=accel_long, accel_lateral=accel_lat,
            sample_period=dt, reaction_index=reaction, impact_index=impact))
    return traces
