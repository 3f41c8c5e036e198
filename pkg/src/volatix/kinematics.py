"""Event kinematics: dynamic censoring and coefficient-of-variation volatility indices.

Raw 10 Hz driving events carry speed (kph) plus longitudinal and lateral
acceleration (m/s^2). Safety-critical events are censored at the moment the
driver starts reacting (or at impact when no reaction precedes it) so the
indices measure intentional driving style rather than evasive maneuvers.
Each retained series is differentiated to vehicular jerk, split into
acceleration/deceleration (positive/negative) regimes, and summarized by the
coefficient of variation of each regime: eight indices per event, plus mean
speed and speed CV.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import DegenerateSeries, InsufficientData, MissingComponent

KPH_TO_MPS = 1.0 / 3.6


class EventType(enum.Enum):
    BASELINE = "baseline"
    NEAR_CRASH = "near_crash"
    CRASH = "crash"

    @classmethod
    def parse(cls, label) -> "EventType":
        if isinstance(label, cls):
            return label
        key = str(label).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"baseline": cls.BASELINE, "near_crash": cls.NEAR_CRASH,
                   "nearcrash": cls.NEAR_CRASH, "crash": cls.CRASH}
        if key not in aliases:
            raise ValueError(f"unknown event type {label!r}")
        return aliases[key]


def _as_series(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr


@dataclass(frozen=True)
class EventTrace:
    """One driving event's time series plus censoring markers.

    Speed is in kph, accelerations in m/s^2, sampled every ``sample_period``
    seconds. ``reaction_index`` is the sample at which the driver starts
    reacting to the impending event; ``impact_index`` the moment of impact.
    Baselines carry neither marker; crash/near-crash events must carry an
    impact marker.
    """

    event_id: str
    event_type: EventType
    speed: np.ndarray
    accel_longitudinal: np.ndarray
    accel_lateral: np.ndarray
    sample_period: float = 0.1
    reaction_index: Optional[int] = None
    impact_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "event_type", EventType.parse(self.event_type))
        for name in ("speed", "accel_longitudinal", "accel_lateral"):
            object.__setattr__(self, name, _as_series(getattr(self, name), name))
        n = len(self.speed)
        if n < 2:
            raise ValueError(f"event {self.event_id!r}: series must have at least 2 samples")
        if len(self.accel_longitudinal) != n or len(self.accel_lateral) != n:
            raise ValueError(f"event {self.event_id!r}: series lengths differ")
        if not (self.sample_period > 0 and math.isfinite(self.sample_period)):
            raise ValueError(f"event {self.event_id!r}: sample_period must be positive")
        if self.event_type is EventType.BASELINE:
            if self.reaction_index is not None or self.impact_index is not None:
                raise ValueError(f"event {self.event_id!r}: baselines carry no reaction/impact markers")
        else:
            if self.impact_index is None:
                raise ValueError(f"event {self.event_id!r}: {self.event_type.value} requires impact_index")
        for name in ("reaction_index", "impact_index"):
            idx = getattr(self, name)
            if idx is not None:
                idx = int(idx)
                if not 0 <= idx < n:
                    raise ValueError(f"event {self.event_id!r}: {name}={idx} outside [0, {n})")
                object.__setattr__(self, name, idx)

    def __len__(self) -> int:
        return len(self.speed)


@dataclass(frozen=True)
class CensoredTrace:
    """An event trace truncated to the prefix retained by dynamic censoring."""

    event_id: str
    event_type: EventType
    speed: np.ndarray
    accel_longitudinal: np.ndarray
    accel_lateral: np.ndarray
    sample_period: float
    retained_count: int


@dataclass(frozen=True)
class VolatilityVector:
    """Eight CV-based volatility indices plus mean speed and speed CV.

    A component that cannot be computed (empty sign partition, zero mean,
    fewer than two samples) is ``None`` -- missing, never silently zero.
    """

    cv_accel_long: Optional[float] = None
    cv_decel_long: Optional[float] = None
    cv_accel_lat: Optional[float] = None
    cv_decel_lat: Optional[float] = None
    cv_jerk_pos_long: Optional[float] = None
    cv_jerk_neg_long: Optional[float] = None
    cv_jerk_pos_lat: Optional[float] = None
    cv_jerk_neg_lat: Optional[float] = None
    mean_speed: Optional[float] = None
    cv_speed: Optional[float] = None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


FEATURE_NAMES = tuple(f.name for f in fields(VolatilityVector))


def derive_series(values, dt: float) -> np.ndarray:
    """Forward first difference divided by ``dt``.

    Applied to speed (after kph -> m/s conversion) this yields acceleration;
    applied to acceleration it yields vehicular jerk. Output is one sample
    shorter than the input.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or len(arr) < 2:
        raise DegenerateSeries("need at least 2 samples to differentiate")
    if not dt > 0:
        raise DegenerateSeries(f"dt must be positive, got {dt}")
    return np.diff(arr) / dt


def censor(trace: EventTrace) -> CensoredTrace:
    """Truncate a trace to the prefix that predates the driver's reaction.

    Baselines are retained in full. Crash/near-crash events keep samples
    before the reaction marker; when the driver did not react, or reacted
    only at/after impact, samples before the impact marker are kept instead.
    """
    if trace.event_type is EventType.BASELINE:
        retained = len(trace)
    elif trace.reaction_index is not None and trace.reaction_index < trace.impact_index:
        retained = trace.reaction_index
    else:
        retained = trace.impact_index
    if retained < 2:
        raise InsufficientData(trace.event_id)
    return CensoredTrace(
        event_id=trace.event_id,
        event_type=trace.event_type,
        speed=trace.speed[:retained],
        accel_longitudinal=trace.accel_longitudinal[:retained],
        accel_lateral=trace.accel_lateral[:retained],
        sample_period=trace.sample_period,
        retained_count=retained,
    )


def sign_partition(values) -> tuple[np.ndarray, np.ndarray]:
    """Split a series into positive and negative regimes, as magnitudes.

    Exact zeros belong to neither regime and are dropped. Empty partitions
    are returned as-is; downstream CV computation surfaces them as missing.
    """
    arr = np.asarray(values, dtype=float)
    return arr[arr > 0], -arr[arr < 0]


def coefficient_of_variation(values) -> float:
    """Sample standard deviation (n-1 denominator) divided by the mean."""
    arr = np.asarray(values, dtype=float)
    if len(arr) < 2:
        raise MissingComponent(f"need at least 2 samples for a CV, got {len(arr)}")
    mean = float(np.mean(arr))
    if mean == 0.0:
        raise MissingComponent("CV undefined for zero mean")
    return float(np.std(arr, ddof=1)) / mean


def _cv_or_none(values) -> Optional[float]:
    try:
        return coefficient_of_variation(values)
    except MissingComponent:
        return None


def volatility_indices(trace: EventTrace) -> VolatilityVector:
    """Compute the full volatility vector for one event.

    Censors the trace, derives longitudinal/lateral jerk from the measured
    acceleration series, sign-partitions the four base series, and takes the
    CV of each partition. Mean speed and speed CV come from the censored
    speed series directly (speed is nonnegative, so no partitioning).
    Raises :class:`InsufficientData` when censoring leaves fewer than two
    samples; unavailable components are recorded as ``None``.
    """
    kept = censor(trace)
    dt = kept.sample_period
    jerk_long = derive_series(kept.accel_longitudinal, dt)
    jerk_lat = derive_series(kept.accel_lateral, dt)

    out = {}
    for prefix, series in (("accel", kept.accel_longitudinal), ("jerk", jerk_long)):
        pos, neg = sign_partition(series)
        key_pos = "cv_accel_long" if prefix == "accel" else "cv_jerk_pos_long"
        key_neg = "cv_decel_long" if prefix == "accel" else "cv_jerk_neg_long"
        out[key_pos] = _cv_or_none(pos)
        out[key_neg] = _cv_or_none(neg)
    for prefix, series in (("accel", kept.accel_lateral), ("jerk", jerk_lat)):
        pos, neg = sign_partition(series)
        key_pos = "cv_accel_lat" if prefix == "accel" else "cv_jerk_pos_lat"
        key_neg = "cv_decel_lat" if prefix == "accel" else "cv_jerk_neg_lat"
        out[key_pos] = _cv_or_none(pos)
        out[key_neg] = _cv_or_none(neg)

    out["mean_speed"] = float(np.mean(kept.speed))
    out["cv_speed"] = _cv_or_none(kept.speed)
    return VolatilityVector(**out)
