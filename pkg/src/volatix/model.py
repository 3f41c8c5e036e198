"""Choice data, model specifications, and per-event coefficient construction.

The model family interpolates between a fixed-coefficient multinomial logit
and a generalized mixed logit in which each event carries its own coefficient
vector

    beta_i = sigma_i * beta + [kappa + (1 - kappa) * sigma_i] * w_i,

where sigma_i is a log-normal scale multiplier (mean one), w_i are mean-zero
normal deviations on the coefficients tagged random, and kappa in [0, 1]
mixes the two ways scale and random heterogeneity can interact. Outcomes are
baseline (reference, utility zero), near-crash, and crash.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidParameter, LayoutError

N_OUTCOMES = 3


class Outcome(enum.IntEnum):
    BASELINE = 0
    NEAR_CRASH = 1
    CRASH = 2

    @classmethod
    def parse(cls, label) -> "Outcome":
        if isinstance(label, cls):
            return label
        if isinstance(label, (int, np.integer)):
            return cls(int(label))
        key = str(label).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"baseline": cls.BASELINE, "near_crash": cls.NEAR_CRASH,
                   "nearcrash": cls.NEAR_CRASH, "crash": cls.CRASH}
        if key not in aliases:
            raise ValueError(f"unknown outcome {label!r}")
        return aliases[key]

    @property
    def label(self) -> str:
        return {0: "baseline", 1: "near_crash", 2: "crash"}[int(self)]


OUTCOME_LABELS = ("baseline", "near_crash", "crash")


class ModelClass(enum.Enum):
    MNL = "mnl"
    RP_MNL = "rp_mnl"
    S_MNL = "s_mnl"
    HS_MNL = "hs_mnl"
    GMNL_I = "gmnl_i"
    GMNL_II = "gmnl_ii"
    H_GMNL = "h_gmnl"

    @classmethod
    def parse(cls, label) -> "ModelClass":
        if isinstance(label, cls):
            return label
        key = str(label).strip().lower().replace("-", "_")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown model class {label!r}")

    @property
    def mixes(self) -> bool:
        """Whether the class carries random coefficient deviations w_i."""
        return self in (ModelClass.RP_MNL, ModelClass.GMNL_I, ModelClass.GMNL_II, ModelClass.H_GMNL)

    @property
    def scales(self) -> bool:
        """Whether the class carries the pure scale effect tau."""
        return self in (ModelClass.S_MNL, ModelClass.HS_MNL, ModelClass.GMNL_I,
                        ModelClass.GMNL_II, ModelClass.H_GMNL)

    @property
    def hierarchical(self) -> bool:
        """Whether the scale factor may depend on event attributes (theta)."""
        return self in (ModelClass.HS_MNL, ModelClass.H_GMNL)

    @property
    def fixed_kappa(self) -> Optional[float]:
        """kappa pinned by the class, or None when absent / freely estimated."""
        if self is ModelClass.GMNL_I:
            return 1.0
        if self is ModelClass.GMNL_II:
            return 0.0
        return None

    @property
    def free_kappa(self) -> bool:
        return self is ModelClass.H_GMNL


@dataclass(frozen=True)
class Coefficient:
    """A named utility coefficient, fixed or normally mixed across events."""

    name: str
    random: bool = False


@dataclass(frozen=True)
class CoefficientLayout:
    """Per-outcome coefficient lists for the two non-reference utilities.

    The name ``const`` denotes the alternative-specific intercept (design
    value 1 for every event); all other names refer to event covariates.
    """

    crash: tuple[Coefficient, ...]
    near_crash: tuple[Coefficient, ...]

    def __post_init__(self):
        object.__setattr__(self, "crash", tuple(self._coerce(self.crash)))
        object.__setattr__(self, "near_crash", tuple(self._coerce(self.near_crash)))
        for side, coefs in (("crash", self.crash), ("near_crash", self.near_crash)):
            names = [c.name for c in coefs]
            if len(set(names)) != len(names):
                raise LayoutError(f"duplicate coefficient names in {side} utility: {names}")

    @staticmethod
    def _coerce(coefs):
        out = []
        for c in coefs:
            if isinstance(c, Coefficient):
                out.append(c)
            elif isinstance(c, str):
                out.append(Coefficient(c))
            else:
                name, random = c
                out.append(Coefficient(name, bool(random)))
        return out

    @property
    def crash_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.crash)

    @property
    def near_crash_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.near_crash)

    @property
    def n_crash(self) -> int:
        return len(self.crash)

    @property
    def n_near_crash(self) -> int:
        return len(self.near_crash)

    @property
    def n_beta(self) -> int:
        return self.n_crash + self.n_near_crash

    def random_positions(self) -> list[int]:
        """Indices of random-tagged coefficients in the stacked (crash then
        near-crash) coefficient vector, in layout order."""
        stacked = list(self.crash) + list(self.near_crash)
        return [i for i, c in enumerate(stacked) if c.random]

    @property
    def n_random(self) -> int:
        return len(self.random_positions())

    def stacked_names(self) -> list[str]:
        return [f"crash:{c.name}" for c in self.crash] + [f"near_crash:{c.name}" for c in self.near_crash]


@dataclass(frozen=True)
class ModelSpec:
    """Model class, coefficient layout, scale covariates, and draw configuration."""

    model_class: ModelClass
    layout: CoefficientLayout
    scale_covariates: tuple[str, ...] = ()
    n_draws: Optional[int] = None
    draw_scheme: str = "halton"
    seed: int = 0

    DEFAULT_DRAWS = 500

    def __post_init__(self):
        object.__setattr__(self, "model_class", ModelClass.parse(self.model_class))
        object.__setattr__(self, "scale_covariates", tuple(self.scale_covariates))
        if self.n_draws is None:
            object.__setattr__(self, "n_draws", 1 if self.model_class is ModelClass.MNL else self.DEFAULT_DRAWS)
        if not isinstance(self.n_draws, (int, np.integer)) or self.n_draws < 1:
            raise InvalidParameter(f"n_draws must be a positive integer, got {self.n_draws}")
        object.__setattr__(self, "n_draws", int(self.n_draws))
        if self.draw_scheme not in ("halton", "random"):
            raise InvalidParameter(f"draw_scheme must be 'halton' or 'random', got {self.draw_scheme!r}")
        if self.model_class is ModelClass.MNL and self.n_draws != 1:
            raise InvalidParameter("mnl is deterministic; n_draws must be 1")
        if self.layout.n_random and not self.model_class.mixes:
            raise InvalidParameter(f"{self.model_class.value} does not allow random-tagged coefficients")
        if self.scale_covariates and not self.model_class.hierarchical:
            raise InvalidParameter(f"{self.model_class.value} does not allow scale covariates")

    @property
    def n_random(self) -> int:
        return self.layout.n_random

    @property
    def n_scale(self) -> int:
        return len(self.scale_covariates)


@dataclass(frozen=True)
class ParameterSet:
    """Natural-space parameters for any model class.

    ``omega_sd`` holds the standard deviations of the random-tagged
    coefficients in layout order; ``theta`` the scale-covariate weights;
    ``tau`` the pure scale dispersion (>= 0). ``kappa_raw`` is the
    unconstrained proportionality coordinate; the model-facing value is
    ``kappa = expit(kappa_raw)``.
    """

    beta_crash: np.ndarray
    beta_near_crash: np.ndarray
    omega_sd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau: float = 0.0
    kappa_raw: float = 0.0

    def __post_init__(self):
        for name in ("beta_crash", "beta_near_crash", "omega_sd", "theta"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise InvalidParameter(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise InvalidParameter(f"tau must be finite and nonnegative, got {self.tau}")
        if not math.isfinite(self.kappa_raw):
            raise InvalidParameter("kappa_raw must be finite")
        if np.any(self.omega_sd < 0):
            raise InvalidParameter("omega_sd entries must be nonnegative")

    @property
    def kappa(self) -> float:
        return float(expit(self.kappa_raw))

    @property
    def beta(self) -> np.ndarray:
        """Stacked coefficient vector: crash block then near-crash block."""
        return np.concatenate([self.beta_crash, self.beta_near_crash])

    @staticmethod
    def kappa_to_raw(kappa: float) -> float:
        """Inverse of the logistic map, clipped away from the saturated ends."""
        k = min(max(float(kappa), 1e-12), 1 - 1e-12)
        return math.log(k / (1 - k))


@dataclass(frozen=True)
class ChoiceDataset:
    """Event-level design matrices for the three-outcome choice problem.

    ``x_crash`` and ``x_near_crash`` are the per-utility designs (one row per
    event, columns in layout order, intercept column included); ``z_scale``
    holds the scale covariates. ``observed`` may be None for pure prediction
    datasets and is required for estimation.
    """

    x_crash: np.ndarray
    x_near_crash: np.ndarray
    z_scale: np.ndarray
    observed: Optional[np.ndarray]
    event_ids: tuple
    crash_names: tuple[str, ...]
    near_crash_names: tuple[str, ...]
    z_names: tuple[str, ...]

    def __post_init__(self):
        xc = np.atleast_2d(np.asarray(self.x_crash, dtype=float))
        xnc = np.atleast_2d(np.asarray(self.x_near_crash, dtype=float))
        z = np.atleast_2d(np.asarray(self.z_scale, dtype=float))
        n = xc.shape[0]
        if xnc.shape[0] != n or z.shape[0] != n or len(self.event_ids) != n:
            raise LayoutError("design matrices and event_ids must agree on the number of events")
        for name, arr in (("x_crash", xc), ("x_near_crash", xnc), ("z_scale", z)):
            if not np.all(np.isfinite(arr)):
                raise LayoutError(f"{name} contains non-finite values")
        if xc.shape[1] != len(self.crash_names) or xnc.shape[1] != len(self.near_crash_names):
            raise LayoutError("design column counts do not match coefficient names")
        if z.shape[1] != len(self.z_names):
            raise LayoutError("scale design column count does not match z_names")
        object.__setattr__(self, "x_crash", xc)
        object.__setattr__(self, "x_near_crash", xnc)
        object.__setattr__(self, "z_scale", z)
        object.__setattr__(self, "event_ids", tuple(self.event_ids))
        object.__setattr__(self, "crash_names", tuple(self.crash_names))
        object.__setattr__(self, "near_crash_names", tuple(self.near_crash_names))
        object.__setattr__(self, "z_names", tuple(self.z_names))
        if self.observed is not None:
            y = np.asarray([int(Outcome.parse(v)) for v in np.asarray(self.observed).reshape(-1)], dtype=int)
            if len(y) != n:
                raise LayoutError("observed outcomes must match the number of events")
            object.__setattr__(self, "observed", y)

    def __len__(self) -> int:
        return self.x_crash.shape[0]

    @property
    def n_events(self) -> int:
        return len(self)

    def outcome_counts(self) -> np.ndarray:
        if self.observed is None:
            raise LayoutError("dataset carries no observed outcomes")
        return np.bincount(self.observed, minlength=N_OUTCOMES)

    @classmethod
    def from_frame(cls, frame, spec_or_layout, scale_covariates: Sequence[str] = (),
                   outcome_column: Optional[str] = "outcome", event_id_column: str = "event_id"):
        """Build a dataset from a covariate table.

        ``frame`` is a pandas DataFrame with one row per event. Layout names
        other than ``const`` must be columns of the frame; ``const`` maps to
        a column of ones.
        """
        if isinstance(spec_or_layout, ModelSpec):
            layout = spec_or_layout.layout
            scale_covariates = spec_or_layout.scale_covariates
        else:
            layout = spec_or_layout
        n = len(frame)

        def column(name):
            if name == "const":
                return np.ones(n)
            if name not in frame.columns:
                raise LayoutError(f"covariate {name!r} not found in attribute table")
            return np.asarray(frame[name], dtype=float)

        xc = np.column_stack([column(c) for c in layout.crash_names]) if layout.n_crash else np.zeros((n, 0))
        xnc = np.column_stack([column(c) for c in layout.near_crash_names]) if layout.n_near_crash else np.zeros((n, 0))
        z = np.column_stack([column(c) for c in scale_covariates]) if scale_covariates else np.zeros((n, 0))
        observed = None
        if outcome_column is not None and outcome_column in frame.columns:
            observed = frame[outcome_column].tolist()
        if event_id_column in frame.columns:
            ids = tuple(frame[event_id_column].tolist())
        else:
            ids = tuple(range(n))
        return cls(x_crash=xc, x_near_crash=xnc, z_scale=z, observed=observed, event_ids=ids,
                   crash_names=layout.crash_names, near_crash_names=layout.near_crash_names,
                   z_names=tuple(scale_covariates))

    @classmethod
    def from_records(cls, records, crash_names, near_crash_names, z_names=()):
        """Build a dataset from per-event records.

        Each record is a mapping with event_id, observed (outcome label or
        None), x_crash, x_near_crash, and z_scale vectors laid out to match
        the given names.
        """
        records = list(records)
        observed = [r.get("observed") for r in records]
        return cls(
            x_crash=np.array([r["x_crash"] for r in records], dtype=float).reshape(len(records), -1),
            x_near_crash=np.array([r["x_near_crash"] for r in records], dtype=float).reshape(len(records), -1),
            z_scale=np.array([r.get("z_scale", ()) for r in records], dtype=float).reshape(len(records), -1),
            observed=None if all(o is None for o in observed) else observed,
            event_ids=tuple(r["event_id"] for r in records),
            crash_names=tuple(crash_names), near_crash_names=tuple(near_crash_names),
            z_names=tuple(z_names))

    def replace_designs(self, x_crash=None, x_near_crash=None) -> "ChoiceDataset":
        return ChoiceDataset(
            x_crash=self.x_crash if x_crash is None else x_crash,
            x_near_crash=self.x_near_crash if x_near_crash is None else x_near_crash,
            z_scale=self.z_scale, observed=self.observed, event_ids=self.event_ids,
            crash_names=self.crash_names, near_crash_names=self.near_crash_names,
            z_names=self.z_names)


def scale_factor(theta, z, tau, eps0):
    """Event-specific scale multiplier sigma_i = exp(-tau^2/2 + theta.z + tau*eps0).

    The -tau^2/2 offset centers the pure scale effect so E[sigma_i] = 1 when
    theta.z = 0, pinning the level of sigma against beta. ``eps0`` may be a
    scalar or an array of standard-normal draws.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    eps0 = np.asarray(eps0, dtype=float)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(z)) and np.all(np.isfinite(eps0))):
        raise InvalidParameter("scale_factor inputs must be finite")
    if not (math.isfinite(tau) and tau >= 0):
        raise InvalidParameter(f"tau must be finite and nonnegative, got {tau}")
    if theta.shape != z.shape:
        raise InvalidParameter(f"theta and z lengths differ: {theta.shape} vs {z.shape}")
    log_sigma = -0.5 * tau * tau + float(theta @ z) + tau * eps0
    out = np.exp(log_sigma)
    return float(out) if out.ndim == 0 else out


def blend_coefficients(beta, w_draw, sigma, kappa):
    """Per-event coefficient vector beta_i = sigma*beta + [kappa + (1-kappa)*sigma]*w.

    ``w_draw`` is the realized random deviation (omega_sd times a standard
    normal draw). kappa=1 leaves the deviations independent of scale;
    kappa=0 makes them proportional to it.
    """
    if not 0.0 <= kappa <= 1.0:
        raise InvalidParameter(f"kappa must lie in [0, 1], got {kappa}")
    beta = np.asarray(beta, dtype=float)
    w = np.asarray(w_draw, dtype=float)
    if beta.shape != w.shape:
        raise InvalidParameter(f"beta and w_draw shapes differ: {beta.shape} vs {w.shape}")
    return sigma * beta + (kappa + (1.0 - kappa) * sigma) * w


def utilities(beta_crash, x_crash, beta_near_crash, x_near_crash):
    """Linear utilities (V_baseline=0, V_near_crash, V_crash) for one event."""
    parts = []
    for beta, x, side in ((beta_crash, x_crash, "crash"), (beta_near_crash, x_near_crash, "near_crash")):
        beta = np.asarray(beta, dtype=float).reshape(-1)
        x = np.asarray(x, dtype=float).reshape(-1)
        if beta.shape != x.shape:
            raise LayoutError(f"{side}: coefficient/design lengths differ ({len(beta)} vs {len(x)})")
        if not np.all(np.isfinite(x)):
            raise LayoutError(f"{side}: design vector contains non-finite entries")
        if not np.all(np.isfinite(beta)):
            raise LayoutError(f"{side}: coefficient vector contains non-finite entries")
        parts.append(float(beta @ x))
    v_crash, v_near_crash = parts
    return (0.0, v_near_crash, v_crash)


def softmax_rows(v: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; last axis is the outcome axis."""
    v = np.asarray(v, dtype=float)
    m = np.max(v, axis=-1, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def choice_probabilities(v) -> tuple[float, float, float]:
    """Outcome probabilities (baseline, near-crash, crash) from a utility triple."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (N_OUTCOMES,):
        raise InvalidParameter(f"expected 3 utilities, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidParameter("utilities must be finite")
    p = softmax_rows(v)
    return (float(p[0]), float(p[1]), float(p[2]))
