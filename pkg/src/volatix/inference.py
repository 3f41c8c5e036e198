"""Post-estimation analysis: marginal effects, probability curves, scenarios.

All quantities are averages of per-event simulated probabilities, evaluated
with the same draw block used during fitting so they stay consistent with
the reported likelihood. A covariate can enter the crash utility, the
near-crash utility, or both; effects and perturbations are therefore
addressed by (covariate, target utility).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .draws import draws_for
from .errors import InvalidParameter, InvalidScenario, NotFitted
from .estimation import FitResult, simulated_probabilities
from .model import ChoiceDataset, OUTCOME_LABELS

UTILITY_TARGETS = ("crash", "near_crash", "both")


def _require_fit(fit: FitResult, force: bool = False):
    if not isinstance(fit, FitResult):
        raise NotFitted("a FitResult is required")
    if not fit.converged and not force:
        raise NotFitted("fit did not converge; pass force=True to analyze it anyway")


def _targets_for(dataset: ChoiceDataset, covariate: str, target: str) -> list[tuple[str, int]]:
    """(side, column) pairs where the covariate sits in the targeted utilities."""
    if target not in UTILITY_TARGETS:
        raise InvalidParameter(f"target must be one of {UTILITY_TARGETS}, got {target!r}")
    hits = []
    if target in ("crash", "both") and covariate in dataset.crash_names:
        hits.append(("crash", dataset.crash_names.index(covariate)))
    if target in ("near_crash", "both") and covariate in dataset.near_crash_names:
        hits.append(("near_crash", dataset.near_crash_names.index(covariate)))
    return hits


def _with_column(dataset: ChoiceDataset, hits, values) -> ChoiceDataset:
    x_c, x_nc = None, None
    for side, col in hits:
        if side == "crash":
            x_c = dataset.x_crash.copy() if x_c is None else x_c
            x_c[:, col] = values
        else:
            x_nc = dataset.x_near_crash.copy() if x_nc is None else x_nc
            x_nc[:, col] = values
    return dataset.replace_designs(x_crash=x_c, x_near_crash=x_nc)


def mean_probabilities(fit: FitResult, dataset: ChoiceDataset, n_threads: int = 1) -> np.ndarray:
    """Per-event simulated probabilities, (n, 3), using the fit's draw block."""
    draws = draws_for(fit.spec, len(dataset))
    return simulated_probabilities(fit.spec, fit.estimates, dataset, draws, n_threads)


@dataclass(frozen=True)
class MarginalEffect:
    covariate: str
    utility: str
    kind: str  # "continuous" or "discrete"
    effects: np.ndarray  # (baseline, near_crash, crash), probability units


@dataclass(frozen=True)
class MarginalEffectTable:
    rows: tuple

    def to_records(self) -> list[dict]:
        out = []
        for r in self.rows:
            rec = {"covariate": r.covariate, "utility": r.utility, "kind": r.kind}
            rec.update({f"effect_{lbl}": float(v) for lbl, v in zip(OUTCOME_LABELS, r.effects)})
            out.append(rec)
        return out

    def effect(self, covariate: str, utility: str) -> np.ndarray:
        for r in self.rows:
            if r.covariate == covariate and r.utility == utility:
                return r.effects
        raise KeyError((covariate, utility))


def _is_binary(values: np.ndarray) -> bool:
    return bool(np.all((values == 0.0) | (values == 1.0)))


def marginal_effect(fit: FitResult, dataset: ChoiceDataset, covariate: str, utility: str,
                    n_threads: int = 1, force: bool = False) -> MarginalEffect:
    """Average effect of one covariate, perturbed inside one utility only.

    Continuous covariates use a per-event central difference with step
    max(1e-4, 1e-4*|x|); binary covariates use the average discrete change
    P(x=1) - P(x=0). A covariate absent from the targeted utility has an
    exactly zero effect.
    """
    _require_fit(fit, force)
    hits = _targets_for(dataset, covariate, utility)
    if not hits:
        return MarginalEffect(covariate, utility, "continuous", np.zeros(3))
    side, col = hits[0]
    x = dataset.x_crash[:, col] if side == "crash" else dataset.x_near_crash[:, col]
    if _is_binary(x):
        p1 = mean_probabilities(fit, _with_column(dataset, hits, np.ones(len(dataset))), n_threads)
        p0 = mean_probabilities(fit, _with_column(dataset, hits, np.zeros(len(dataset))), n_threads)
        return MarginalEffect(covariate, utility, "discrete", np.mean(p1 - p0, axis=0))
    step = np.maximum(1e-4, 1e-4 * np.abs(x))
    p_up = mean_probabilities(fit, _with_column(dataset, hits, x + step), n_threads)
    p_dn = mean_probabilities(fit, _with_column(dataset, hits, x - step), n_threads)
    per_event = (p_up - p_dn) / (2.0 * step[:, None])
    return MarginalEffect(covariate, utility, "continuous", np.mean(per_event, axis=0))


def marginal_effects(fit: FitResult, dataset: ChoiceDataset, covariates: Optional[Sequence[str]] = None,
                     n_threads: int = 1, force: bool = False) -> MarginalEffectTable:
    """Average marginal effects for every (covariate, utility) pair in the model.

    Rows cover each non-intercept covariate once per utility it enters; the
    three outcome effects in a row sum to zero by probability normalization.
    """
    _require_fit(fit, force)
    rows = []
    for utility, names in (("crash", dataset.crash_names), ("near_crash", dataset.near_crash_names)):
        for name in names:
            if name == "const":
                continue
            if covariates is not None and name not in covariates:
                continue
            rows.append(marginal_effect(fit, dataset, name, utility, n_threads, force=True))
    return MarginalEffectTable(tuple(rows))


@dataclass(frozen=True)
class ProbabilityCurve:
    covariate: str
    target: str
    grid: np.ndarray
    probabilities: np.ndarray  # (len(grid), 3) mean probabilities
    warnings: tuple = ()

    def to_records(self) -> list[dict]:
        out = []
        for g, row in zip(self.grid, self.probabilities):
            for lbl, p in zip(OUTCOME_LABELS, row):
                out.append({"grid_value": float(g), "outcome": lbl, "mean_probability": float(p)})
        return out


def probability_curve(fit: FitResult, dataset: ChoiceDataset, covariate: str, grid,
                      target: str = "both", n_threads: int = 1, force: bool = False) -> ProbabilityCurve:
    """Mean simulated outcome probabilities with a covariate swept over a grid.

    Each grid value replaces the covariate for every event (in the targeted
    utilities) before probabilities are recomputed and averaged. Grid values
    outside the observed covariate range are still computed but annotated.
    """
    _require_fit(fit, force)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if not np.all(np.isfinite(grid)):
        raise InvalidParameter("grid must be finite")
    hits = _targets_for(dataset, covariate, target)
    if not hits:
        raise InvalidParameter(f"covariate {covariate!r} not present in the targeted utilities")
    side, col = hits[0]
    observed = dataset.x_crash[:, col] if side == "crash" else dataset.x_near_crash[:, col]
    warnings = []
    lo, hi = float(observed.min()), float(observed.max())
    outside = grid[(grid < lo) | (grid > hi)]
    if outside.size:
        warnings.append(f"{outside.size} grid values outside the observed range [{lo:.6g}, {hi:.6g}]")
    probs = np.empty((len(grid), 3))
    for i, g in enumerate(grid):
        shifted = _with_column(dataset, hits, np.full(len(dataset), g))
        probs[i] = np.mean(mean_probabilities(fit, shifted, n_threads), axis=0)
    return ProbabilityCurve(covariate, target, grid, probs, tuple(warnings))


# ---------------------------------------------------------------------------
# Scenario forecasting


@dataclass(frozen=True)
class Perturbation:
    """A covariate change applied inside one outcome's utility function.

    ``mode='percent'`` multiplies the covariate by (1 - amount), so
    amount=0.10 is a 10% decrease; ``mode='sd'`` subtracts amount sample
    standard deviations of the covariate.
    """

    covariate: str
    mode: str
    amount: float
    target: str = "crash"
    label: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("percent", "sd"):
            raise InvalidScenario(f"mode must be 'percent' or 'sd', got {self.mode!r}")
        if self.target not in ("crash", "near_crash"):
            raise InvalidScenario(f"target must be 'crash' or 'near_crash', got {self.target!r}")
        if self.label is None:
            if self.mode == "percent":
                text = f"{self.amount * 100:g}% decrease" if self.amount >= 0 else f"{-self.amount * 100:g}% increase"
            else:
                text = f"{self.amount:g} SD decrease" if self.amount >= 0 else f"{-self.amount:g} SD increase"
            object.__setattr__(self, "label", text)


def apply_perturbation(dataset: ChoiceDataset, perturbation: Perturbation) -> ChoiceDataset:
    """Return a dataset with the perturbed covariate in the targeted utility."""
    hits = _targets_for(dataset, perturbation.covariate, perturbation.target)
    if not hits:
        raise InvalidScenario(
            f"covariate {perturbation.covariate!r} is not in the {perturbation.target} utility")
    side, col = hits[0]
    x = dataset.x_crash[:, col] if side == "crash" else dataset.x_near_crash[:, col]
    if perturbation.mode == "percent":
        new = x * (1.0 - perturbation.amount)
    else:
        sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        new = x - perturbation.amount * sd
    return _with_column(dataset, hits, new)


@dataclass(frozen=True)
class ScenarioResult:
    """Outcome shares and predicted counts for one forecasting scenario."""

    label: str
    shares: np.ndarray  # percent, (baseline, near_crash, crash)
    counts: np.ndarray  # predicted integer counts
    delta_shares: np.ndarray  # percentage points vs the no-change run
    delta_counts: np.ndarray
    denominator: int

    def to_records(self) -> list[dict]:
        out = []
        for i, lbl in enumerate(OUTCOME_LABELS):
            out.append({
                "scenario": self.label, "outcome": lbl,
                "share_pct": float(self.shares[i]), "count": int(self.counts[i]),
                "delta_share_pct": float(self.delta_shares[i]), "delta_count": int(self.delta_counts[i]),
            })
        return out


def _round_half_even(values: np.ndarray) -> np.ndarray:
    return np.rint(values).astype(int)


def _shares_and_counts(fit, dataset, denominator, n_threads):
    shares = np.mean(mean_probabilities(fit, dataset, n_threads), axis=0) * 100.0
    counts = _round_half_even(shares / 100.0 * denominator)
    return shares, counts


def scenario_simulate(fit: FitResult, dataset: ChoiceDataset, perturbation: Perturbation,
                      denominator: Optional[int] = None, n_threads: int = 1,
                      force: bool = False) -> ScenarioResult:
    """Forecast outcome shares under a covariate perturbation.

    Shares are mean simulated probabilities over all events with the full
    three-outcome choice set; predicted counts are share times
    ``denominator`` (the number of events unless overridden), rounded half
    to even. Deltas compare against the unperturbed run.
    """
    _require_fit(fit, force)
    denominator = len(dataset) if denominator is None else int(denominator)
    base_shares, base_counts = _shares_and_counts(fit, dataset, denominator, n_threads)
    pert_shares, pert_counts = _shares_and_counts(fit, apply_perturbation(dataset, perturbation),
                                                  denominator, n_threads)
    return ScenarioResult(
        label=perturbation.label, shares=pert_shares, counts=pert_counts,
        delta_shares=pert_shares - base_shares, delta_counts=pert_counts - base_counts,
        denominator=denominator)


def reduction_scheme(covariate: str, target: str = "crash") -> list[Perturbation]:
    """The standard seven-scenario reduction scheme for one volatility measure:
    10% to 50% decreases in 10% steps plus one and two SD decreases."""
    percents = [Perturbation(covariate, "percent", a / 100.0, target) for a in (10, 20, 30, 40, 50)]
    sds = [Perturbation(covariate, "sd", k, target) for k in (1.0, 2.0)]
    return percents + sds


def run_scenarios(fit: FitResult, dataset: ChoiceDataset, perturbations: Iterable[Perturbation],
                  denominator: Optional[int] = None, n_threads: int = 1,
                  force: bool = False) -> list[ScenarioResult]:
    """Evaluate a baseline row plus one ScenarioResult per perturbation."""
    _require_fit(fit, force)
    denominator = len(dataset) if denominator is None else int(denominator)
    base_shares, base_counts = _shares_and_counts(fit, dataset, denominator, n_threads)
    results = [ScenarioResult(label="no change (baseline)", shares=base_shares, counts=base_counts,
                              delta_shares=np.zeros(3), delta_counts=np.zeros(3, dtype=int),
                              denominator=denominator)]
    for pert in perturbations:
        shares, counts = _shares_and_counts(fit, apply_perturbation(dataset, pert),
                                            denominator, n_threads)
        results.append(ScenarioResult(label=pert.label, shares=shares, counts=counts,
                                      delta_shares=shares - base_shares,
                                      delta_counts=counts - base_counts,
                                      denominator=denominator))
    return results
