"""Scikit-learn style estimators wrapping the featurization and model core.

``VolatilityFeaturizer`` is a stateless transformer from raw event traces to
the ten-column volatility feature frame; ``GeneralizedMixedLogit`` exposes
the whole model family through the familiar fit / predict_proba / predict
surface so it composes with pipelines, cloning, and parameter search.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import estimation, inference
from .errors import LayoutError
from .io import featurize_traces
from .kinematics import EventTrace
from .model import (ChoiceDataset, Coefficient, CoefficientLayout, ModelSpec,
                    Outcome, OUTCOME_LABELS)


class VolatilityFeaturizer(BaseEstimator, TransformerMixin):
    """Transform raw event traces into volatility feature rows.

    The transform is stateless (fit is a no-op). Input is a sequence of
    :class:`EventTrace`; output is a DataFrame with event_id, event_type and
    the ten volatility fields, one row per censorable event. Events whose
    censored prefix is too short are dropped and listed in ``rejects_``.

    Parameters
    ----------
    drop_incomplete : bool
        When True (default), rows with any missing component are kept with
        NaN cells; when False they are dropped entirely.
    """

    def __init__(self, drop_incomplete: bool = False):
        self.drop_incomplete = drop_incomplete

    def fit(self, X, y=None):
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> pd.DataFrame:
        traces = list(X)
        for tr in traces:
            if not isinstance(tr, EventTrace):
                raise TypeError(f"expected EventTrace inputs, got {type(tr).__name__}")
        frame, rejects = featurize_traces(traces)
        self.rejects_ = rejects
        if self.drop_incomplete and len(frame):
            frame = frame.dropna().reset_index(drop=True)
        return frame


class GeneralizedMixedLogit(BaseEstimator):
    """Crash-propensity choice model with scale and random heterogeneity.

    Parameters
    ----------
    model_class : str
        One of mnl, rp_mnl, s_mnl, hs_mnl, gmnl_i, gmnl_ii, h_gmnl.
    crash_covariates, near_crash_covariates : sequence of str
        Column names entering each utility; the name ``const`` adds the
        alternative-specific intercept.
    random_coefficients : sequence of str
        Entries like ``crash:volatility`` (or plain names, applying to both
        utilities) tagging coefficients as normally mixed.
    scale_covariates : sequence of str
        Columns driving the observed part of the scale factor
        (hierarchical classes only).
    n_draws : int or None
        Simulation draws; defaults to 1 for MNL and 500 otherwise.
    draw_scheme : str
        "halton" or "random".
    seed : int
        Master seed for draws and multi-starts.
    standardize : bool
        Scale continuous covariates to unit variance during optimization
        (estimates are reported in original units either way).
    n_threads : int
        Worker threads for likelihood evaluation (results are identical for
        any thread count).

    Attributes
    ----------
    result_ : estimation.FitResult
        Full estimation result after :meth:`fit`.
    classes_ : ndarray of outcome labels, ["baseline", "near_crash", "crash"].
    """

    def __init__(self, model_class: str = "mnl",
                 crash_covariates: Sequence[str] = ("const",),
                 near_crash_covariates: Sequence[str] = ("const",),
                 random_coefficients: Sequence[str] = (),
                 scale_covariates: Sequence[str] = (),
                 n_draws: Optional[int] = None, draw_scheme: str = "halton", seed: int = 0,
                 standardize: bool = False, n_threads: int = 1):
        self.model_class = model_class
        self.crash_covariates = crash_covariates
        self.near_crash_covariates = near_crash_covariates
        self.random_coefficients = random_coefficients
        self.scale_covariates = scale_covariates
        self.n_draws = n_draws
        self.draw_scheme = draw_scheme
        self.seed = seed
        self.standardize = standardize
        self.n_threads = n_threads

    def _spec(self) -> ModelSpec:
        tags = set()
        for entry in self.random_coefficients:
            if ":" in entry:
                tags.add(tuple(entry.split(":", 1)))
            else:
                tags.add(("crash", entry))
                tags.add(("near_crash", entry))
        layout = CoefficientLayout(
            crash=tuple(Coefficient(name, ("crash", name) in tags) for name in self.crash_covariates),
            near_crash=tuple(Coefficient(name, ("near_crash", name) in tags)
                             for name in self.near_crash_covariates),
        )
        return ModelSpec(model_class=self.model_class, layout=layout,
                         scale_covariates=tuple(self.scale_covariates),
                         n_draws=self.n_draws, draw_scheme=self.draw_scheme, seed=self.seed)

    def _dataset(self, X: pd.DataFrame, y=None) -> ChoiceDataset:
        if not isinstance(X, pd.DataFrame):
            raise LayoutError("X must be a pandas DataFrame of event covariates")
        frame = X.copy()
        if y is not None:
            frame = frame.assign(outcome=list(y))
        return ChoiceDataset.from_frame(frame, self._spec())

    def fit(self, X: pd.DataFrame, y):
        """Fit by maximum simulated likelihood.

        X holds one row of covariates per event; y the observed outcome
        labels ("baseline", "near_crash", "crash" or Outcome values).
        """
        dataset = self._dataset(X, y)
        self.result_ = estimation.fit(self._spec(), dataset, standardize=self.standardize,
                                      n_threads=self.n_threads)
        self.classes_ = np.asarray(OUTCOME_LABELS)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X: pd.DataFrame) -> np.ndarray:
        """Mean simulated probabilities, columns ordered as ``classes_``."""
        check_is_fitted(self, "result_")
        dataset = self._dataset(X)
        return inference.mean_probabilities(self.result_, dataset, n_threads=self.n_threads)

    def predict(self, X: pd.DataFrame) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def score(self, X: pd.DataFrame, y) -> float:
        """Mean per-event log likelihood of the observed outcomes."""
        check_is_fitted(self, "result_")
        probs = self.predict_proba(X)
        labels = np.asarray([int(Outcome.parse(v)) for v in y])
        p_obs = probs[np.arange(len(labels)), labels]
        return float(np.mean(np.log(np.maximum(p_obs, 1e-300))))

    def summary(self) -> str:
        check_is_fitted(self, "result_")
        return self.result_.summary()
