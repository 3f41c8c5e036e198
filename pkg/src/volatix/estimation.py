"""Maximum simulated likelihood estimation for the whole model family.

The same vectorized simulator serves every class: for each draw it builds the
event-specific scale factor, blends the coefficient deviations, evaluates the
three-outcome softmax, and averages the resulting probabilities over draws
(log of the mean, never mean of logs). Plain MNL bypasses simulation with
closed-form probabilities and analytic derivatives. Optimization runs on an
unconstrained reparameterization (tau via exp, kappa via logistic, omega via
absolute value) with BFGS line search; covariance comes from the inverse
negative Hessian with BHHH as fallback and cross-check.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .draws import DrawBlock, draws_for
from .errors import CollinearCovariate, InvalidParameter, LayoutError
from .model import ChoiceDataset, ModelClass, ModelSpec, ParameterSet, softmax_rows

logger = logging.getLogger("volatix.estimation")

PROB_FLOOR = 1e-300
EVENT_CHUNK = 4096
DRAW_CHUNK_ELEMS = 1_000_000
GRAD_STEP = 7e-6
HESS_STEP = 1e-4


# ---------------------------------------------------------------------------
# Parameter packing


class ParamStructure:
    """Maps between the free unconstrained vector and natural parameters.

    Free-vector order: beta (crash block, then near-crash block), omega for
    random-tagged coefficients, tau (log scale), theta, kappa (logit scale);
    the trailing blocks appear only when the model class carries them.
    """

    def __init__(self, spec: ModelSpec):
        layout = spec.layout
        self.spec = spec
        self.n_crash = layout.n_crash
        self.n_near_crash = layout.n_near_crash
        self.n_beta = layout.n_beta
        self.random_positions = layout.random_positions() if spec.model_class.mixes else []
        self.n_random = len(self.random_positions)
        self.has_tau = spec.model_class.scales
        self.n_scale = spec.n_scale if spec.model_class.hierarchical else 0
        self.free_kappa = spec.model_class.free_kappa

        stacked = layout.stacked_names()
        names = list(stacked)
        names += [f"sd:{stacked[p]}" for p in self.random_positions]
        if self.has_tau:
            names.append("tau")
        names += [f"scale:{z}" for z in spec.scale_covariates[: self.n_scale]]
        if self.free_kappa:
            names.append("kappa")
        self.names = tuple(names)

        self.sl_beta = slice(0, self.n_beta)
        self.sl_omega = slice(self.n_beta, self.n_beta + self.n_random)
        pos = self.n_beta + self.n_random
        self.idx_tau = pos if self.has_tau else None
        pos += int(self.has_tau)
        self.sl_theta = slice(pos, pos + self.n_scale)
        pos += self.n_scale
        self.idx_kappa = pos if self.free_kappa else None
        pos += int(self.free_kappa)
        self.size = pos

    def unpack(self, u: np.ndarray) -> ParameterSet:
        u = np.asarray(u, dtype=float)
        return ParameterSet(
            beta_crash=u[: self.n_crash],
            beta_near_crash=u[self.n_crash: self.n_beta],
            omega_sd=np.abs(u[self.sl_omega]),
            theta=u[self.sl_theta].copy(),
            tau=float(np.exp(u[self.idx_tau])) if self.has_tau else 0.0,
            kappa_raw=float(u[self.idx_kappa]) if self.free_kappa else 0.0,
        )

    def pack(self, params: ParameterSet) -> np.ndarray:
        u = np.empty(self.size)
        u[: self.n_crash] = params.beta_crash
        u[self.n_crash: self.n_beta] = params.beta_near_crash
        u[self.sl_omega] = params.omega_sd[: self.n_random]
        if self.has_tau:
            u[self.idx_tau] = math.log(max(params.tau, 1e-8))
        u[self.sl_theta] = params.theta[: self.n_scale]
        if self.free_kappa:
            u[self.idx_kappa] = params.kappa_raw
        return u

    def natural(self, u: np.ndarray) -> np.ndarray:
        """Natural-space value of each free parameter (kappa in [0, 1])."""
        u = np.asarray(u, dtype=float)
        nat = u.copy()
        nat[self.sl_omega] = np.abs(u[self.sl_omega])
        if self.has_tau:
            nat[self.idx_tau] = np.exp(u[self.idx_tau])
        if self.free_kappa:
            nat[self.idx_kappa] = expit(u[self.idx_kappa])
        return nat

    def natural_of(self, params: ParameterSet) -> np.ndarray:
        """Natural vector assembled straight from a ParameterSet."""
        parts = [params.beta_crash, params.beta_near_crash, params.omega_sd[: self.n_random]]
        if self.has_tau:
            parts.append([params.tau])
        parts.append(params.theta[: self.n_scale])
        if self.free_kappa:
            parts.append([params.kappa])
        return np.concatenate([np.asarray(p, dtype=float).reshape(-1) for p in parts])

    def jacobian_diag(self, u: np.ndarray) -> np.ndarray:
        """d(natural)/d(unconstrained), diagonal by construction."""
        u = np.asarray(u, dtype=float)
        jac = np.ones(self.size)
        sgn = np.sign(u[self.sl_omega])
        sgn[sgn == 0] = 1.0
        jac[self.sl_omega] = sgn
        if self.has_tau:
            jac[self.idx_tau] = np.exp(u[self.idx_tau])
        if self.free_kappa:
            k = expit(u[self.idx_kappa])
            jac[self.idx_kappa] = k * (1.0 - k)
        return jac

    def column_scales(self, scale_crash, scale_near_crash, scale_z) -> np.ndarray:
        """Natural-space multipliers that undo scale-only covariate standardization."""
        mult = np.ones(self.size)
        col = np.concatenate([scale_crash, scale_near_crash])
        mult[self.sl_beta] = 1.0 / col
        mult[self.sl_omega] = 1.0 / col[self.random_positions] if self.n_random else 1.0
        mult[self.sl_theta] = 1.0 / np.asarray(scale_z)[: self.n_scale] if self.n_scale else 1.0
        return mult


# ---------------------------------------------------------------------------
# Core simulator


def _resolve_kappa(spec: ModelSpec, params: ParameterSet) -> float:
    fixed = spec.model_class.fixed_kappa
    if fixed is not None:
        return fixed
    if spec.model_class.free_kappa:
        return params.kappa
    # Classes without a kappa have sigma == 1 or w == 0, so the value is moot.
    return 1.0


def _check_conformable(spec: ModelSpec, params: ParameterSet, dataset: ChoiceDataset,
                       draws: Optional[DrawBlock]):
    layout = spec.layout
    if len(params.beta_crash) != layout.n_crash or len(params.beta_near_crash) != layout.n_near_crash:
        raise LayoutError("coefficient vectors do not match the layout")
    if dataset.x_crash.shape[1] != layout.n_crash or dataset.x_near_crash.shape[1] != layout.n_near_crash:
        raise LayoutError("design matrices do not match the layout")
    if spec.model_class.mixes and len(params.omega_sd) < layout.n_random:
        raise LayoutError("omega_sd shorter than the number of random coefficients")
    if spec.model_class.hierarchical:
        if len(params.theta) < spec.n_scale:
            raise LayoutError("theta shorter than the number of scale covariates")
        if dataset.z_scale.shape[1] != spec.n_scale:
            raise LayoutError("scale design does not match scale_covariates")
    if draws is not None:
        if draws.n_events != len(dataset):
            raise InvalidParameter("draw block does not cover the dataset")
        if draws.n_random != layout.n_random:
            raise InvalidParameter("draw block dimensions do not match the random coefficients")


def _event_chunks(n: int) -> list[tuple[int, int]]:
    return [(a, min(a + EVENT_CHUNK, n)) for a in range(0, n, EVENT_CHUNK)]


def _run_chunks(work: Callable[[int, int], None], n: int, n_threads: int):
    chunks = _event_chunks(n)
    if n_threads <= 1 or len(chunks) <= 1:
        for a, b in chunks:
            work(a, b)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(lambda ab: work(*ab), chunks))


def simulated_probabilities(spec: ModelSpec, params: ParameterSet, dataset: ChoiceDataset,
                            draws: Optional[DrawBlock] = None, n_threads: int = 1) -> np.ndarray:
    """Mean simulated outcome probabilities, one (baseline, near-crash, crash)
    row per event.

    For every draw the simulator forms the event's scale factor and blended
    coefficients, evaluates the closed-form logit, and averages over draws.
    Classes without scale or mixing reduce to the closed-form probabilities
    exactly.
    """
    mixes = spec.model_class.mixes and spec.layout.n_random > 0
    scales = spec.model_class.scales
    _check_conformable(spec, params, dataset, draws if (mixes or scales) else None)

    n = len(dataset)
    base_c = dataset.x_crash @ params.beta_crash if spec.layout.n_crash else np.zeros(n)
    base_nc = dataset.x_near_crash @ params.beta_near_crash if spec.layout.n_near_crash else np.zeros(n)

    if not mixes and not scales:
        v = np.column_stack([np.zeros(n), base_nc, base_c])
        return softmax_rows(v)

    if draws is None:
        draws = draws_for(spec, n)
    tau = params.tau if scales else 0.0
    kappa = _resolve_kappa(spec, params)
    if spec.model_class.hierarchical and spec.n_scale:
        log_shift = dataset.z_scale @ params.theta[: spec.n_scale] - 0.5 * tau * tau
    else:
        log_shift = np.full(n, -0.5 * tau * tau)

    # Random positions come out in stacked layout order, so the crash-side
    # draw dimensions form a leading contiguous block and slicing stays
    # copy-free inside the hot loop.
    cols_c, cols_nc = [], []
    for p in spec.layout.random_positions():
        if p < spec.layout.n_crash:
            cols_c.append(p)
        else:
            cols_nc.append(p - spec.layout.n_crash)
    sl_c = slice(0, len(cols_c))
    sl_nc = slice(len(cols_c), len(cols_c) + len(cols_nc))
    omega = params.omega_sd
    a_c = dataset.x_crash[:, cols_c] * omega[: len(cols_c)] if cols_c else None
    a_nc = dataset.x_near_crash[:, cols_nc] * omega[len(cols_c): len(cols_c) + len(cols_nc)] if cols_nc else None

    out = np.empty((n, 3))

    def work(lo: int, hi: int):
        m = hi - lo
        w = draws.normals[lo:hi]
        n_draws = w.shape[1]
        dc = max(1, min(n_draws, DRAW_CHUNK_ELEMS // max(m, 1)))
        acc = np.zeros((m, 3))
        bc = base_c[lo:hi, None]
        bnc = base_nc[lo:hi, None]
        for s in range(0, n_draws, dc):
            wd = w[:, s: s + dc, :]
            width = wd.shape[1]
            if scales:
                sig = np.exp(log_shift[lo:hi, None] + tau * wd[:, :, -1])
                mix_w = None if kappa == 1.0 else kappa + (1.0 - kappa) * sig
                vc_base, vnc_base = sig * bc, sig * bnc
            else:
                mix_w = None
                vc_base, vnc_base = bc, bnc
            if a_c is not None:
                vc = np.einsum("nj,ndj->nd", a_c[lo:hi], wd[:, :, sl_c])
                if mix_w is not None:
                    vc *= mix_w
                vc += vc_base
            else:
                vc = np.broadcast_to(vc_base, (m, width))
            if a_nc is not None:
                vnc = np.einsum("nj,ndj->nd", a_nc[lo:hi], wd[:, :, sl_nc])
                if mix_w is not None:
                    vnc *= mix_w
                vnc += vnc_base
            else:
                vnc = np.broadcast_to(vnc_base, (m, width))
            top = np.maximum(np.maximum(vc, vnc), 0.0)
            ec = vc - top
            np.exp(ec, out=ec)
            enc = vnc - top
            np.exp(enc, out=enc)
            eb = np.negative(top)
            np.exp(eb, out=eb)
            inv = eb + enc + ec
            np.reciprocal(inv, out=inv)
            acc[:, 0] += np.einsum("nd,nd->n", eb, inv)
            acc[:, 1] += np.einsum("nd,nd->n", enc, inv)
            acc[:, 2] += np.einsum("nd,nd->n", ec, inv)
        out[lo:hi] = acc / n_draws

    _run_chunks(work, n, n_threads)
    return out


def simulated_probability(spec, params, x_crash, x_near_crash, z_scale, event_draws) -> tuple:
    """Probability triple for a single event given its own draw matrix."""
    dataset = ChoiceDataset(
        x_crash=np.atleast_2d(x_crash), x_near_crash=np.atleast_2d(x_near_crash),
        z_scale=np.atleast_2d(z_scale), observed=None, event_ids=("event",),
        crash_names=spec.layout.crash_names, near_crash_names=spec.layout.near_crash_names,
        z_names=spec.scale_covariates)
    block = DrawBlock(normals=np.asarray(event_draws, dtype=float)[None, :, :],
                      scheme=spec.draw_scheme, seed=spec.seed)
    p = simulated_probabilities(spec, params, dataset, block)
    return (float(p[0, 0]), float(p[0, 1]), float(p[0, 2]))


def _event_logliks(spec, params, dataset, draws, n_threads=1):
    probs = simulated_probabilities(spec, params, dataset, draws, n_threads)
    p_obs = probs[np.arange(len(dataset)), dataset.observed]
    underflows = int(np.sum(p_obs < PROB_FLOOR))
    return np.log(np.maximum(p_obs, PROB_FLOOR)), underflows


def log_likelihood(spec: ModelSpec, params: ParameterSet, dataset: ChoiceDataset,
                   draws: Optional[DrawBlock] = None, n_threads: int = 1) -> float:
    """Sum over events of the log mean simulated probability of the observed outcome."""
    if dataset.observed is None:
        raise LayoutError("dataset carries no observed outcomes")
    lp, underflows = _event_logliks(spec, params, dataset, draws, n_threads)
    if underflows:
        logger.warning("clamped %d simulated probabilities at the underflow floor", underflows)
    return float(np.sum(lp))


def null_log_likelihood(dataset: ChoiceDataset) -> float:
    """Log likelihood of the intercept-only model (observed outcome shares)."""
    counts = dataset.outcome_counts()
    n = counts.sum()
    mask = counts > 0
    return float(np.sum(counts[mask] * np.log(counts[mask] / n)))


def information_criteria(loglik: float, loglik_null: float, k: int) -> tuple[float, float]:
    """AIC (2k - 2*loglik) and McFadden pseudo R-squared (1 - loglik/loglik_null)."""
    if k < 1:
        raise InvalidParameter(f"k must be at least 1, got {k}")
    if loglik_null == 0:
        raise InvalidParameter("null log-likelihood of zero leaves pseudo R2 undefined")
    return 2.0 * k - 2.0 * loglik, 1.0 - loglik / loglik_null


# ---------------------------------------------------------------------------
# Plain MNL closed form


def _mnl_probs(beta, x_crash, x_near_crash):
    n = x_crash.shape[0]
    nc = x_crash.shape[1]
    v = np.column_stack([
        np.zeros(n),
        x_near_crash @ beta[nc:] if x_near_crash.shape[1] else np.zeros(n),
        x_crash @ beta[:nc] if nc else np.zeros(n),
    ])
    return softmax_rows(v)


def _mnl_loglik_grad(beta, x_crash, x_near_crash, y):
    probs = _mnl_probs(beta, x_crash, x_near_crash)
    p_obs = probs[np.arange(len(y)), y]
    ll = float(np.sum(np.log(np.maximum(p_obs, PROB_FLOOR))))
    res_c = (y == 2).astype(float) - probs[:, 2]
    res_nc = (y == 1).astype(float) - probs[:, 1]
    grad = np.concatenate([x_crash.T @ res_c, x_near_crash.T @ res_nc])
    return ll, grad


def _mnl_scores(beta, x_crash, x_near_crash, y):
    probs = _mnl_probs(beta, x_crash, x_near_crash)
    res_c = ((y == 2).astype(float) - probs[:, 2])[:, None]
    res_nc = ((y == 1).astype(float) - probs[:, 1])[:, None]
    return np.hstack([x_crash * res_c, x_near_crash * res_nc])


def _mnl_hessian(beta, x_crash, x_near_crash, y):
    probs = _mnl_probs(beta, x_crash, x_near_crash)
    p1, p2 = probs[:, 1], probs[:, 2]
    h_cc = -(x_crash * (p2 * (1 - p2))[:, None]).T @ x_crash
    h_nn = -(x_near_crash * (p1 * (1 - p1))[:, None]).T @ x_near_crash
    h_cn = (x_crash * (p2 * p1)[:, None]).T @ x_near_crash
    top = np.hstack([h_cc, h_cn])
    bottom = np.hstack([h_cn.T, h_nn])
    return np.vstack([top, bottom])


# ---------------------------------------------------------------------------
# Finite differences


def _fd_gradient(fun, u, step=GRAD_STEP, even_indices=()):
    """Central-difference gradient.

    Coordinates listed in ``even_indices`` enter the objective only through
    their absolute value (the omega reparameterization), which makes the
    objective exactly even there: a central difference straddling zero would
    cancel and report a spurious stationary point. Near zero those
    coordinates use a one-sided second-order difference on |u_j| instead.
    """
    u = np.asarray(u, dtype=float)
    grad = np.empty_like(u)
    even = set(even_indices)
    f0 = None
    for j in range(len(u)):
        h = step * max(1.0, abs(u[j]))
        if j in even and abs(u[j]) < h:
            if f0 is None:
                f0 = fun(u)
            mag = abs(u[j])
            u1, u2 = u.copy(), u.copy()
            u1[j] = mag + h
            u2[j] = mag + 2.0 * h
            d_mag = (-3.0 * f0 + 4.0 * fun(u1) - fun(u2)) / (2.0 * h)
            grad[j] = d_mag if u[j] >= 0 else -d_mag
            continue
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        grad[j] = (fun(up) - fun(um)) / (2.0 * h)
    return grad


def _fd_hessian(fun, u, step=HESS_STEP):
    u = np.asarray(u, dtype=float)
    p = len(u)
    h = step * np.maximum(1.0, np.abs(u))
    f0 = fun(u)
    hess = np.empty((p, p))
    for i in range(p):
        up, um = u.copy(), u.copy()
        up[i] += h[i]
        um[i] -= h[i]
        hess[i, i] = (fun(up) - 2.0 * f0 + fun(um)) / (h[i] * h[i])
    for i in range(p):
        for j in range(i + 1, p):
            upp, upm, ump, umm = u.copy(), u.copy(), u.copy(), u.copy()
            upp[[i, j]] += [h[i], h[j]]
            upm[i] += h[i]
            upm[j] -= h[j]
            ump[i] -= h[i]
            ump[j] += h[j]
            umm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (fun(upp) - fun(upm) - fun(ump) + fun(umm)) / (4.0 * h[i] * h[j])
    return hess


def _fd_scores(event_fun, u, step=GRAD_STEP):
    u = np.asarray(u, dtype=float)
    cols = []
    for j in range(len(u)):
        h = step * max(1.0, abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        cols.append((event_fun(up) - event_fun(um)) / (2.0 * h))
    return np.column_stack(cols)


def _safe_inverse(mat):
    """Inverse of a symmetric positive-definite matrix, or None."""
    if mat is None or not np.all(np.isfinite(mat)):
        return None
    sym = 0.5 * (mat + mat.T)
    try:
        eigvals = np.linalg.eigvalsh(sym)
    except np.linalg.LinAlgError:
        return None
    if eigvals.min() <= 0 or eigvals.min() / eigvals.max() < 1e-10:
        return None
    return np.linalg.inv(sym)


# ---------------------------------------------------------------------------
# Fit result


@dataclass(frozen=True)
class FitResult:
    """Estimates, uncertainty, and fit statistics for one estimated model."""

    spec: ModelSpec
    estimates: ParameterSet
    param_names: tuple
    natural: np.ndarray
    se: np.ndarray
    vcov: Optional[np.ndarray]
    se_method: str
    vcov_alternatives: dict
    loglik: float
    loglik_null: float
    aic: float
    pseudo_r2: float
    converged: bool
    iterations: int
    gradient_norm: float
    n_events: int
    k: int
    underflow_count: int
    iteration_log: tuple = field(default_factory=tuple)

    @property
    def se_available(self) -> bool:
        return self.se_method != "unavailable"

    @property
    def z_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > 0, self.natural / self.se, np.nan)

    def coefficient(self, name: str) -> float:
        return float(self.natural[self.param_names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.se[self.param_names.index(name)])

    def summary(self) -> str:
        lines = [f"model: {self.spec.model_class.value}"]
        lines.append(f"{'parameter':<38}{'estimate':>12}{'std err':>12}{'z-stat':>10}")
        z = self.z_values
        for i, name in enumerate(self.param_names):
            se = f"{self.se[i]:.4f}" if np.isfinite(self.se[i]) else "n/a"
            zs = f"{z[i]:.2f}" if np.isfinite(z[i]) else "n/a"
            lines.append(f"{name:<38}{self.natural[i]:>12.4f}{se:>12}{zs:>10}")
        lines.append(f"Log-likelihood       {self.loglik:.4f}")
        lines.append(f"Null log-likelihood  {self.loglik_null:.4f}")
        lines.append(f"McFadden pseudo R2   {self.pseudo_r2:.4f}")
        lines.append(f"Number of parameters {self.k}")
        lines.append(f"N                    {self.n_events}")
        lines.append(f"AIC                  {self.aic:.1f}")
        lines.append(f"converged            {self.converged}")
        if not self.se_available:
            lines.append("standard errors      unavailable (singular information matrix)")
        elif self.se_method != "hessian":
            lines.append(f"standard errors      {self.se_method} fallback")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Fitting


def _validate_for_fit(spec: ModelSpec, dataset: ChoiceDataset):
    if dataset.observed is None:
        raise LayoutError("estimation requires observed outcomes")
    if tuple(dataset.crash_names) != tuple(spec.layout.crash_names):
        raise LayoutError("dataset crash design does not match the spec layout")
    if tuple(dataset.near_crash_names) != tuple(spec.layout.near_crash_names):
        raise LayoutError("dataset near-crash design does not match the spec layout")
    if tuple(dataset.z_names) != tuple(spec.scale_covariates):
        raise LayoutError("dataset scale covariates do not match the spec")
    counts = dataset.outcome_counts()
    if np.any(counts < 1):
        missing = [lbl for lbl, c in zip(("baseline", "near_crash", "crash"), counts) if c < 1]
        raise InvalidParameter(f"estimation needs at least one event per outcome; missing {missing}")
    for names, x, side in ((dataset.crash_names, dataset.x_crash, "crash"),
                           (dataset.near_crash_names, dataset.x_near_crash, "near_crash")):
        for j, name in enumerate(names):
            if name != "const" and x.shape[0] > 1 and np.ptp(x[:, j]) == 0.0:
                raise CollinearCovariate(f"{side} covariate {name!r} is constant")
        if x.shape[1] and np.linalg.matrix_rank(x) < x.shape[1]:
            raise CollinearCovariate(f"{side} design matrix is rank deficient")
    for j, name in enumerate(dataset.z_names):
        if dataset.z_scale.shape[0] > 1 and np.ptp(dataset.z_scale[:, j]) == 0.0:
            raise CollinearCovariate(f"scale covariate {name!r} is constant")
    if dataset.z_scale.shape[1] and np.linalg.matrix_rank(dataset.z_scale) < dataset.z_scale.shape[1]:
        raise CollinearCovariate("scale design matrix is rank deficient")


def _column_scales(x, names):
    scales = np.ones(x.shape[1])
    for j, name in enumerate(names):
        col = x[:, j]
        if name == "const" or set(np.unique(col)) <= {0.0, 1.0}:
            continue
        sd = float(np.std(col, ddof=1)) if len(col) > 1 else 0.0
        if sd > 0:
            scales[j] = sd
    return scales


def _mnl_start(dataset: ChoiceDataset) -> np.ndarray:
    counts = dataset.outcome_counts().astype(float)
    u0 = np.zeros(len(dataset.crash_names) + len(dataset.near_crash_names))
    names = list(dataset.crash_names) + list(dataset.near_crash_names)
    shares = np.log(np.maximum(counts, 1.0) / max(counts[0], 1.0))
    for j, name in enumerate(names):
        if name == "const":
            u0[j] = shares[2] if j < len(dataset.crash_names) else shares[1]
    return u0


def _fit_mnl_beta(dataset, gtol, max_iterations):
    x_c, x_nc, y = dataset.x_crash, dataset.x_near_crash, dataset.observed
    n = len(dataset)

    def objective(u):
        ll, grad = _mnl_loglik_grad(u, x_c, x_nc, y)
        return -ll / n, -grad / n

    res = minimize(objective, _mnl_start(dataset), jac=True, method="BFGS",
                   options={"gtol": gtol, "maxiter": max_iterations})
    return res


def fit(spec: ModelSpec, dataset: ChoiceDataset, *, standardize: bool = False,
        n_threads: int = 1, max_iterations: int = 500, gradient_tolerance: float = 1e-5,
        n_starts: Optional[int] = None, start: Optional[ParameterSet] = None,
        compute_se: bool = True) -> FitResult:
    """Maximize the simulated log likelihood and assemble a FitResult.

    Optimization runs on the per-event mean log likelihood (the scaled
    problem) with BFGS; convergence means the scaled gradient max-norm is at
    or below ``gradient_tolerance``. Generalized classes restart from
    ``n_starts`` perturbed starting points (default 3) to guard against
    local optima. Deterministic given the spec's seed.
    """
    _validate_for_fit(spec, dataset)
    structure = ParamStructure(spec)
    n = len(dataset)

    scales_c = _column_scales(dataset.x_crash, dataset.crash_names) if standardize else np.ones(dataset.x_crash.shape[1])
    scales_nc = _column_scales(dataset.x_near_crash, dataset.near_crash_names) if standardize else np.ones(dataset.x_near_crash.shape[1])
    scales_z = _column_scales(dataset.z_scale, dataset.z_names) if standardize else np.ones(dataset.z_scale.shape[1])
    work_data = dataset
    if standardize:
        work_data = ChoiceDataset(
            x_crash=dataset.x_crash / scales_c, x_near_crash=dataset.x_near_crash / scales_nc,
            z_scale=dataset.z_scale / scales_z if dataset.z_scale.shape[1] else dataset.z_scale,
            observed=dataset.observed, event_ids=dataset.event_ids,
            crash_names=dataset.crash_names, near_crash_names=dataset.near_crash_names,
            z_names=dataset.z_names)

    is_mnl = spec.model_class is ModelClass.MNL
    draws = None if is_mnl else draws_for(spec, n)

    mnl_res = _fit_mnl_beta(work_data, gradient_tolerance, max_iterations)

    if is_mnl:
        runs = [(mnl_res, ())]
    else:
        omega_indices = tuple(range(structure.sl_omega.start, structure.sl_omega.stop))

        def objective(u):
            params = structure.unpack(u)
            lp, _ = _event_logliks(spec, params, work_data, draws, n_threads)
            return -float(np.sum(lp)) / n

        def gradient(u):
            return _fd_gradient(objective, u, even_indices=omega_indices)

        base = np.zeros(structure.size)
        base[structure.sl_beta] = mnl_res.x
        base[structure.sl_omega] = 0.2
        if structure.has_tau:
            base[structure.idx_tau] = math.log(0.2)
        if start is not None:
            base = structure.pack(start)
        if n_starts is None:
            n_starts = 3 if spec.model_class.fixed_kappa is not None or spec.model_class.free_kappa else 1
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(spec.seed), spawn_key=(9001,)))
        starts = [base]
        for _ in range(max(0, n_starts - 1)):
            starts.append(base + rng.normal(0.0, 0.25, structure.size))

        runs = []
        for u0 in starts:
            log: list = []
            cache = {}

            def wrapped(u, _cache=cache):
                val = objective(u)
                _cache["last"] = val
                return val

            def callback(_xk, _cache=cache, _log=log):
                _log.append(-_cache.get("last", np.nan) * n)
                logger.info("iteration %d: loglik %.6f", len(_log), _log[-1])

            res = minimize(wrapped, u0, jac=gradient, method="BFGS", callback=callback,
                           options={"gtol": gradient_tolerance, "maxiter": max_iterations})
            runs.append((res, tuple(log)))

    best_res, best_log = min(runs, key=lambda r: r[0].fun if np.isfinite(r[0].fun) else np.inf)
    u_hat = np.asarray(best_res.x, dtype=float)
    grad_final = np.asarray(best_res.jac, dtype=float)
    gradient_norm = float(np.max(np.abs(grad_final))) if grad_final.size else 0.0
    converged = bool(np.isfinite(gradient_norm) and gradient_norm <= gradient_tolerance)

    params_std = structure.unpack(u_hat)
    lp_final, underflows = _event_logliks(spec, params_std, work_data, draws, n_threads)
    loglik = float(np.sum(lp_final))
    loglik_null = null_log_likelihood(dataset)
    aic, pseudo_r2 = information_criteria(loglik, loglik_null, structure.size)

    se = np.full(structure.size, np.nan)
    vcov_nat = None
    se_method = "unavailable"
    alternatives = {"hessian": None, "bhhh": None, "robust": None}
    if compute_se:
        if is_mnl:
            hessian = _mnl_hessian(u_hat, work_data.x_crash, work_data.x_near_crash, work_data.observed)
            scores = _mnl_scores(u_hat, work_data.x_crash, work_data.x_near_crash, work_data.observed)
        else:
            def total_loglik(u):
                lp, _ = _event_logliks(spec, structure.unpack(u), work_data, draws, n_threads)
                return float(np.sum(lp))

            def event_loglik(u):
                lp, _ = _event_logliks(spec, structure.unpack(u), work_data, draws, n_threads)
                return lp

            hessian = _fd_hessian(total_loglik, u_hat)
            scores = _fd_scores(event_loglik, u_hat)

        jac = structure.jacobian_diag(u_hat) * structure.column_scales(scales_c, scales_nc, scales_z)
        vcov_h = _safe_inverse(-hessian)
        info_b = scores.T @ scores
        vcov_b = _safe_inverse(info_b)
        vcov_r = vcov_h @ info_b @ vcov_h if vcov_h is not None else None
        for key, v in (("hessian", vcov_h), ("bhhh", vcov_b), ("robust", vcov_r)):
            alternatives[key] = jac[:, None] * v * jac[None, :] if v is not None else None
        if alternatives["hessian"] is not None:
            vcov_nat, se_method = alternatives["hessian"], "hessian"
        elif alternatives["bhhh"] is not None:
            vcov_nat, se_method = alternatives["bhhh"], "bhhh"
            logger.warning("Hessian not positive definite at the optimum; falling back to BHHH standard errors")
        if vcov_nat is not None:
            se = np.sqrt(np.diag(vcov_nat))

    natural = structure.natural(u_hat) * structure.column_scales(scales_c, scales_nc, scales_z)
    estimates = ParameterSet(
        beta_crash=natural[: structure.n_crash],
        beta_near_crash=natural[structure.n_crash: structure.n_beta],
        omega_sd=natural[structure.sl_omega],
        theta=natural[structure.sl_theta],
        tau=float(natural[structure.idx_tau]) if structure.has_tau else 0.0,
        kappa_raw=float(u_hat[structure.idx_kappa]) if structure.free_kappa else 0.0,
    )
    if underflows:
        logger.warning("final likelihood clamped %d probabilities at the underflow floor", underflows)
    return FitResult(
        spec=spec, estimates=estimates, param_names=structure.names, natural=natural,
        se=se, vcov=vcov_nat, se_method=se_method, vcov_alternatives=alternatives,
        loglik=loglik, loglik_null=loglik_null, aic=aic, pseudo_r2=pseudo_r2,
        converged=converged, iterations=int(best_res.nit), gradient_norm=gradient_norm,
        n_events=n, k=structure.size, underflow_count=underflows, iteration_log=best_log,
    )
