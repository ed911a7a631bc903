"""Gaussian-process change-point severity scoring and regime segmentation.

A lookback window of prices is standardized and fit twice: once with a single
Matérn 3/2 kernel and once with a change-point kernel that blends two Matérn
kernels through a sigmoid in time. The severity maps the log-marginal-
likelihood gap through a logistic, so `severity >= nu` is equivalent to
`L_C - L_M >= logit(nu)`. The backward segmentation scan cuts a regime
whenever severity crosses the threshold and force-cuts at the maximum regime
length.

Optimization uses L-BFGS-B on log-parameters with closed-form gradients of
the marginal likelihood (the gradients are verified against central finite
differences in the test suite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError, ValidationError
from .market_data import PriceSeries

_LOG_2PI = math.log(2.0 * math.pi)
_JITTER = 1e-6
_NOISE_FLOOR = 1e-8
MIN_FIT_WINDOW = 5


@dataclass(frozen=True)
class Matern32Params:
    amplitude: float
    lengthscale: float
    noise_var: float

    def __post_init__(self):
        if self.amplitude <= 0 or self.lengthscale <= 0:
            raise ValidationError("amplitude and lengthscale must be positive")
        object.__setattr__(self, "noise_var", max(self.noise_var, _NOISE_FLOOR))


@dataclass(frozen=True)
class ChangePointParams:
    left: Matern32Params
    right: Matern32Params
    location: float   # change-point position, in the units of the fit inputs
    steepness: float  # sigmoid steepness, in the same units

    def __post_init__(self):
        if self.steepness <= 0:
            raise ValidationError("steepness must be positive")


@dataclass(frozen=True)
class CpdFit:
    lml_single: float
    lml_change: float
    severity: float
    location: float  # fractional index within the window


@dataclass(frozen=True)
class SegmentationConfig:
    nu: float = 0.9
    l_lbw: int = 21
    l_min: int = 5
    l_max: int = 21

    def __post_init__(self):
        if not 0.5 < self.nu < 1.0:
            raise ValidationError("nu must lie in (0.5, 1)")
        if self.l_min >= self.l_max:
            raise ValidationError("l_min must be < l_max")


@dataclass(frozen=True)
class Regime:
    ticker: str
    t0: int
    t1: int
    severity: float = math.nan  # severity of the cut creating t0 (NaN if forced)

    def __post_init__(self):
        if self.t0 >= self.t1:
            raise ValidationError("regime must satisfy t0 < t1")

    @property
    def length(self) -> int:
        return self.t1 - self.t0


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def _matern32_base(x1, x2, lengthscale: float) -> np.ndarray:
    d = np.abs(np.subtract.outer(np.atleast_1d(x1), np.atleast_1d(x2)))
    u = math.sqrt(3.0) * d / lengthscale
    return (1.0 + u) * np.exp(-u)


def matern32_cov(x1, x2, params: Matern32Params, include_noise: bool = False):
    """Matérn 3/2 covariance; noise is added on the diagonal only."""
    k = params.amplitude**2 * _matern32_base(x1, x2, params.lengthscale)
    if include_noise:
        x1a, x2a = np.atleast_1d(x1), np.atleast_1d(x2)
        k = k + params.noise_var * (np.subtract.outer(x1a, x2a) == 0.0)
    if np.ndim(x1) == 0 and np.ndim(x2) == 0:
        return float(k[0, 0])
    return k


def changepoint_cov(x1, x2, params: ChangePointParams, include_noise: bool = False):
    """Sigmoid-blended two-kernel covariance.

    With s(x) = logistic(steepness * (x - location)):
        k = (1-s(x1))(1-s(x2)) k_left + s(x1) s(x2) k_right.
    """
    x1a = np.atleast_1d(np.asarray(x1, dtype=float))
    x2a = np.atleast_1d(np.asarray(x2, dtype=float))
    s1 = _sigmoid(params.steepness * (x1a - params.location))
    s2 = _sigmoid(params.steepness * (x2a - params.location))
    k_left = matern32_cov(x1a, x2a, params.left, include_noise)
    k_right = matern32_cov(x1a, x2a, params.right, include_noise)
    k = np.outer(1 - s1, 1 - s2) * k_left + np.outer(s1, s2) * k_right
    if np.ndim(x1) == 0 and np.ndim(x2) == 0:
        return float(k[0, 0])
    return k


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def gp_log_marginal_likelihood(x: np.ndarray, y: np.ndarray, cov) -> float:
    """Standard GP log marginal likelihood via Cholesky with jitter escalation.

    `cov` is either the Gram matrix or a callable k(x, x) producing it.
    """
    K = cov(x, x) if callable(cov) else np.asarray(cov, float)
    lml, _, _ = _lml_core(np.asarray(K, float), np.asarray(y, float))
    return lml


def _lml_core(K: np.ndarray, y: np.ndarray):
    """Return (lml, alpha, K_inv); escalates jitter 3 times before failing."""
    n = len(y)
    jitter = _JITTER
    for _ in range(4):
        try:
            c, low = cho_factor(K + jitter * np.eye(n), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter *= 100.0
    else:
        raise NumericalError("Gram matrix factorization failed after jitter escalation")
    alpha = cho_solve((c, low), y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(c)))) - 0.5 * n * _LOG_2PI
    K_inv = cho_solve((c, low), np.eye(n))
    return lml, alpha, K_inv


# ---------------------------------------------------------------------------
# Likelihood objectives with analytic gradients (log-parameter space)
# ---------------------------------------------------------------------------

def _matern_terms(x: np.ndarray, log_amp: float, log_len: float, log_nv: float):
    """K plus the per-parameter dK matrices for a Matérn 3/2 with noise."""
    amp2 = math.exp(2.0 * log_amp)
    ell = math.exp(log_len)
    nv = math.exp(log_nv)
    d = np.abs(x[:, None] - x[None, :])
    u = math.sqrt(3.0) * d / ell
    e = np.exp(-u)
    m = (1.0 + u) * e
    K = amp2 * m + nv * np.eye(len(x))
    dK_amp = 2.0 * amp2 * m
    dK_len = amp2 * (u * u) * e   # d/d log(ell)
    dK_nv = nv * np.eye(len(x))
    return K, (dK_amp, dK_len, dK_nv)


def _neg_lml_single(theta: np.ndarray, x: np.ndarray, y: np.ndarray):
    K, dKs = _matern_terms(x, *theta)
    try:
        lml, alpha, K_inv = _lml_core(K, y)
    except NumericalError:
        return 1e10, np.zeros_like(theta)
    W = np.outer(alpha, alpha) - K_inv
    grad = np.array([-0.5 * np.sum(W * dK) for dK in dKs])
    return -lml, grad


def _neg_lml_change(theta: np.ndarray, x: np.ndarray, y: np.ndarray):
    """theta = (logA1, logL1, logNv1, logA2, logL2, logNv2, tau, logBeta)."""
    tau, log_beta = theta[6], theta[7]
    beta = math.exp(log_beta)
    K1, dK1s = _matern_terms(x, *theta[0:3])
    K2, dK2s = _matern_terms(x, *theta[3:6])
    s = _sigmoid(beta * (x - tau))
    a1 = np.outer(1 - s, 1 - s)
    a2 = np.outer(s, s)
    K = a1 * K1 + a2 * K2
    try:
        lml, alpha, K_inv = _lml_core(K, y)
    except NumericalError:
        return 1e10, np.zeros_like(theta)
    W = np.outer(alpha, alpha) - K_inv

    grad = np.empty(8)
    for j, dK in enumerate(dK1s):
        grad[j] = -0.5 * np.sum(W * (a1 * dK))
    for j, dK in enumerate(dK2s):
        grad[3 + j] = -0.5 * np.sum(W * (a2 * dK))
    # dK/ds_i is Q_ij = -(1-s_j) K1_ij + s_j K2_ij; chain through tau and beta
    Q = -K1 * (1 - s)[None, :] + K2 * s[None, :]
    t = s * (1 - s)
    R = t[:, None] * Q
    dK_tau = -beta * (R + R.T)
    U = ((x - tau) * t)[:, None] * Q
    dK_beta = beta * (U + U.T)
    grad[6] = -0.5 * np.sum(W * dK_tau)
    grad[7] = -0.5 * np.sum(W * dK_beta)
    return -lml, grad


_SINGLE_BOUNDS = [(-7.0, 4.0), (-5.0, 4.0), (math.log(_NOISE_FLOOR), 1.5)]
_CHANGE_BOUNDS = _SINGLE_BOUNDS * 2 + [(0.02, 0.98), (math.log(0.25), math.log(500.0))]

# deterministic multi-start grids (standardized data, time in [0, 1])
_SINGLE_STARTS = [
    (0.0, math.log(0.2), math.log(0.1)),
    (0.0, math.log(0.05), math.log(0.1)),
    (0.0, math.log(1.0), math.log(0.5)),
]
_CHANGE_START_EXTRAS = [(0.5, 0.0), (0.33, math.log(25.0)), (0.67, math.log(100.0))]


def fit_kernel(x: np.ndarray, y: np.ndarray, kind: str, maxiter: int = 100):
    """Maximize the GP marginal likelihood over kernel hyperparameters.

    `kind` is "single" or "changepoint"; inputs should be standardized with
    x in [0, 1]. Runs 3 deterministic starts of L-BFGS-B and returns
    (params, lml) for the best; raises only if every start fails.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    best = None
    if kind == "single":
        for start in _SINGLE_STARTS:
            res = optimize.minimize(
                _neg_lml_single, np.array(start), args=(x, y), jac=True,
                method="L-BFGS-B", bounds=_SINGLE_BOUNDS,
                options={"maxiter": maxiter},
            )
            if best is None or res.fun < best.fun:
                best = res
        if best is None or not np.isfinite(best.fun):
            raise NumericalError("single-kernel fit failed on all starts")
        la, ll, lnv = best.x
        params = Matern32Params(math.exp(la), math.exp(ll), math.exp(lnv))
        return params, -float(best.fun)

    if kind == "changepoint":
        base = np.array(_SINGLE_STARTS[0])
        for tau0, log_beta0 in _CHANGE_START_EXTRAS:
            start = np.concatenate([base, base, [tau0, log_beta0]])
            res = optimize.minimize(
                _neg_lml_change, start, args=(x, y), jac=True,
                method="L-BFGS-B", bounds=_CHANGE_BOUNDS,
                options={"maxiter": maxiter},
            )
            if best is None or res.fun < best.fun:
                best = res
        if best is None or not np.isfinite(best.fun):
            raise NumericalError("change-point fit failed on all starts")
        th = best.x
        params = ChangePointParams(
            Matern32Params(math.exp(th[0]), math.exp(th[1]), math.exp(th[2])),
            Matern32Params(math.exp(th[3]), math.exp(th[4]), math.exp(th[5])),
            location=float(th[6]),  # in [0, 1]; callers rescale to index units
            steepness=math.exp(th[7]),
        )
        return params, -float(best.fun)

    raise ValidationError(f"unknown kernel kind {kind!r}")


def severity_from_lml(lml_single: float, lml_change: float) -> float:
    """Likelihood-gap severity: logistic(L_C - L_M), equivalent to
    L_C / (L_M + L_C) on the likelihood scale."""
    return float(_sigmoid(lml_change - lml_single))


def cpd_severity(window: np.ndarray, maxiter: int = 100) -> CpdFit:
    """Fit single and change-point kernels to one standardized window.

    The window is standardized internally; time is mapped to [0, 1]. The
    returned location is a fractional index within the window.
    """
    w = np.asarray(window, float)
    n = len(w)
    if n < MIN_FIT_WINDOW:
        raise ValidationError(f"window must have at least {MIN_FIT_WINDOW} points")
    std = w.std()
    y = (w - w.mean()) / (std if std > 0 else 1.0)
    x = np.linspace(0.0, 1.0, n)
    _, lml_single = fit_kernel(x, y, "single", maxiter=maxiter)
    cp_params, lml_change = fit_kernel(x, y, "changepoint", maxiter=maxiter)
    return CpdFit(
        lml_single=lml_single,
        lml_change=lml_change,
        severity=severity_from_lml(lml_single, lml_change),
        location=cp_params.location * (n - 1),
    )


def segment_series(p: PriceSeries, cfg: SegmentationConfig = SegmentationConfig()):
    """Backward-scan segmentation of a price series into regimes.

    Scans from the last observation toward the first; on a severity >= nu it
    cuts at the fitted change-point location and resumes just below it, and
    it force-cuts whenever a segment reaches l_max. Segments shorter than
    l_min (including the unterminated head of the series) are dropped.
    Regimes are returned in ascending order and capped at l_max.
    """
    close = p.close
    n = len(close)
    if n <= cfg.l_lbw:
        raise ValidationError("series must be longer than the lookback window")
    regimes: list[Regime] = []
    t = n - 1
    t1 = n - 1
    while t >= 0:
        lo = max(0, t - cfg.l_lbw + 1)
        fit = None
        if t - lo + 1 >= MIN_FIT_WINDOW:
            fit = cpd_severity(close[lo : t + 1])
        if fit is not None and fit.severity >= cfg.nu:
            t_cpd = lo + fit.location
            t0 = math.ceil(t_cpd)
            if t1 - t0 >= cfg.l_min:
                regimes.append(
                    Regime(p.ticker, max(t0, t1 - cfg.l_max), t1, fit.severity)
                )
            t = math.floor(t_cpd) - 1
            t1 = t
        else:
            t -= 1
            if t1 - t > cfg.l_max:
                t = t1 - cfg.l_max
            if t1 - t == cfg.l_max:
                regimes.append(Regime(p.ticker, t, t1))
                t1 = t
    regimes.reverse()
    return regimes
