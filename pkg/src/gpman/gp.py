"""Exact Gaussian process regression on vertex-indexed data."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kernels import EXTRINSIC, gram, gram_diag

logger = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "GpFit",
    "FactorizationError",
    "LengthscaleFit",
    "fit",
    "predict",
    "predict_variance",
    "log_marginal_likelihood",
    "fit_lengthscale",
]

_JITTERS = (0.0,) + tuple(10.0 ** -p for p in range(12, 5, -1))


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization failed even at the largest allowed jitter."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Noisy observations ``y_i = f(x_i) + eps_i`` at distinct vertices.

    Zero noise is accepted; fitting then relies on the jitter policy.
    """

    x: np.ndarray
    y: np.ndarray
    noise: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.size != y.size:
            raise ValueError(f"{x.size} inputs but {y.size} targets")
        if np.unique(x).size != x.size:
            raise ValueError("training vertices must be distinct")
        if not self.noise >= 0:
            raise ValueError("noise variance must be nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.size

    def with_targets(self, y):
        return Dataset(self.x, y, self.noise)


@dataclass(frozen=True, eq=False)
class GpFit:
    """A factorized posterior.

    Attributes
    ----------
    chol : ndarray
        Lower Cholesky factor of ``K_xx + (noise + jitter) I``.
    alpha : ndarray
        ``(K_xx + noise I)^-1 y``.
    jitter : float
        Extra diagonal added to make the factorization succeed.
    """

    spec: object
    context: object
    data: Dataset
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    metadata: dict = field(default_factory=dict)


def _factorize(K, noise, variance):
    n = K.shape[0]
    for jitter in _JITTERS:
        A = K + (noise + jitter * variance) * np.eye(n)
        try:
            L = scipy.linalg.cholesky(A, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            continue
        if jitter:
            logger.warning("cholesky needed jitter %.0e * variance", jitter)
        return L, jitter * variance
    raise FactorizationError(f"cholesky failed at jitter up to {_JITTERS[-1]:g} * variance")


def fit(spec, context, data):
    """Condition the zero-mean prior ``spec`` on ``data``."""
    n = len(data)
    if n == 0:
        return GpFit(spec, context, data, np.zeros((0, 0)), np.zeros(0))
    K = gram(spec, context, data.x)
    L, jitter = _factorize(K, data.noise, spec.variance)
    alpha = scipy.linalg.cho_solve((L, True), data.y)
    A = K + (data.noise + jitter) * np.eye(n)
    residual = np.linalg.norm(A @ alpha - data.y)
    bound = 1e-8 * (np.linalg.norm(A, 2) * np.linalg.norm(alpha) + np.linalg.norm(data.y))
    if not residual <= bound:
        raise FactorizationError(f"linear solve residual {residual:.3e} too large")
    return GpFit(spec, context, data, L, alpha, jitter, {"jitter": jitter})


def _cross(fit, targets):
    return gram(fit.spec, fit.context, targets, fit.data.x)


def predict(fit, targets):
    """Posterior mean and covariance at vertex indices ``targets``."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    prior = gram(fit.spec, fit.context, targets)
    if len(fit.data) == 0:
        return np.zeros(targets.size), prior
    Ktx = _cross(fit, targets)
    mean = Ktx @ fit.alpha
    V = scipy.linalg.solve_triangular(fit.chol, Ktx.T, lower=True)
    cov = prior - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def predict_variance(fit, targets):
    """Diagonal of the posterior covariance without forming the full matrix."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    prior = gram_diag(fit.spec, fit.context, targets)
    if len(fit.data) == 0:
        return prior
    V = scipy.linalg.solve_triangular(fit.chol, _cross(fit, targets).T, lower=True)
    return prior - np.einsum("ij,ij->j", V, V)


def log_marginal_likelihood(spec, context, data):
    """``log N(y | 0, K_xx + noise I)``."""
    gp = fit(spec, context, data)
    n = len(data)
    return float(-0.5 * data.y @ gp.alpha - np.log(np.diag(gp.chol)).sum()
                 - 0.5 * n * math.log(2.0 * math.pi))


@dataclass(frozen=True)
class LengthscaleFit:
    kappa: float
    log_marginal_likelihood: float
    initial_log_marginal_likelihood: float
    n_evaluations: int


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def fit_lengthscale(spec, context, data, kappa0, bracket_factor=32.0, tol=1e-3, n_scan=17):
    """Maximize the log marginal likelihood over the length scale only.

    A coarse scan over ``log kappa`` in ``[kappa0 / bracket_factor,
    kappa0 * bracket_factor]`` locates the best grid cell, which golden-section
    search then refines to ``tol`` in ``log kappa``.  Deterministic.

    Returns
    -------
    LengthscaleFit
        The result never has a lower likelihood than ``kappa0``.
    """
    if spec.family != EXTRINSIC:
        logger.info("fitting the length scale of a %s kernel", spec.family)
    cache = {}

    def objective(log_kappa):
        if log_kappa not in cache:
            try:
                value = log_marginal_likelihood(spec.with_kappa(math.exp(log_kappa)), context, data)
            except FactorizationError:
                value = -math.inf
            cache[log_kappa] = value if math.isfinite(value) else -math.inf
        return cache[log_kappa]

    center = math.log(kappa0)
    half = math.log(bracket_factor)
    grid = np.linspace(center - half, center + half, n_scan)
    scores = [objective(float(g)) for g in grid]
    initial = objective(center)
    if not any(math.isfinite(s) for s in scores):
        raise FactorizationError("log marginal likelihood is not finite anywhere in the bracket")
    best = int(np.argmax(scores))
    lo = float(grid[max(best - 1, 0)])
    hi = float(grid[min(best + 1, n_scan - 1)])

    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    while hi - lo > tol:
        if objective(c) >= objective(d):
            hi, d = d, c
            c = hi - _INVPHI * (hi - lo)
        else:
            lo, c = c, d
            d = lo + _INVPHI * (hi - lo)
    candidates = [0.5 * (lo + hi), float(grid[best]), center]
    winner = max(candidates, key=objective)
    return LengthscaleFit(math.exp(winner), objective(winner), initial, len(cache))
