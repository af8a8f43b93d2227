"""Pointwise worst-case prediction errors over an intrinsic RKHS ball.

For a linear predictor ``m(t) = alpha_t (f(X) + eps)`` the worst case of
``E |m(t) - f(t)|^2`` over ``||f||_c <= 1`` is
``||c(t, .) - sum_j alpha_tj c(x_j, .)||_c^2 + noise * ||alpha_t||^2``.
When the predictor is the posterior mean of ``c`` itself this is the
posterior variance; otherwise the RKHS norm is approximated by
interpolating on a set of points ``X'``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import gp
from .kernels import INTRINSIC, gram, gram_diag, intrinsic_features

__all__ = [
    "WceField",
    "wce_intrinsic",
    "wce_extrinsic_approx",
    "wce_trace_mean",
    "wce_spatial_stats",
    "spatial_stats",
    "INTRINSIC_EXACT",
    "EXTRINSIC_APPROX",
    "INTRINSIC_APPROX",
    "PINV_RTOL",
]

INTRINSIC_EXACT = "intrinsic_exact"
EXTRINSIC_APPROX = "extrinsic_approx"
INTRINSIC_APPROX = "intrinsic_approx"
MODEL_TAGS = (INTRINSIC_EXACT, EXTRINSIC_APPROX, INTRINSIC_APPROX)

PINV_RTOL = 1e-10
_NEGATIVE_TOL = 1e-10


def spatial_stats(values):
    """Mean and population standard deviation over locations, summed exactly."""
    values = np.asarray(values, dtype=float)
    mean = math.fsum(values) / values.size
    var = math.fsum((values - mean) ** 2) / values.size
    return mean, math.sqrt(var)


@dataclass(frozen=True, eq=False)
class WceField:
    """Per-target worst-case errors with their spatial summary."""

    model_tag: str
    targets: np.ndarray
    values: np.ndarray
    mean: float
    spatial_std: float
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, model_tag, targets, values, **metadata):
        """Clamp roundoff negatives to zero; reject anything larger."""
        if model_tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {model_tag!r}")
        values = np.asarray(values, dtype=float)
        floor = -_NEGATIVE_TOL * max(1.0, float(np.abs(values).max(initial=0.0)))
        if (values < floor).any():
            raise ArithmeticError(f"worst-case error {values.min():.3e} is negative "
                                  "beyond roundoff; kernel is not PSD")
        values = np.maximum(values, 0.0)
        mean, std = spatial_stats(values)
        return cls(model_tag, np.asarray(targets, dtype=np.int64), values, mean, std, metadata)


def wce_intrinsic(spec, spectrum, data_x, targets, noise):
    """Exact worst-case error of the intrinsic posterior mean.

    Equals the posterior variance.  Computed in the J-dimensional weight
    space, ``phi_t^T (I + Phi_X^T Phi_X / noise)^-1 phi_t``, which is cheap
    for large data sets and independent of the function-space code in
    :mod:`gpman.gp`.
    """
    if spec.family != INTRINSIC:
        raise ValueError("wce_intrinsic needs an intrinsic kernel")
    data_x = np.asarray(data_x, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if np.unique(data_x).size != data_x.size:
        raise ValueError("data locations must be distinct")
    phi = intrinsic_features(spec, spectrum)
    phi_t = phi[targets]
    if data_x.size == 0:
        values = np.einsum("ij,ij->i", phi_t, phi_t)
    else:
        phi_x = phi[data_x]
        precision = np.eye(phi.shape[1]) + phi_x.T @ phi_x / noise
        try:
            L = scipy.linalg.cholesky(precision, lower=True)
        except np.linalg.LinAlgError as exc:
            raise gp.FactorizationError(str(exc)) from None
        V = scipy.linalg.solve_triangular(L, phi_t.T, lower=True)
        values = np.einsum("ij,ij->j", V, V)
    return WceField.from_values(INTRINSIC_EXACT, targets, values,
                                n_data=int(data_x.size), noise=float(noise))


def _predictor_weights(eval_spec, eval_context, data_x, targets, noise):
    """Rows ``alpha_t = K_tX (K_XX + noise I)^-1`` for every target."""
    fit = gp.fit(eval_spec, eval_context, gp.Dataset(data_x, np.zeros(data_x.size), noise))
    Ktx = gram(eval_spec, eval_context, targets, data_x)
    return scipy.linalg.cho_solve((fit.chol, True), Ktx.T).T, fit.jitter


def _pinv_psd(C, rtol=PINV_RTOL):
    evals, evecs = np.linalg.eigh(C)
    keep = evals > rtol * evals.max()
    U = evecs[:, keep]
    return (U / evals[keep]) @ U.T, int(keep.sum())


def _residual_terms(eval_spec, oracle_spec, spectrum, data_x, targets, xprime, noise,
                    coordinates, include_noise=True):
    if oracle_spec.family != INTRINSIC:
        raise ValueError("the worst-case class is the intrinsic RKHS ball")
    data_x = np.asarray(data_x, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    xprime = np.asarray(xprime, dtype=np.int64).reshape(-1)
    if xprime.size == 0:
        raise ValueError("X' must not be empty")
    eval_context = spectrum if eval_spec.family == INTRINSIC else coordinates
    if eval_context is None:
        raise ValueError("extrinsic predictors need vertex coordinates")

    C_pt = gram(oracle_spec, spectrum, xprime, targets)
    if data_x.size:
        alpha, jitter = _predictor_weights(eval_spec, eval_context, data_x, targets, noise)
        G = C_pt - gram(oracle_spec, spectrum, xprime, data_x) @ alpha.T
        noise_term = noise * np.einsum("ij,ij->i", alpha, alpha)
        if not include_noise:
            noise_term = np.zeros(targets.size)
    else:
        jitter = 0.0
        G = C_pt
        noise_term = np.zeros(targets.size)
    C_inv, rank = _pinv_psd(gram(oracle_spec, spectrum, xprime))
    return targets, G, C_inv, noise_term, rank, jitter


def wce_extrinsic_approx(eval_spec, oracle_spec, spectrum, data_x, targets, xprime, noise,
                         coordinates=None, include_noise=True):
    """Approximate worst-case error of a possibly misspecified posterior mean.

    Parameters
    ----------
    eval_spec : KernelSpec
        Prior whose posterior mean is the predictor (extrinsic or intrinsic).
    oracle_spec : KernelSpec
        Intrinsic kernel ``c`` defining the unit ball of test functions.
    spectrum : Spectrum
    data_x, targets, xprime : array_like of int
        Training, evaluation, and norm-interpolation vertices.
    noise : float
    coordinates : ndarray, optional
        Ambient vertex positions; required when ``eval_spec`` is extrinsic.
    include_noise : bool
        Drop the noise-propagation term ``noise * ||alpha_t||^2`` when false;
        the predictor is still fit with ``noise``.

    Returns
    -------
    WceField
        Tagged ``extrinsic_approx`` for an extrinsic predictor and
        ``intrinsic_approx`` otherwise.  ``C_X'X'`` is pseudo-inverted,
        discarding eigenvalues below ``PINV_RTOL`` times the largest.
    """
    targets, G, C_inv, noise_term, rank, jitter = _residual_terms(
        eval_spec, oracle_spec, spectrum, data_x, targets, xprime, noise, coordinates,
        include_noise)
    values = np.einsum("ij,ij->j", G, C_inv @ G) + noise_term
    tag = INTRINSIC_APPROX if eval_spec.family == INTRINSIC else EXTRINSIC_APPROX
    return WceField.from_values(tag, targets, values, n_data=int(np.size(data_x)),
                                noise=float(noise), xprime_size=int(np.size(xprime)),
                                rank=rank, rank_rtol=PINV_RTOL, jitter=jitter)


def wce_trace_mean(eval_spec, oracle_spec, spectrum, data_x, xprime, noise, coordinates=None):
    """Mean of the approximate worst-case error over ``X'`` via one trace.

    With the targets equal to ``X'``,
    ``mean = (tr(C^+ G G^T) + noise ||alpha||_F^2) / |X'|``.
    """
    _, G, C_inv, noise_term, _, _ = _residual_terms(
        eval_spec, oracle_spec, spectrum, data_x, xprime, xprime, noise, coordinates)
    trace = np.sum(C_inv * (G @ G.T))
    return (trace + math.fsum(noise_term)) / G.shape[1]


def wce_spatial_stats(eval_spec, oracle_spec, spectrum, data_x, xprime, noise,
                      coordinates=None):
    """Mean (trace formula) and spatial standard deviation over ``X'``."""
    mean = wce_trace_mean(eval_spec, oracle_spec, spectrum, data_x, xprime, noise, coordinates)
    values = wce_extrinsic_approx(eval_spec, oracle_spec, spectrum, data_x, xprime, xprime,
                                  noise, coordinates).values
    return mean, spatial_stats(values)[1]


def prior_worst_case(spec, spectrum, targets):
    """Worst-case error with no data, ``k(t, t)``."""
    return gram_diag(spec, spectrum, targets)
