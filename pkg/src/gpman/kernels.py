"""Intrinsic (spectral) and extrinsic (restricted Euclidean) Matérn kernels."""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .mesh import DiscreteManifold
from .special import bessel_k_scaled, log_gamma
from .spectral import Spectrum

__all__ = [
    "KernelSpec",
    "SpectralWeights",
    "intrinsic_weights",
    "intrinsic_features",
    "matern",
    "gram",
    "gram_diag",
    "kernel_field",
    "sample_prior",
    "INTRINSIC",
    "EXTRINSIC",
]

INTRINSIC = "intrinsic"
EXTRINSIC = "extrinsic"
_ZERO_DISTANCE = 1e-13


@dataclass(frozen=True)
class KernelSpec:
    """Matérn kernel hyperparameters.

    ``truncation`` (number of eigenpairs) and ``dim`` (manifold dimension)
    are required for the intrinsic family and ignored by the extrinsic one.
    """

    family: str
    nu: float
    kappa: float
    variance: float = 1.0
    truncation: int | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.family not in (INTRINSIC, EXTRINSIC):
            raise ValueError(f"unknown kernel family {self.family!r}")
        for name in ("nu", "kappa", "variance"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.family == INTRINSIC:
            if self.truncation is None or self.truncation < 1:
                raise ValueError("intrinsic kernels need a truncation level >= 1")
            if self.dim not in (1, 2, 3):
                raise ValueError("intrinsic kernels need the manifold dimension")

    def with_kappa(self, kappa):
        return replace(self, kappa=float(kappa))

    def with_variance(self, variance):
        return replace(self, variance=float(variance))


@dataclass(frozen=True, eq=False)
class SpectralWeights:
    """Spectral filter ``(2 nu / kappa^2 + lam_j)^-(nu + d/2)`` and its normalizer.

    ``normalizer`` is the mass-average of the unnormalized variance, so that
    ``variance / normalizer * sum_j w_j f_j(x)^2`` averages to ``variance``.
    """

    weights: np.ndarray
    normalizer: float


def intrinsic_weights(spec, spectrum):
    if spec.family != INTRINSIC:
        raise ValueError("intrinsic_weights needs an intrinsic kernel spec")
    J = spec.truncation
    if J > spectrum.size:
        raise ValueError(f"truncation {J} exceeds the {spectrum.size} available eigenpairs")
    lam = spectrum.eigenvalues[:J]
    weights = (2.0 * spec.nu / spec.kappa ** 2 + lam) ** (-(spec.nu + 0.5 * spec.dim))
    # orthonormal eigenfunctions integrate f_j^2 to one
    normalizer = math.fsum(weights) / spectrum.total_mass
    return SpectralWeights(weights, normalizer)


def intrinsic_features(spec, spectrum):
    """Per-vertex feature matrix ``Phi`` with ``K = Phi @ Phi.T``."""
    sw = intrinsic_weights(spec, spectrum)
    scale = np.sqrt(spec.variance * sw.weights / sw.normalizer)
    return spectrum.eigenvectors[:, :spec.truncation] * scale


def matern(r, nu, kappa, variance=1.0):
    """Euclidean Matérn covariance at distance(s) ``r``."""
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("distances must be finite")
    out = np.full(r.shape, float(variance))
    far = r >= _ZERO_DISTANCE * kappa
    if far.any():
        x = math.sqrt(2.0 * nu) * r[far] / kappa
        log_prefactor = math.log(variance) + (1.0 - nu) * math.log(2.0) - log_gamma(nu)
        with np.errstate(over="ignore", divide="ignore"):
            out[far] = np.exp(log_prefactor + nu * np.log(x)
                              + np.log(bessel_k_scaled(nu, x)) - x)
    return out if out.ndim else float(out)


def _coordinates(context):
    if isinstance(context, DiscreteManifold):
        return context.vertices
    if isinstance(context, Spectrum):
        raise TypeError("extrinsic kernels need ambient vertex coordinates")
    return np.asarray(context, dtype=float)


def _spectrum(context):
    if not isinstance(context, Spectrum):
        raise TypeError("intrinsic kernels need a Spectrum")
    return context


def gram(spec, context, A, B=None):
    """Kernel matrix between vertex index lists ``A`` and ``B``.

    Parameters
    ----------
    spec : KernelSpec
    context : Spectrum or array_like or DiscreteManifold
        Spectrum for intrinsic kernels, ambient coordinates (or the
        manifold carrying them) for extrinsic ones.
    A, B : array_like of int
        ``B`` defaults to ``A``; the result is then exactly symmetric.
    """
    A = np.asarray(A, dtype=np.int64).reshape(-1)
    same = B is None
    B = A if same else np.asarray(B, dtype=np.int64).reshape(-1)
    if spec.family == INTRINSIC:
        phi = intrinsic_features(spec, _spectrum(context))
        K = phi[A] @ phi[B].T
        return 0.5 * (K + K.T) if same else K
    X = _coordinates(context)
    if same:
        # Evaluate each unordered pair once; the diagonal is exactly variance.
        K = squareform(matern(pdist(X[A]), spec.nu, spec.kappa, spec.variance))
        np.fill_diagonal(K, spec.variance)
        return K
    return matern(cdist(X[A], X[B]), spec.nu, spec.kappa, spec.variance)


def gram_diag(spec, context, A):
    """``k(a, a)`` for every index in ``A``."""
    A = np.asarray(A, dtype=np.int64).reshape(-1)
    if spec.family == INTRINSIC:
        phi = intrinsic_features(spec, _spectrum(context))[A]
        return np.einsum("ij,ij->i", phi, phi)
    return np.full(A.size, float(spec.variance))


def kernel_field(spec, context, x0, n_vertices=None):
    """``k(., x0)`` evaluated at every vertex."""
    if n_vertices is None:
        n_vertices = (_spectrum(context).n_vertices if spec.family == INTRINSIC
                      else _coordinates(context).shape[0])
    return gram(spec, context, np.arange(n_vertices), [x0])[:, 0]


def sample_prior(spec, spectrum, seed):
    """Draw a per-vertex field from the truncated Karhunen-Loève expansion.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if spec.family != INTRINSIC:
        raise ValueError("prior samples are drawn from the intrinsic expansion")
    xi = np.random.default_rng(seed).standard_normal(spec.truncation)
    return intrinsic_features(spec, spectrum) @ xi
