"""Lowest Laplace-Beltrami eigenpairs of a discretized manifold.

The generalized problem ``L f = lam M f`` with diagonal ``M`` is whitened to
the standard symmetric problem ``M^-1/2 L M^-1/2 u = lam u`` and mapped back
with ``f = M^-1/2 u``, which makes the eigenvectors mass-orthonormal.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse

logger = logging.getLogger(__name__)

__all__ = [
    "Spectrum",
    "ConvergenceError",
    "solve_eigs",
    "block_lanczos",
    "weyl_check",
    "WeylFit",
    "rayleigh_residuals",
    "spectrum_cache_key",
    "save_spectrum",
    "load_spectrum",
    "DENSE_MAX",
    "RESIDUAL_TOL",
]

DENSE_MAX = 4096
RESIDUAL_TOL = 1e-8

_CACHE_MAGIC = b"GPMSPEC\x00"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<8sIQQ32sd")


class ConvergenceError(ArithmeticError):
    """The eigensolver did not reach the residual tolerance."""

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = np.asarray(residuals)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Sorted eigenvalues and mass-orthonormal eigenvectors.

    Attributes
    ----------
    eigenvalues : ndarray, shape (J,)
    eigenvectors : ndarray, shape (n, J)
        Column ``j`` is the eigenfunction sampled at the vertices.
    total_mass : float
        Total lumped mass, i.e. the discrete volume of the manifold.
    metadata : dict
        Solver name, iteration counts and residuals.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    total_mass: float
    metadata: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.eigenvalues.size

    @property
    def n_vertices(self):
        return self.eigenvectors.shape[0]

    def truncated(self, J):
        """First ``J`` eigenpairs as a new spectrum."""
        if not 1 <= J <= self.size:
            raise ValueError(f"cannot truncate a {self.size}-pair spectrum to {J}")
        return Spectrum(self.eigenvalues[:J], self.eigenvectors[:, :J],
                        self.total_mass, dict(self.metadata, truncated_from=self.size))


def _fix_signs(vectors):
    # largest-magnitude entry positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def rayleigh_residuals(stiffness, mass_diag, eigenvalues, eigenvectors):
    """``||L f - lam M f|| / (||L||_inf ||f||)`` for every eigenpair."""
    lf = stiffness @ eigenvectors
    r = lf - (mass_diag[:, None] * eigenvectors) * eigenvalues[None, :]
    norm_l = sparse.linalg.norm(stiffness, np.inf)
    return np.linalg.norm(r, axis=0) / (norm_l * np.linalg.norm(eigenvectors, axis=0))


def block_lanczos(matvec, n, k, block_size=16, max_dim=None, tol=1e-10, seed=0):
    """Smallest ``k`` eigenpairs of a symmetric operator by block Lanczos.

    Every new block is fully reorthogonalized against the whole basis, with
    a second Gram-Schmidt pass whenever the first removed a large component.
    Blocks let exactly degenerate eigenvalues show up with their full
    multiplicity as long as it does not exceed ``block_size``.

    Convergence is monitored with eigenvalue-only solves of the banded
    projection; Ritz vectors are formed once the wanted Ritz values stop
    moving, and accepted when every Ritz residual is below ``tol`` times the
    largest Ritz value (an estimate of the operator norm).

    Parameters
    ----------
    matvec : callable
        Maps an (n, b) array to the operator applied to it.
    n, k : int
    block_size : int
    max_dim : int, optional
        Cap on the Krylov dimension, default ``min(n, 20 k)``.
    tol : float
    seed : int
        Seed for the random starting block.

    Returns
    -------
    values : ndarray, shape (k,)
    vectors : ndarray, shape (n, k)
    info : dict
    """
    b = max(1, min(block_size, n))
    max_dim = min(n, max_dim if max_dim is not None else 20 * k)
    max_dim = max(max_dim, min(n, k + b))
    n_blocks = -(-max_dim // b)
    rng = np.random.default_rng(seed)

    basis = np.empty((n, n_blocks * b))
    q, _ = np.linalg.qr(rng.standard_normal((n, b)))
    basis[:, :b] = q
    diag_blocks, off_blocks = [], []
    prev_off = None
    next_check = max(2 * k, k + 4 * b)
    prev_values = None
    resid = np.full(k, np.inf)
    scale = 1.0

    for step in range(n_blocks):
        lo, hi = step * b, (step + 1) * b
        q = basis[:, lo:hi]
        w = matvec(q)
        a = q.T @ w
        a = 0.5 * (a + a.T)
        diag_blocks.append(a)
        w = w - q @ a
        if prev_off is not None:
            w = w - basis[:, lo - b:lo] @ prev_off.T
        before = np.linalg.norm(w, axis=0)
        w = w - basis[:, :hi] @ (basis[:, :hi].T @ w)
        if (np.linalg.norm(w, axis=0) < 0.7 * before).any():
            w = w - basis[:, :hi] @ (basis[:, :hi].T @ w)
        dim = hi
        last = step == n_blocks - 1 or hi + b > n
        qn, r = np.linalg.qr(w)
        if not last:
            # deflate: replace directions lost to breakdown by fresh random ones
            weak = np.abs(np.diag(r)) <= 1e-12 * scale
            if weak.any():
                fresh = rng.standard_normal((n, int(weak.sum())))
                for _ in range(2):
                    fresh -= basis[:, :hi] @ (basis[:, :hi].T @ fresh)
                    fresh -= qn[:, ~weak] @ (qn[:, ~weak].T @ fresh)
                fresh, _ = np.linalg.qr(fresh)
                qn[:, weak] = fresh
                r[weak, :] = 0.0
            basis[:, hi:hi + b] = qn
        off_blocks.append(r)
        prev_off = r

        if dim < next_check and not last:
            continue
        ab = _band_storage(diag_blocks, off_blocks[:step], b)
        values = scipy.linalg.eig_banded(ab, eigvals_only=True, select="i",
                                         select_range=(0, min(k, dim) - 1))
        top = scipy.linalg.eig_banded(ab, eigvals_only=True, select="i",
                                      select_range=(dim - 1, dim - 1))
        scale = max(scale, float(np.abs(top).max()), float(np.abs(values).max()))
        settled = (prev_values is not None
                   and np.abs(values - prev_values).max() <= 1e-12 * scale)
        prev_values = values
        next_check = int(dim * 1.2) + b
        logger.debug("lanczos dim=%d settled=%s", dim, settled)
        if not (settled or last):
            continue
        # a dense solve of the projection beats banded eigenvectors here
        values, s = scipy.linalg.eigh(_dense_from_band(ab), subset_by_index=(0, min(k, dim) - 1))
        resid = (np.zeros(values.size) if dim == n
                 else np.linalg.norm(off_blocks[step] @ s[-b:, :], axis=0))
        logger.debug("lanczos dim=%d max ritz residual %.3e", dim, resid.max())
        if resid.max() <= tol * scale:
            vectors = basis[:, :dim] @ s
            return values, vectors, {"krylov_dim": dim, "ritz_residuals": resid}
        if last:
            break
    raise ConvergenceError(f"block Lanczos hit its Krylov cap {max_dim} with Ritz residual "
                           f"{resid.max():.3e}", resid)


def _dense_from_band(ab):
    u, m = ab.shape[0] - 1, ab.shape[1]
    T = np.zeros((m, m))
    for off in range(u + 1):
        idx = np.arange(off, m)
        T[idx - off, idx] = ab[u - off, off:]
        T[idx, idx - off] = ab[u - off, off:]
    return T


def _band_storage(diag_blocks, off_blocks, b):
    """Upper band storage ``ab[b + i - j, j] = T[i, j]`` of the projection."""
    m = len(diag_blocks) * b
    ab = np.zeros((b + 1, m))
    rows, cols = np.triu_indices(b)
    for s, a in enumerate(diag_blocks):
        ab[b + rows - cols, s * b + cols] = a[rows, cols]
    # T[(s+1) b + i, s b + j] = r[i, j] is nonzero only for i <= j (QR factor)
    for s, r in enumerate(off_blocks):
        row = s * b + cols
        col = (s + 1) * b + rows
        ab[b + row - col, col] = r[rows, cols]
    return ab


def solve_eigs(manifold, J, dense_max=DENSE_MAX, block_size=16, cache_dir=None):
    """Lowest ``J`` eigenpairs of ``stiffness f = lam mass f``.

    Parameters
    ----------
    manifold : DiscreteManifold
    J : int
        Number of eigenpairs, ``1 <= J <= n``.
    dense_max : int
        Dense symmetric solver up to this many vertices, block Lanczos above.
    block_size : int
        Lanczos block size; must exceed the largest eigenvalue multiplicity.
    cache_dir : path, optional
        Read/write a binary spectrum cache keyed by mesh content and ``J``.

    Raises
    ------
    ConvergenceError
        If any Rayleigh residual exceeds ``RESIDUAL_TOL``.
    """
    n = manifold.n_vertices
    J = int(J)
    if not 1 <= J <= n:
        raise ValueError(f"J must be in [1, {n}], got {J}")
    if cache_dir is not None:
        path = Path(cache_dir) / f"spectrum_{spectrum_cache_key(manifold, J)}.bin"
        if path.exists():
            logger.info("spectrum cache hit %s", path.name)
            return load_spectrum(path)

    stiffness = manifold.stiffness
    inv_sqrt_m = 1.0 / np.sqrt(manifold.mass_diag)
    whitened = sparse.diags(inv_sqrt_m) @ stiffness @ sparse.diags(inv_sqrt_m)
    whitened = (0.5 * (whitened + whitened.T)).tocsr()

    if n <= dense_max:
        values, u = scipy.linalg.eigh(whitened.toarray(), subset_by_index=(0, J - 1))
        info = {"solver": "dense"}
    else:
        values, u, info = block_lanczos(lambda x: whitened @ x, n, J,
                                        block_size=block_size)
        info["solver"] = "block_lanczos"
    order = np.argsort(values, kind="stable")
    values, u = values[order], u[:, order]
    # the exact constant mode computes to roundoff of either sign
    norm_a = sparse.linalg.norm(whitened, np.inf)
    values = np.where(np.abs(values) <= 1e-12 * norm_a, 0.0, values)
    vectors = _fix_signs(inv_sqrt_m[:, None] * u)

    resid = rayleigh_residuals(stiffness, manifold.mass_diag, values, vectors)
    info["max_residual"] = float(resid.max())
    if resid.max() > RESIDUAL_TOL:
        raise ConvergenceError(f"eigenpair residual {resid.max():.3e} exceeds {RESIDUAL_TOL:g}",
                               resid)
    info.pop("ritz_residuals", None)
    spectrum = Spectrum(values, vectors, manifold.total_mass, info)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_spectrum(spectrum, path, spectrum_cache_key(manifold, J))
    return spectrum


@dataclass(frozen=True)
class WeylFit:
    slope: float
    constant: float
    expected_slope: float


def weyl_check(spectrum, d):
    """Fit ``lam_j ~ constant * j**slope`` over the well-resolved upper spectrum.

    Uses indices from ``J // 2`` up to (excluding) ``0.9 J``: the lower half
    is pre-asymptotic and the top tenth is polluted by discretization.
    """
    J = spectrum.size
    if J < 32:
        raise ValueError("weyl_check needs at least 32 eigenvalues")
    j = np.arange(J // 2, int(0.9 * J))
    slope, intercept = np.polyfit(np.log(j), np.log(spectrum.eigenvalues[j]), 1)
    return WeylFit(float(slope), float(np.exp(intercept)), 2.0 / d)


# ---------------------------------------------------------------------------
# cache

def spectrum_cache_key(manifold, J):
    """SHA-256 of (vertices, cells, J) in little-endian canonical form."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(manifold.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(manifold.cells, dtype="<i8").tobytes())
    h.update(struct.pack("<Q", int(J)))
    return h.hexdigest()


def save_spectrum(spectrum, path, key):
    """Write ``spectrum`` with header (magic, version, n, J, hash, total mass)."""
    path = Path(path)
    n, J = spectrum.eigenvectors.shape
    header = _CACHE_HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, n, J,
                                bytes.fromhex(key), spectrum.total_mass)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spectrum.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(spectrum.eigenvectors, dtype="<f8").tobytes())
    tmp.replace(path)


def load_spectrum(path):
    path = Path(path)
    raw = path.read_bytes()
    magic, version, n, J, digest, total_mass = _CACHE_HEADER.unpack_from(raw)
    if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
        raise ValueError(f"{path} is not a version-{_CACHE_VERSION} spectrum cache")
    off = _CACHE_HEADER.size
    expected = off + 8 * (J + n * J)
    if len(raw) != expected:
        raise ValueError(f"{path} is truncated: {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f8", count=J, offset=off).astype(float)
    vectors = np.frombuffer(raw, dtype="<f8", count=n * J, offset=off + 8 * J)
    vectors = vectors.reshape(n, J).astype(float)
    return Spectrum(values, vectors, float(total_mass),
                    {"solver": "cache", "hash": digest.hex()})
