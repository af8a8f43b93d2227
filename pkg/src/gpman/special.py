"""Special functions for the Euclidean Matérn kernel.

Real-order modified Bessel function of the second kind, evaluated with
Temme's series for small arguments and Steed's continued fraction for
large ones, followed by forward recurrence in the order.  Everything is
vectorized over the argument; the order is a scalar.
"""

import math

import numpy as np

__all__ = ["bessel_k", "bessel_k_scaled", "log_gamma", "MAX_ORDER"]

MAX_ORDER = 50.0

_EPS = 1e-16
_MAX_TERMS = 10_000
_SERIES_CUTOFF = 2.0

# Taylor coefficients of 1/Gamma(1 + x) about x = 0.
_RGAMMA1P = np.array([
    1.00000000000000000e+00,
    5.77215664901532866e-01,
    -6.55878071520253902e-01,
    -4.20026350340952370e-02,
    1.66538611382291479e-01,
    -4.21977345555443334e-02,
    -9.62197152787697303e-03,
    7.21894324666309990e-03,
    -1.16516759185906517e-03,
    -2.15241674114950975e-04,
    1.28050282388116196e-04,
    -2.01348547807882387e-05,
    -1.25049348214267063e-06,
    1.13302723198169593e-06,
    -2.05633841697760707e-07,
    6.11609510448141609e-09,
    5.00200764446922295e-09,
    -1.18127457048702004e-09,
    1.04342671169110054e-10,
    7.78226343990507081e-12,
    -3.69680561864220598e-12,
    5.10037028745447575e-13,
    -2.05832605356650664e-14,
    -5.34812253942301782e-15,
    1.22677862823826084e-15,
    -1.18125930169745883e-16,
    1.18669225475160037e-18,
    1.41238065531803186e-18,
    -2.29874568443537022e-19,
    1.71440632192733743e-20,
])


def log_gamma(z):
    """Natural log of the Gamma function for real ``z > 0``."""
    z = float(z)
    if not z > 0.0:
        raise ValueError(f"log_gamma requires z > 0, got {z!r}")
    return math.lgamma(z)


def _temme_gammas(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2.

    ``gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)`` and
    ``gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2``; both are taken from the
    even/odd parts of the Taylor series so ``mu -> 0`` needs no special case.
    """
    powers = mu ** np.arange(_RGAMMA1P.size)
    even = _RGAMMA1P[0::2] @ powers[0::2]
    odd_over_mu = _RGAMMA1P[1::2] @ (mu ** np.arange(0, _RGAMMA1P.size - 1, 2))
    gampl = even + mu * odd_over_mu
    gammi = even - mu * odd_over_mu
    return -odd_over_mu, even, gampl, gammi


def _temme_series(mu, x):
    """K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2 and 0 < x < 2 (unscaled)."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / e)
    gam1, gam2, gampl, gammi = _temme_gammas(mu)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    e = np.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, _MAX_TERMS):
        ff = (i * ff + p + q) / (i * i - mu * mu)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        term = c * ff
        total = total + np.where(active, term, 0.0)
        total1 = total1 + np.where(active, c * (p - i * ff), 0.0)
        active &= np.abs(term) >= np.abs(total) * _EPS
        if not active.any():
            break
    else:
        raise ArithmeticError("Temme series did not converge")
    return total, total1 * (2.0 / x)


def _steed_cf2(mu, x):
    """Scaled e^x K_mu(x) and e^x K_{mu+1}(x) for |mu| <= 1/2 and x >= 2.

    Converged entries are dropped from the working set, so the cost follows
    the number of terms each argument needs rather than the worst one.
    """
    x = np.asarray(x, dtype=float)
    a1 = 0.25 - mu * mu
    s_out = np.empty_like(x)
    h_out = np.empty_like(x)
    idx = np.arange(x.size)
    xw = x
    b = 2.0 * (1.0 + xw)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(xw)
    q2 = np.ones_like(xw)
    q = np.full_like(xw, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, _MAX_TERMS):
        a = a - 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        done = np.abs(dels) < np.abs(s) * _EPS
        if done.any():
            s_out[idx[done]] = s[done]
            h_out[idx[done]] = h[done]
            keep = ~done
            if not keep.any():
                break
            idx, b, d, h, delh, q1, q2, q, s = (
                v[keep] for v in (idx, b, d, h, delh, q1, q2, q, s))
    else:
        raise ArithmeticError("Steed continued fraction did not converge")
    h = a1 * h_out
    kmu = np.sqrt(math.pi / (2.0 * x)) / s_out
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def _bessel_k_impl(nu, x, scaled):
    nu = abs(float(nu))
    if nu > MAX_ORDER:
        raise ValueError(f"order {nu} exceeds supported maximum {MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0.0)):
        raise ValueError("bessel_k requires x > 0")
    flat = x.ravel()
    nl = int(nu + 0.5)
    mu = nu - nl
    kmu = np.empty_like(flat)
    k1 = np.empty_like(flat)

    small = flat < _SERIES_CUTOFF
    if small.any():
        xs = flat[small]
        a, b = _temme_series(mu, xs)
        if scaled:
            ex = np.exp(xs)
            a, b = a * ex, b * ex
        kmu[small], k1[small] = a, b
    large = ~small
    if large.any():
        xl = flat[large]
        a, b = _steed_cf2(mu, xl)
        if not scaled:
            ex = np.exp(-xl)
            a, b = a * ex, b * ex
        kmu[large], k1[large] = a, b

    # Forward recurrence K_{m+1} = K_{m-1} + (2m/x) K_m is stable for K.
    two_over_x = 2.0 / flat
    with np.errstate(over="ignore"):
        for i in range(1, nl + 1):
            kmu, k1 = k1, (mu + i) * two_over_x * k1 + kmu
    return kmu.reshape(x.shape) if x.ndim else float(kmu[0])


def bessel_k(nu, x):
    """Modified Bessel function of the second kind, K_nu(x).

    Parameters
    ----------
    nu : float
        Real order, ``|nu| <= 50``.  K is even in the order, so negative
        values are reflected.
    x : float or array_like
        Strictly positive argument(s).

    Returns
    -------
    float or ndarray
        Same shape as ``x``.  Overflows to ``inf`` for tiny ``x`` at large
        order; use :func:`bessel_k_scaled` when ``x`` is large.
    """
    return _bessel_k_impl(nu, x, scaled=False)


def bessel_k_scaled(nu, x):
    """Exponentially scaled ``exp(x) * K_nu(x)``; never underflows for large x."""
    return _bessel_k_impl(nu, x, scaled=True)
