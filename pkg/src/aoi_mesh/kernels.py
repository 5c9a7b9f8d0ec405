"""Special-function kernels for the interference moment generating function.

For a PPP of interferers whose activity factor is ``b`` the log-MGF of the
success probability contains

    G(b, s) = int_0^inf [1 - (1 - b / (1 + v^(alpha/2)))^s] dv
            = sum_{k>=1} binom(s, k) (-1)^(k+1) C_k b^k,
    C_k     = int_0^inf (1 + v^(alpha/2))^(-k) dv = Gamma(1+delta) Gamma(k-delta) / Gamma(k).

The binomial series is what the analysis writes down, but for imaginary
``s = j omega`` it cancels catastrophically once ``omega * b`` exceeds ~10 and
converges only algebraically as ``b -> 1``. :func:`interference_exponent`
therefore evaluates G in closed form: Gauss-Jacobi quadrature of

    G(b, s) = s b int_0^1 t^(-delta) (1-t)^delta (1 - b t)^(s-1) dt

for small b, and the z -> 1 - z connection formula of the underlying 2F1
otherwise (exact at b = 1).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln, loggamma, roots_jacobi

CONNECTION_SPLIT = 0.2
# (1 - CONNECTION_SPLIT)^n below 1e-17
CONNECTION_TERMS = 186


def inner_integral_ck(alpha: float, k: int, method: str = "closed") -> float:
    """C_k = int_0^inf dv / (1 + v^(alpha/2))^k for integer k >= 1."""
    if int(k) != k or k < 1:
        raise ValueError("k must be an integer >= 1 (C_0 diverges)")
    if alpha <= 2:
        raise ValueError("alpha must exceed 2")
    delta = 2.0 / alpha
    if method == "closed":
        return math.exp(gammaln(1 + delta) + gammaln(k - delta) - gammaln(k))
    if method == "quad":
        f = lambda v: (1.0 + v ** (alpha / 2)) ** (-k)
        head, _ = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-13, limit=200)
        tail, _ = integrate.quad(f, 1, np.inf, epsabs=0, epsrel=1e-13, limit=200)
        return head + tail
    raise ValueError(f"unknown method {method!r}")


def ck_table(alpha: float, K: int) -> np.ndarray:
    """C_1 ... C_K in closed form."""
    delta = 2.0 / alpha
    k = np.arange(1, K + 1)
    return np.exp(gammaln(1 + delta) + gammaln(k - delta) - gammaln(k))


def complex_binomial(s: complex, k: int) -> complex:
    """Generalized binomial coefficient prod_{m<k} (s - m) / k!."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    out = 1 + 0j
    for m in range(k):
        out *= (s - m) / (m + 1)
    return out


def binomial_table(s, K: int) -> np.ndarray:
    """binom(s, k) for k = 1..K; shape (K, len(s))."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    out = np.empty((K, s.size), dtype=complex)
    term = np.ones_like(s)
    for m in range(K):
        term = term * (s - m) / (m + 1)
        out[m] = term
    return out


def series_exponent(s, moments, alpha: float, K: int | None = None):
    """Truncated series sum_{k=1}^K binom(s, k) (-1)^(k+1) C_k Q(k).

    ``moments[k-1]`` holds Q(k). Returns (values, tail_ratio) where tail_ratio is
    |K-th term| / |partial sum|, the truncation diagnostic.
    """
    moments = np.asarray(moments, dtype=float)
    K = len(moments) if K is None else K
    coeff = binomial_table(s, K) * (ck_table(alpha, K) * (-1.0) ** np.arange(2, K + 2))[:, None]
    terms = coeff * moments[:K, None]
    total = terms.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(terms[-1]) / np.abs(total)
    ratio = np.where(np.abs(total) == 0, 0.0, ratio)
    return total, ratio


@lru_cache(maxsize=32)
def _jacobi_nodes(n: int, delta: float):
    x, w = roots_jacobi(n, delta, -delta)
    return (1 + x) / 2, w / 2


def _g_quadrature(b: np.ndarray, s: np.ndarray, delta: float) -> np.ndarray:
    span = float(np.max(np.abs(s.imag))) * float(np.max(-np.log1p(-b))) if b.size else 0.0
    n = 40 + int(math.ceil(0.6 * span))
    t, w = _jacobi_nodes(n, delta)
    acc = np.zeros((b.size, s.size), dtype=complex)
    sm1 = (s - 1)[None, :]
    for tm, wm in zip(t, w):
        acc += wm * np.exp(sm1 * np.log1p(-b * tm)[:, None])
    return acc * b[:, None] * s[None, :]


def _g_connection(b: np.ndarray, s: np.ndarray, delta: float,
                  nterms: int = CONNECTION_TERMS) -> np.ndarray:
    x = 1.0 - b
    lead = np.exp(loggamma(1 - delta) + loggamma(s + delta) - loggamma(s))
    with np.errstate(over="ignore", invalid="ignore"):
        side = s * np.exp(loggamma(1 + delta) + loggamma(-s - delta) - loggamma(1 - s))
    # Taylor coefficients of 2F1(1-s, 1-d; 1-s-d; x) and 2F1(1+s, 1+d; 1+s+d; x)
    c1 = np.empty((nterms, s.size), dtype=complex)
    c2 = np.empty((nterms, s.size), dtype=complex)
    c1[0] = c2[0] = 1.0
    for n in range(1, nterms):
        m = n - 1
        c1[n] = c1[m] * (1 - s + m) * (1 - delta + m) / ((1 - s - delta + m) * n)
        c2[n] = c2[m] * (1 + s + m) * (1 + delta + m) / ((1 + s + delta + m) * n)
    powers = x[:, None] ** np.arange(nterms)[None, :]
    f1 = powers @ c1
    f2 = powers @ c2
    with np.errstate(divide="ignore", invalid="ignore"):
        branch = np.where(x[:, None] > 0,
                          np.exp((s[None, :] + delta) * np.log(np.where(x > 0, x, 1.0))[:, None]),
                          0.0)
    second = np.where(x[:, None] > 0, branch * side[None, :] * f2, 0.0)
    return b[:, None] * (lead[None, :] * f1 + second)


def interference_exponent(b, s, alpha: float) -> np.ndarray:
    """G(b, s) for activity factors ``b`` in [0, 1] and complex ``s`` with Re(s) >= 0.

    Returns an array of shape (len(b), len(s)). G(b, 0) = 0 and G(0, s) = 0.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    if np.any((b < 0) | (b > 1)):
        raise ValueError("activity factors must lie in [0, 1]")
    delta = 2.0 / alpha
    out = np.zeros((b.size, s.size), dtype=complex)
    nz = s != 0
    if not np.any(nz):
        return out
    sz = s[nz]
    lo = (b > 0) & (b < CONNECTION_SPLIT)
    hi = b >= CONNECTION_SPLIT
    if np.any(lo):
        out[np.ix_(lo, nz)] = _g_quadrature(b[lo], sz, delta)
    if np.any(hi):
        out[np.ix_(hi, nz)] = _g_connection(b[hi], sz, delta)
    return out


def inverse_moment_exponent(b, alpha: float) -> np.ndarray:
    """-G(b, -1) = Gamma(1+d) Gamma(1-d) b (1-b)^(d-1); infinite at b = 1."""
    b = np.asarray(b, dtype=float)
    delta = 2.0 / alpha
    c = math.gamma(1 + delta) * math.gamma(1 - delta)
    with np.errstate(divide="ignore"):
        return np.where(b < 1, c * b * (1 - np.minimum(b, 1)) ** (delta - 1), np.inf)
