r"""Two-parameter Mittag-Leffler function on the negative real axis.

Evaluates :math:`E_{\alpha,\beta}(-x)` for :math:`x \ge 0` and
:math:`0 < \alpha \le 2` using three regimes:

* the power series :math:`\sum_k (-x)^k / \Gamma(\alpha k + \beta)` while its
  cancellation stays bounded,
* the Hankel integral collapsed onto the negative real axis, plus the residues of
  the poles :math:`s^\alpha = -x` when :math:`\alpha > 1`,
* the algebraic asymptotic series (plus the same residues) once the optimally
  truncated series is accurate to working precision.

The regimes agree to roughly machine precision at their switch points, so the
overall function is continuous to within the stated tolerance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, rgamma

EPS = float(np.finfo(np.float64).eps)

#: Smallest argument at which the asymptotic regime is attempted.
ASYMPTOTIC_MIN_X = 50.0
#: Largest argument at which the power series is attempted.
SERIES_MAX_X = 5.0
#: Largest admissible :math:`\sum_k x^k / \Gamma(\alpha k + \beta)` for the series
#: regime, i.e. the amplification of rounding errors by cancellation.
SERIES_MAX_GROWTH = 100.0
#: Relative accuracy requested from every regime.
TARGET_RTOL = 1.0e-11


class MittagLefflerAccuracyWarning(UserWarning):
    """Raised when an evaluation cannot certify the requested accuracy."""


@dataclass(frozen=True)
class MLParams:
    """Parameters :math:`(\\alpha, \\beta)` of :math:`E_{\\alpha,\\beta}`."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 2.0):
            raise ValueError(f"alpha must lie in (0, 2]: got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive: got {self.beta}")


@dataclass(frozen=True)
class MLResult:
    """Values together with an absolute error bound and the regime used."""

    value: np.ndarray
    error: np.ndarray
    regime: np.ndarray

    @property
    def degraded(self) -> np.ndarray:
        scale = np.maximum(np.abs(self.value), 1.0 / (1.0 + 1.0e8))
        return self.error > 10.0 * TARGET_RTOL * scale


def reciprocal_gamma(z: np.ndarray | float) -> np.ndarray:
    """:math:`1/\\Gamma(z)`, exactly zero at the non-positive integers.

    Arguments within a few ulps of a non-positive integer are snapped onto it, so
    that e.g. ``beta - k * alpha`` computed in floating point still vanishes when
    it should.
    """
    z = np.asarray(z, dtype=np.float64)
    n = np.rint(z)
    at_pole = (n <= 0) & (np.abs(z - n) <= 64.0 * EPS * np.maximum(1.0, np.abs(z)))
    return np.where(at_pole, 0.0, rgamma(z))


# {{{ power series


def _series(alpha: float, beta: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xmax = float(np.max(x)) if x.size else 0.0
    if xmax == 0.0:
        v = np.full_like(x, float(rgamma(beta)))
        return v, EPS * np.abs(v)

    # enough terms for x**k / Gamma(alpha k + beta) < 1e-20 at the largest x
    kmax = 32
    while True:
        logt = kmax * math.log(xmax) - gammaln(alpha * kmax + beta)
        if logt < -46.0 and alpha * kmax + beta > 2.0:
            break
        kmax *= 2

    k = np.arange(kmax + 1, dtype=np.float64)
    coeff = reciprocal_gamma(alpha * k + beta)
    # Horner in -x keeps the evaluation cheap and deterministic
    total = np.zeros_like(x)
    absum = np.zeros_like(x)
    for c in coeff[::-1]:
        total = total * (-x) + c
        absum = absum * x + abs(c)

    return total, 4.0 * EPS * absum


@lru_cache(maxsize=256)
def series_limit(alpha: float, beta: float) -> float:
    """Largest argument handled by the power series for these parameters."""
    lo, hi = 0.0, SERIES_MAX_X

    def growth(x: float) -> float:
        _, err = _series(alpha, beta, np.array([x]))
        return float(err[0]) / (4.0 * EPS)

    if growth(hi) <= SERIES_MAX_GROWTH:
        return hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if growth(mid) <= SERIES_MAX_GROWTH:
            lo = mid
        else:
            hi = mid
    return lo


# }}}


# {{{ asymptotic series


def asymptotic_terms(alpha: float, beta: float, x: np.ndarray, K: int) -> np.ndarray:
    """Terms :math:`(-1)^{k+1} x^{-k} / \\Gamma(\\beta - k\\alpha)`, ``k = 1..K``.

    Returns an array of shape ``(K, x.size)``.
    """
    k = np.arange(1, K + 1, dtype=np.float64)[:, None]
    c = (-1.0) ** (k + 1) * reciprocal_gamma(beta - k * alpha)
    return c * np.exp(-k * np.log(x)[None, :])


def ml_asymptotic(
    params: MLParams, x: float | np.ndarray, K: int
) -> tuple[np.ndarray | float, np.ndarray | float]:
    r"""Partial sum of the large-:math:`x` expansion of :math:`E_{\alpha,\beta}(-x)`.

    Returns the sum of the first ``K`` terms and the magnitude of term ``K + 1``,
    which serves as an error proxy. The exponentially small oscillatory part present
    for :math:`\alpha > 1` is *not* included.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1: got {K}")

    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa <= 0):
        raise ValueError("asymptotic expansion requires x > 0")

    flat = np.atleast_1d(xa).ravel()
    terms = asymptotic_terms(params.alpha, params.beta, flat, K + 1)
    # sum from the smallest term up for reproducible rounding
    value = np.sum(terms[:K][::-1], axis=0)
    omitted = np.abs(terms[K])

    if xa.ndim == 0:
        return float(value[0]), float(omitted[0])
    return value.reshape(xa.shape), omitted.reshape(xa.shape)


def _asymptotic(
    alpha: float, beta: float, x: np.ndarray, rtol: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Optimally truncated asymptotic series; returns ``(value, error, ok)``."""
    kmax = 64
    terms = asymptotic_terms(alpha, beta, x, kmax)
    mag = np.abs(terms)
    value = np.zeros_like(x)
    error = np.full_like(x, np.inf)
    ok = np.zeros(x.shape, dtype=bool)

    # scale of the result: first non-vanishing term
    nz = mag > 0
    first = np.where(nz.any(axis=0), nz.argmax(axis=0), 0)
    scale = mag[first, np.arange(x.size)]

    # every algebraic term vanishes (e.g. alpha = 2, beta = 1)
    zero = scale == 0.0
    ok[zero] = True
    value[zero] = 0.0
    error[zero] = 0.0

    # smooth envelope |x^-k / Gamma(b - a k)| <= x^-k Gamma(a k + 1 - b) / pi;
    # single terms dip near poles of 1/Gamma and must not end the sum
    k = np.arange(1, kmax + 1, dtype=np.float64)[:, None]
    arg = alpha * k + 1.0 - beta
    with np.errstate(invalid="ignore"):
        log_env = np.where(
            arg > 0,
            -k * np.log(x)[None, :] + gammaln(np.where(arg > 0, arg, 1.0)) - math.log(math.pi),
            np.inf,
        )

    live = ~zero
    prev = np.full_like(x, np.inf)
    log_thresh = np.log(np.where(zero, 1.0, rtol * scale * 1.0e-3))
    partial = np.zeros_like(x)
    for k in range(kmax):
        env = log_env[k]
        # divergence sets in before convergence
        live &= ~(env > prev)
        hit = live & (env < log_thresh)
        value[hit] = partial[hit]
        error[hit] = np.exp(env[hit]) + 4 * EPS * np.abs(partial[hit])
        ok[hit] = True
        live &= ~hit
        partial = np.where(live, partial + terms[k], partial)
        prev = np.where(np.isfinite(env), env, prev)

    return value, error, ok


# }}}


# {{{ integral representation


def _residues(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    """Contribution of the poles ``s = x^(1/alpha) exp(+-i pi/alpha)``."""
    if alpha <= 1.0:
        return np.zeros_like(x)

    s = np.power(x, 1.0 / alpha) * np.exp(1j * np.pi / alpha)
    return (2.0 / alpha) * np.real(np.power(s, 1.0 - beta) * np.exp(s))


_GL_HI = np.polynomial.legendre.leggauss(20)
_GL_LO = np.polynomial.legendre.leggauss(12)

#: Upper cut-off of the collapsed Hankel integral; exp(-RMAX) is negligible.
RMAX = 64.0


@lru_cache(maxsize=64)
def _integral_nodes(alpha: float, beta: float) -> tuple[np.ndarray, ...]:
    # substitution r = w**p absorbs the r**(alpha - beta) endpoint behaviour
    p = 1.0 / (1.0 + alpha - beta)
    wmax = RMAX ** (1.0 / p)
    wmin = 1.0e-22

    # the integrand peaks near r**alpha = x when cos(pi alpha) ~ -1
    delta = math.sqrt(max(2.0 * (1.0 + math.cos(math.pi * alpha)), 0.0))
    ratio = 1.0 + min(0.5, max(0.5 * delta, 0.01))

    edges = [wmax]
    while edges[-1] > wmin:
        edges.append(edges[-1] / ratio)
    edges.append(0.0)
    edges = np.array(edges[::-1])

    a, b = edges[:-1, None], edges[1:, None]
    out = []
    for xi, wi in (_GL_HI, _GL_LO):
        w = (0.5 * (b - a) * xi[None, :] + 0.5 * (b + a)).ravel()
        weights = (0.5 * (b - a) * wi[None, :]).ravel()
        out.extend([w, weights])

    return p, *out


def _collapsed(
    alpha: float, beta: float, x: np.ndarray, p: float, w: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    r = np.power(w, p)
    ra = np.power(r, alpha)
    sb = math.sin(math.pi * beta)
    sab = math.sin(math.pi * (alpha - beta))
    ca = math.cos(math.pi * alpha)

    xx = x[:, None]
    num = ra[None, :] * sb - xx * sab
    den = ra[None, :] ** 2 + 2.0 * xx * ra[None, :] * ca + xx**2
    g = (p / math.pi) * np.exp(-r)[None, :] * num / den
    return np.sum(g * weights, axis=1), np.sum(np.abs(g) * weights, axis=1)


def _integral(
    alpha: float, beta: float, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if beta >= 1.0 + alpha:
        # E_{a,b}(-x) = (1/Gamma(b - a) - E_{a,b-a}(-x)) / x
        v, e = _integral(alpha, beta - alpha, x)
        return (float(rgamma(beta - alpha)) - v) / x, e / x

    if alpha == 1.0:
        raise NotImplementedError(
            "integral representation is singular for alpha = 1 unless beta = 1"
        )

    p, w_hi, wt_hi, w_lo, wt_lo = _integral_nodes(alpha, beta)
    value = np.empty_like(x)
    error = np.empty_like(x)

    chunk = max(1, 2_000_000 // w_hi.size)
    for i in range(0, x.size, chunk):
        xs = x[i : i + chunk]
        hi, ab = _collapsed(alpha, beta, xs, p, w_hi, wt_hi)
        lo, _ = _collapsed(alpha, beta, xs, p, w_lo, wt_lo)
        res = _residues(alpha, beta, xs)
        value[i : i + chunk] = hi + res
        error[i : i + chunk] = np.abs(hi - lo) + 16 * EPS * (ab + np.abs(res))

    return value, error


# }}}


# {{{ public interface


def ml_eval_detailed(params: MLParams, x: float | np.ndarray) -> MLResult:
    """Evaluate :math:`E_{\\alpha,\\beta}(-x)` and report error bound and regime.

    Regime codes are ``0`` (series), ``1`` (integral), ``2`` (asymptotic) and
    ``3`` (closed form).
    """
    xa = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(xa)) or np.any(xa < 0):
        raise ValueError("x must be finite and non-negative")

    flat = np.atleast_1d(xa).ravel()
    alpha, beta = float(params.alpha), float(params.beta)
    value = np.empty_like(flat)
    error = np.empty_like(flat)
    regime = np.empty(flat.shape, dtype=np.int8)

    if alpha == 1.0 and beta == 1.0:
        value[:] = np.exp(-flat)
        error[:] = EPS * value
        regime[:] = 3
    else:
        xs = series_limit(alpha, beta)
        m_series = flat <= xs
        if m_series.any():
            v, e = _series(alpha, beta, flat[m_series])
            value[m_series], error[m_series], regime[m_series] = v, e, 0

        rest = ~m_series
        m_asym = rest & (flat >= ASYMPTOTIC_MIN_X)
        if m_asym.any():
            idx = np.flatnonzero(m_asym)
            v, e, ok = _asymptotic(alpha, beta, flat[idx], TARGET_RTOL)
            good = idx[ok]
            res = _residues(alpha, beta, flat[good])
            value[good] = v[ok] + res
            error[good] = e[ok] + 16 * EPS * np.abs(res)
            regime[good] = 2
            rest[good] = False

        if rest.any():
            v, e = _integral(alpha, beta, flat[rest])
            value[rest], error[rest], regime[rest] = v, e, 1

    shape = xa.shape
    return MLResult(value.reshape(shape), error.reshape(shape), regime.reshape(shape))


def ml_eval(params: MLParams, x: float | np.ndarray) -> np.ndarray | float:
    r"""Evaluate :math:`E_{\alpha,\beta}(-x)` for :math:`x \ge 0`.

    A :class:`MittagLefflerAccuracyWarning` carrying the achieved error bound is
    emitted when any value cannot be certified to the target accuracy.
    """
    result = ml_eval_detailed(params, x)
    if np.any(result.degraded):
        worst = float(np.max(result.error))
        warnings.warn(
            f"E_{{{params.alpha},{params.beta}}}: accuracy degraded, "
            f"absolute error bound {worst:.3e}",
            MittagLefflerAccuracyWarning,
            stacklevel=2,
        )

    if result.value.ndim == 0:
        return float(result.value)
    return result.value


def ml_kernel(alpha: float, lam: float, s: float | np.ndarray) -> np.ndarray | float:
    r"""Relaxation kernel :math:`s^{\alpha - 1} E_{\alpha,\alpha}(-\lambda s^\alpha)`."""
    sa = np.asarray(s, dtype=np.float64)
    if np.any(sa <= 0):
        raise ValueError("kernel is singular at s = 0; s must be positive")
    if lam <= 0:
        raise ValueError(f"lambda must be positive: got {lam}")

    e = ml_eval(MLParams(alpha, alpha), lam * np.power(sa, alpha))
    out = np.power(sa, alpha - 1.0) * e
    return float(out) if np.ndim(out) == 0 else out


# }}}
