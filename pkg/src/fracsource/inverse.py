"""Recovery of source components from the large-time tail of an observation.

The observed trace is fitted by the structured expansion (constant, algebraic
and logarithmic terms with the exponents dictated by ``alpha``). From the
fitted coefficients:

* with the temporal component known to be constant, the spectral moments
  ``A_l`` follow and the spatial coefficients solve a Vandermonde-type system;
* with the spatial component known, the expansion coefficients ``mu_j`` and
  the moments ``c_{mu,m}`` of the temporal component follow directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import mpmath as mp
import numpy as np
from scipy.special import binom

from fracsource.asymptotics import FractionalOrder, as_order, collect, lk_sequence, moments
from fracsource.asymptotics import Term
from fracsource.forward import ObservationTrace
from fracsource.mittag_leffler import reciprocal_gamma

DEFAULT_COND_LIMIT = 1.0e12
# the scaled tail design is far worse conditioned than its leading coefficients
FIT_COND_LIMIT = 1.0e15


class BlindSpotError(ValueError):
    """The observation cannot see the source."""


class IllConditionedError(RuntimeError):
    """A recovery system is too ill-conditioned to be solved."""


# {{{ structured tail fit


@dataclass(frozen=True)
class TailStructure:
    """What is known about the temporal component before fitting.

    :arg constant: ``mu0`` may be nonzero.
    :arg moments: the decaying part may be nonzero (terms ``t^(-l alpha - j)``).
    :arg tail: some ``mu_j`` with ``j >= 1`` may be nonzero (logarithmic and
        purely algebraic terms).
    """

    constant: bool = True
    moments: bool = True
    tail: bool = True

    @classmethod
    def constant_only(cls) -> TailStructure:
        return cls(True, False, False)

    @classmethod
    def unknown(cls) -> TailStructure:
        return cls(True, True, True)


@dataclass(frozen=True)
class TailFit:
    """Result of :func:`fit_tail`.

    .. attribute:: condition

        2-norm condition number of the weighted, column-scaled design matrix.

    .. attribute:: trusted

        *False* when :attr:`condition` exceeds the limit given to the fit.
    """

    terms: tuple[Term, ...]
    coeffs: np.ndarray
    stderr: np.ndarray
    rel_residual: float
    alpha: float
    K: int
    J: int
    condition: float = 1.0
    trusted: bool = True

    def coefficient(self, t_power: float, has_log: bool = False) -> float:
        return float(self.coeffs[self._index(t_power, has_log)])

    def error(self, t_power: float, has_log: bool = False) -> float:
        return float(self.stderr[self._index(t_power, has_log)])

    def _index(self, t_power: float, has_log: bool) -> int:
        for i, tm in enumerate(self.terms):
            if abs(tm.t_power - t_power) < 1.0e-9 and tm.has_log == has_log:
                return i
        raise KeyError(f"no fitted term t^{t_power} log^{int(has_log)}")


def tail_basis(
    alpha: float | FractionalOrder, structure: TailStructure, K: int, J: int, M: int
) -> tuple[Term, ...]:
    order = as_order(alpha)
    a = order.alpha
    ls = lk_sequence(order, K)
    terms = []
    if structure.constant:
        terms.append(Term(0.0, 0.0, 0.0, False, False, "const"))
        terms.extend(Term(0.0, 0.0, -l * a, False, False, f"k{l}") for l in ls)
    if structure.moments or structure.tail:
        for l in ls:
            for j in range(1, J + 1):
                terms.append(Term(0.0, 0.0, -l * a - j, False, False, f"c[j{j},l{l}]"))
                if structure.tail:
                    terms.append(Term(0.0, 0.0, -l * a - j, True, False, f"log[j{j},l{l}]"))
    if structure.tail:
        for j in range(1, J + M + 1):
            terms.append(Term(0.0, 0.0, -float(j), False, False, f"b{j}"))
    return collect(terms)


def check_window(t: np.ndarray, per_decade: int = 8, decades: float = 3.0) -> None:
    """Reject sampling windows too short or too sparse for a tail fit."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1 or t.size < 2 or np.any(t <= 0):
        raise ValueError("fit window needs positive sampling times")
    span = math.log10(float(t.max() / t.min()))
    if span < decades * (1.0 - 1.0e-9):
        raise ValueError(f"fit window spans {span:.2f} decades: need at least {decades:g}")
    if t.size < per_decade * span:
        raise ValueError(
            f"fit window has {t.size} samples over {span:.2f} decades: "
            f"need at least {per_decade} per decade"
        )


def fit_tail(
    t: np.ndarray,
    values: np.ndarray,
    alpha: float | FractionalOrder,
    structure: TailStructure = TailStructure.unknown(),
    K: int = 3,
    J: int = 2,
    M: int = 1,
    max_order: float | None = None,
    cond_limit: float = FIT_COND_LIMIT,
) -> TailFit:
    """Weighted least-squares fit of the structured tail expansion.

    Samples are weighted by ``1/|value|`` so every decade contributes, and
    basis terms decaying faster than ``t^-max_order`` are dropped. The
    window must span three decades with eight samples per decade.
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if t.shape != values.shape or t.ndim != 1:
        raise ValueError("times and values must be matching 1D arrays")
    if not np.all(np.isfinite(values)):
        raise ValueError("trace values must be finite")
    check_window(t)

    order = as_order(alpha)
    terms = tail_basis(order, structure, K, J, M)
    if max_order is not None:
        terms = tuple(tm for tm in terms if tm.t_power > -max_order)
    if len(terms) >= t.size:
        raise ValueError(f"{len(terms)} basis terms need more than {t.size} samples")

    A = np.array([tm.basis(t) for tm in terms]).T
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        w = np.ones_like(values)
    else:
        w = 1.0 / np.maximum(np.abs(values), 1.0e-300 * peak)
    B = A * w[:, None]
    scale = np.linalg.norm(B, axis=0)
    B = B / scale
    rhs = values * w
    sol, *_ = np.linalg.lstsq(B, rhs, rcond=None)
    resid = rhs - B @ sol
    dof = max(t.size - len(terms), 1)
    sigma = math.sqrt(float(resid @ resid) / dof)
    cov = np.linalg.pinv(B.T @ B)
    svals = np.linalg.svd(B, compute_uv=False)
    condition = float(svals[0] / svals[-1]) if svals[-1] > 0 else math.inf
    coeffs = sol / scale
    # rounding of the data puts a floor under the attainable accuracy
    stderr = np.maximum(sigma * np.sqrt(np.abs(np.diag(cov))) / scale, 1.0e-15 * np.abs(coeffs))

    return TailFit(
        terms=terms,
        coeffs=coeffs,
        stderr=stderr,
        rel_residual=float(np.max(np.abs(resid))),
        alpha=order.alpha,
        K=K,
        J=J,
        condition=condition,
        trusted=condition <= cond_limit,
    )


# }}}


# {{{ spatial recovery


@dataclass(frozen=True)
class SpatialRecovery:
    """Spatial coefficients recovered from spectral moments.

    ``weights`` are the observed weights ``a_n l(phi_n)``; ``coeffs`` divides
    them by the modal functionals where those are nonzero (``nan`` marks the
    modes that could not be recovered).
    """

    coeffs: np.ndarray
    weights: np.ndarray
    condition: float
    recovered: np.ndarray
    moments: np.ndarray
    partial: bool = False
    notes: tuple[str, ...] = ()


def _solve_weighted(
    M: np.ndarray, rhs: np.ndarray, sigma: np.ndarray, dps: int = 50
) -> tuple[np.ndarray, float]:
    """Column-scaled weighted least squares in extended precision."""
    with mp.workdps(dps):
        rows, cols = M.shape
        Mw = mp.matrix(rows, cols)
        bw = mp.matrix(rows, 1)
        for i in range(rows):
            for j in range(cols):
                Mw[i, j] = mp.mpf(M[i, j]) / mp.mpf(sigma[i])
            bw[i] = mp.mpf(rhs[i]) / mp.mpf(sigma[i])

        colscale = []
        for j in range(cols):
            nrm = mp.sqrt(sum(Mw[i, j] ** 2 for i in range(rows)))
            colscale.append(nrm)
            for i in range(rows):
                Mw[i, j] /= nrm

        sv = mp.svd_r(Mw, compute_uv=False)
        svals = sorted((abs(s) for s in sv), reverse=True)
        cond = float(svals[0] / svals[-1]) if svals[-1] != 0 else math.inf

        x, _ = mp.qr_solve(Mw, bw)
        return np.array([float(x[j] / colscale[j]) for j in range(cols)]), cond


def recover_spatial(
    moments_: np.ndarray,
    gammas: list[float] | np.ndarray,
    lambdas: np.ndarray,
    functional: np.ndarray | None = None,
    sigma: np.ndarray | None = None,
    n_recover: int | None = None,
    cond_limit: float = DEFAULT_COND_LIMIT,
    n_max: int = 8,
) -> SpatialRecovery:
    """Solve ``sum_n b_n lambda_n^(-gamma - 1) = A_gamma`` for the weights ``b_n``.

    The system is a generalized Vandermonde system and is solved in extended
    precision after column scaling, with rows weighted by *sigma* (the
    uncertainty of each moment). When its condition number exceeds
    *cond_limit* the trailing modes are dropped one at a time and the result
    is flagged as partial.
    """
    A = np.asarray(moments_, dtype=np.float64)
    gammas = np.asarray(gammas, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if A.shape != gammas.shape:
        raise ValueError("need one moment per exponent")
    n = min(lambdas.size, n_max) if n_recover is None else int(n_recover)
    if not 0 < n <= lambdas.size:
        raise ValueError(f"cannot recover {n} modes from {lambdas.size} eigenvalues")
    if A.size < n:
        raise ValueError(f"{A.size} moments cannot determine {n} modes")
    if sigma is None:
        sigma = np.maximum(1.0e-15 * np.abs(A), np.finfo(float).tiny)
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64), np.finfo(float).tiny)

    notes = []
    if not np.any(A):
        b, cond, m = np.zeros(n), 1.0, n
    else:
        V = np.array([[lam ** (-g - 1.0) for lam in lambdas[:n]] for g in gammas])
        m = n
        while True:
            b, cond = _solve_weighted(V[:, :m], A, sigma)
            if cond <= cond_limit or m == 1:
                break
            m -= 1
        if cond > cond_limit:
            raise IllConditionedError(f"condition number {cond:.3e} exceeds {cond_limit:.1e}")
        if m < n:
            notes.append(f"ill-conditioned: recovered only the leading {m} of {n} modes")

    ell = np.ones(m) if functional is None else np.asarray(functional, dtype=np.float64)[:m]
    visible = np.abs(ell) > 1.0e-12 * max(float(np.max(np.abs(ell))), np.finfo(float).tiny)
    coeffs = np.full(n, np.nan)
    coeffs[:m][visible] = b[visible] / ell[visible]
    if not visible.all():
        notes.append("some modes are invisible to the observation")

    recovered = np.zeros(n, dtype=bool)
    recovered[:m] = visible
    return SpatialRecovery(
        coeffs=coeffs,
        weights=np.concatenate([b, np.full(n - m, np.nan)]),
        condition=cond,
        recovered=recovered,
        moments=A,
        partial=m < n,
        notes=tuple(notes),
    )


def invert_spatial(
    trace: ObservationTrace,
    mu0: float,
    functional: np.ndarray,
    fit: TailFit | None = None,
    n_recover: int | None = None,
    cond_limit: float = DEFAULT_COND_LIMIT,
    blind_tol: float = 1.0e-12,
) -> SpatialRecovery:
    """Spatial coefficients from a trace generated by a constant ``mu0``.

    The fitted coefficients of ``1`` and ``t^(-l_k alpha)`` give the moments
    ``A_0`` and ``A_{l_k}`` of the observed weights ``b_n = a_n l(phi_n)``,
    which :func:`recover_spatial` turns into ``a_n``.
    """
    if not trace.observation.linear:
        raise ValueError("spatial recovery needs a linear observation")
    if mu0 == 0.0:
        raise ValueError("spatial recovery needs a nonzero constant mu0")

    lambdas = np.asarray(trace.lambdas, dtype=np.float64)
    n = min(lambdas.size, 8) if n_recover is None else int(n_recover)
    ref = abs(mu0) / lambdas[0]
    if np.max(np.abs(trace.values)) < blind_tol * ref:
        raise BlindSpotError("blind spot: trace is identically zero")

    order = as_order(trace.alpha)
    if fit is None:
        fit = fit_tail(
            trace.times, trace.values, order, TailStructure.constant_only(), K=n + 5
        )

    ls = lk_sequence(order, fit.K)
    gam = [0] + ls
    rows_c = [fit.coefficient(0.0)] + [fit.coefficient(-l * order.alpha) for l in ls]
    rows_e = [fit.error(0.0)] + [fit.error(-l * order.alpha) for l in ls]
    factor = np.array(
        [mu0] + [(-1) ** l * mu0 * float(reciprocal_gamma(1.0 - l * order.alpha)) for l in ls]
    )
    A = np.array(rows_c) / factor
    sigma = np.maximum(np.abs(np.array(rows_e) / factor), 1.0e-15 * np.abs(A))
    if np.max(np.abs(A)) < blind_tol * ref:
        raise BlindSpotError("blind spot: all spectral moments vanish")

    res = recover_spatial(A, gam, lambdas, functional, sigma, n, cond_limit, n_max=n)
    if not fit.trusted:
        res = replace(res, notes=res.notes + ("tail fit is ill-conditioned",))
    return res


# }}}


# {{{ temporal recovery


@dataclass(frozen=True)
class Estimate:
    """A recovered number with the range spanned by its individual samples."""

    value: float
    low: float
    high: float
    exact: bool
    samples: int = 1

    @property
    def spread(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class TemporalRecovery:
    mu0: float | None
    mu: dict[int, Estimate] = field(default_factory=dict)
    c_mu: dict[int, Estimate] = field(default_factory=dict)
    notes: tuple[str, ...] = ()


def _log_factor(alpha: float, l: int, j: int) -> float:
    return (
        (-1) ** (l - 1 + j)
        * float(reciprocal_gamma(-l * alpha))
        * float(binom(-l * alpha - 1.0, j - 1))
    )


def _estimate(samples: list[tuple[float, float]], exact: bool) -> Estimate:
    # inverse-variance average: higher k are determined far less accurately
    vals = np.array([v for v, _ in samples])
    errs = np.array([max(e, 1.0e-300) for _, e in samples])
    w = errs**-2.0
    value = float(np.sum(w * vals) / np.sum(w))
    return Estimate(value, float(vals.min()), float(vals.max()), exact, len(samples))


def recover_temporal(
    fit: TailFit,
    lambdas: np.ndarray,
    coeffs: np.ndarray,
    functional: np.ndarray,
    structure: TailStructure,
    K_use: int | None = None,
    blind_tol: float = 1.0e-10,
) -> TemporalRecovery:
    """Temporal expansion data from a tail fit with known spatial coefficients.

    ``mu_j`` comes from the logarithmic terms. ``c_{mu,j-1}`` comes from the
    algebraic ones, exactly when ``mu`` has no tail (all ``mu_j = 0`` for
    ``j >= 1``) and as an interval otherwise, since the unknown ``b^x_{jk}``
    shares the same exponent. Every usable ``l_k`` gives one sample.

    :raises BlindSpotError: if all spectral moments vanish relative to the
        size of the coefficients, which happens when the observation point is
        a common zero of the active modes.
    """
    order = as_order(fit.alpha)
    a = order.alpha
    lambdas = np.asarray(lambdas, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    ell = np.asarray(functional, dtype=np.float64)[: coeffs.size]
    lambdas = lambdas[: coeffs.size]
    weights = coeffs * ell

    ls = lk_sequence(order, fit.K if K_use is None else K_use)
    gam = [0] + ls
    A = moments(lambdas, weights, gam)
    ell_max = float(np.max(np.abs(functional)))
    ref = np.array(
        [math.fsum(np.abs(coeffs) * ell_max * lambdas ** (-g - 1.0)) for g in gam]
    )
    usable = np.abs(A) > blind_tol * ref
    if not usable.any():
        raise BlindSpotError("blind spot: the observation does not see the spatial source")
    notes = []

    mu0 = None
    if structure.constant and usable[0]:
        mu0 = fit.coefficient(0.0) / A[0]

    mu: dict[int, Estimate] = {}
    cm: dict[int, Estimate] = {}
    for j in range(1, fit.J + 1):
        logs, algs = [], []
        for k, l in enumerate(ls):
            if not usable[k + 1]:
                continue
            den = _log_factor(a, l, j) * A[k + 1]
            tp = -l * a - j
            if structure.tail:
                try:
                    logs.append((fit.coefficient(tp, True) / den, fit.error(tp, True) / abs(den)))
                except KeyError:
                    pass
            if structure.moments or structure.tail:
                try:
                    algs.append((fit.coefficient(tp, False) / den, fit.error(tp, False) / abs(den)))
                except KeyError:
                    pass
        if logs:
            mu[j] = _estimate(logs, True)
        if algs:
            cm[j - 1] = _estimate(algs, not structure.tail)

    if structure.tail:
        notes.append("moments c_mu include the unknown b^x coefficients: intervals only")
    if not fit.trusted:
        notes.append("tail fit is ill-conditioned")
    return TemporalRecovery(mu0, mu, cm, tuple(notes))


# }}}


# {{{ proportionality


@dataclass(frozen=True)
class KappaEstimate:
    """Outcome of a proportionality test between two sources.

    ``ratios`` holds one estimate per matched coefficient: first the ratios
    of the spectral moments of the two spatial parts, then the ratios of the
    moment-normalized fitted coefficients.
    """

    kappa: float
    spread: float
    proportional: bool
    ratios: np.ndarray
    condition: float
    residual: float
    reason: str


def estimate_kappa(
    trace_a: ObservationTrace,
    trace_b: ObservationTrace,
    structure: TailStructure = TailStructure.unknown(),
    K: int = 3,
    J: int = 2,
    threshold: float = 1.0e-3,
    significance: float = 1.0e-4,
) -> KappaEstimate:
    r"""Estimate ``kappa`` with ``f_a = kappa f_b`` and ``mu_b = kappa mu_a``.

    Each trace must carry its observation weights ``a_n l(phi_n)``, since the
    traces alone cannot separate ``(f, mu)`` from ``(f / k, k mu)``. Every
    well-determined fitted coefficient contributes two estimates: the ratio
    ``A_a / A_b`` of the spectral moments it involves, and the ratio
    ``(c_b / A_b) / (c_a / A_a)`` of the temporal factors. The pair is
    reported proportional when all estimates agree to *threshold*.

    The exponents ``l alpha`` and ``j`` must not collide, so ``alpha`` has to
    be irrational (as far as floating point can tell).
    """
    for tr in (trace_a, trace_b):
        if tr.weights is None or tr.lambdas is None:
            raise ValueError("kappa estimation needs traces with known spatial weights")
    if not np.array_equal(trace_a.times, trace_b.times):
        raise ValueError("traces must share their sampling times")
    if trace_a.alpha != trace_b.alpha:
        raise ValueError("traces must share the fractional order")
    order = as_order(trace_a.alpha)
    if order.is_rational:
        raise ValueError(
            f"kappa estimation needs an irrational alpha: {order.alpha} = {order.ratio}"
        )

    fa = fit_tail(trace_a.times, trace_a.values, order, structure, K, J)
    fb = fit_tail(trace_b.times, trace_b.values, order, structure, K, J)
    condition = max(fa.condition, fb.condition)
    residual = max(fa.rel_residual, fb.rel_residual)

    ls = lk_sequence(order, K)
    gamma_of: dict[str, float] = {"const": 0.0}
    for l in ls:
        gamma_of[f"k{l}"] = float(l)
        for j in range(1, J + 1):
            gamma_of[f"c[j{j},l{l}]"] = float(l)
            gamma_of[f"log[j{j},l{l}]"] = float(l)

    spatial, temporal = [], []
    for i, tm in enumerate(fa.terms):
        g = gamma_of.get(tm.label)
        if g is None:
            continue
        ca, cb = fa.coeffs[i], fb.coeffs[i]
        if abs(ca) * significance <= fa.stderr[i] or abs(cb) * significance <= fb.stderr[i]:
            continue
        Aa = moments(trace_a.lambdas, trace_a.weights, [g])[0]
        Ab = moments(trace_b.lambdas, trace_b.weights, [g])[0]
        if Aa == 0.0 or Ab == 0.0:
            continue
        spatial.append(Aa / Ab)
        temporal.append((cb / Ab) / (ca / Aa))

    ratios = np.array(spatial + temporal)
    if ratios.size == 0:
        return KappaEstimate(
            math.nan, math.inf, False, ratios, condition, residual, "no usable coefficients"
        )

    kappa = float(np.median(ratios))
    spread = float(np.max(np.abs(ratios - kappa)) / abs(kappa))
    if spread > threshold:
        reason = f"coefficient ratios disagree (spread {spread:.2e})"
        return KappaEstimate(kappa, spread, False, ratios, condition, residual, reason)
    return KappaEstimate(kappa, spread, True, ratios, condition, residual, "ratios agree")


# }}}
