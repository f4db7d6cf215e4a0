r"""Large-time expansions of modal responses and of observed traces.

A single mode with eigenvalue :math:`\lambda` and a source whose profile admits
:math:`\mu(t) \sim \sum_j \mu_j t^{-j}` behaves like

.. math::

    \psi(t) \sim \frac{\mu_0}{\lambda}
    + \sum_k \frac{(-1)^{l_k} \mu_0}{\Gamma(1 - l_k\alpha)}
        \lambda^{-l_k-1} t^{-l_k\alpha}
    + \sum_{j,k} \frac{(-1)^{l_k-1+j}}{\Gamma(-l_k\alpha)}
        \binom{-l_k\alpha-1}{j-1} \lambda^{-l_k-1} t^{-l_k\alpha-j}
        \left(\mu_j \log t + c_{\mu,j-1} + b^\times_{jk}\right)
    + \sum_{j,m} b^\times_{jm} \lambda^{-1-m/\alpha} t^{-j-m},

where :math:`l_k` enumerates the integers :math:`l \ge 1` for which
:math:`l\alpha` is not a positive integer. Coefficients marked
:math:`b^\times` have no closed form and are kept as placeholders with the
right exponents; they are determined numerically by :func:`fit_series`.

For an observed sum :math:`\sum_n w_n \psi_n` each power :math:`\lambda^{-\gamma-1}`
is replaced by the moment :math:`A_\gamma = \sum_n w_n \lambda_n^{-\gamma-1}`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.special import binom

from fracsource.mittag_leffler import reciprocal_gamma
from fracsource.temporal import TemporalSource, c_mu

MAX_DENOMINATOR = 10**6
BETA1 = 1.0 / 3.0
BETA2 = 2.0 / 3.0

_KEY_DIGITS = 10


# {{{ fractional order


@dataclass(frozen=True)
class FractionalOrder:
    """The order :math:`\\alpha` together with its rationality classification.

    :attr:`ratio` is the best rational approximation with denominator at most
    ``max_denominator``; it is kept only if it reproduces ``alpha`` to working
    precision. Otherwise the order is presumed irrational.
    """

    alpha: float
    max_denominator: int = MAX_DENOMINATOR
    ratio: Fraction | None = field(init=False, compare=False)

    def __post_init__(self) -> None:
        a = float(self.alpha)
        if not (0.0 < a < 2.0) or a == 1.0:
            raise ValueError(f"alpha must lie in (0, 1) U (1, 2): got {a}")
        frac = Fraction(a).limit_denominator(self.max_denominator)
        close = abs(float(frac) - a) <= 4 * np.finfo(float).eps * a
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "ratio", frac if close else None)

    @property
    def is_rational(self) -> bool:
        return self.ratio is not None

    def integer_multiple(self, k: int) -> bool:
        """Whether ``k alpha`` is a positive integer."""
        if self.ratio is None:
            return False
        return (k * self.ratio).denominator == 1

    def l_sequence(self, K: int) -> list[int]:
        return lk_sequence(self, K)


def as_order(alpha: float | FractionalOrder) -> FractionalOrder:
    return alpha if isinstance(alpha, FractionalOrder) else FractionalOrder(alpha)


def lk_sequence(alpha: float | FractionalOrder, K: int) -> list[int]:
    """First ``K`` integers ``l >= 1`` with ``l alpha`` not a positive integer."""
    order = as_order(alpha)
    out: list[int] = []
    k = 0
    while len(out) < K:
        k += 1
        if not order.integer_multiple(k):
            out.append(k)
    return out


# }}}


# {{{ truncation orders


def _exceeds(value: float, N: float) -> bool:
    # strict inequality that is not fooled by rounding in products like (1/3) * 9
    return value > N * (1.0 + 1.0e-12) + 1.0e-14


def choose_K(alpha: float | FractionalOrder, N: float, beta2: float = BETA2) -> int:
    """Smallest ``K`` with ``alpha l_{K+1} > N`` and ``alpha beta2 l_{K+1} > N``."""
    order = as_order(alpha)
    K = 0
    while True:
        l_next = lk_sequence(order, K + 1)[-1]
        if _exceeds(order.alpha * beta2 * l_next, N) and _exceeds(order.alpha * l_next, N):
            return K
        K += 1


def choose_J(N: float, beta1: float = BETA1) -> int:
    """Smallest ``J`` with ``(J + 1) beta1 > N``."""
    return max(0, math.floor(N / beta1 + 1.0e-12))


def choose_M(N: float, beta1: float = BETA1, beta2: float = BETA2) -> int:
    """Smallest ``M`` with ``(1 - beta1)(M + 2) > N`` and ``(1 - beta2)(M + 1) > N``."""
    M = 0
    while not (_exceeds((1 - beta1) * (M + 2), N) and _exceeds((1 - beta2) * (M + 1), N)):
        M += 1
    return M


# }}}


# {{{ series containers


@dataclass(frozen=True)
class Term:
    r"""One contribution ``coeff * lambda^lambda_power * t^t_power * log(t)^has_log``."""

    coeff: float
    lambda_power: float
    t_power: float
    has_log: bool
    explicit: bool
    label: str = ""

    @property
    def key(self) -> tuple[float, float, bool]:
        return (
            round(self.lambda_power, _KEY_DIGITS),
            round(self.t_power, _KEY_DIGITS),
            self.has_log,
        )

    def basis(self, t: np.ndarray, lam: float = 1.0) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = lam**self.lambda_power * t**self.t_power
        return out * np.log(t) if self.has_log else out


@dataclass(frozen=True)
class AsymptoticSeries:
    """An ordered collection of :class:`Term` with distinct keys.

    :attr order: the expansion is claimed up to ``O(t^-order)``.
    """

    terms: tuple[Term, ...]
    alpha: float
    order: float
    truncation: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def explicit_mask(self) -> np.ndarray:
        return np.array([tm.explicit for tm in self.terms], dtype=bool)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([tm.coeff for tm in self.terms])

    def evaluate(self, t: np.ndarray | float, lam: float = 1.0) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        cols = np.array([tm.coeff * tm.basis(t, lam) for tm in self.terms])
        return np.sum(cols, axis=0) if cols.size else np.zeros_like(t)

    def fold(self, lam: float) -> AsymptoticSeries:
        """Absorb ``lambda`` into the coefficients and merge equal time exponents."""
        terms = [
            replace(tm, coeff=tm.coeff * lam**tm.lambda_power, lambda_power=0.0)
            for tm in self.terms
        ]
        return replace(self, terms=collect(terms))

    def with_coefficients(self, coeffs: np.ndarray) -> AsymptoticSeries:
        terms = tuple(replace(tm, coeff=float(c)) for tm, c in zip(self.terms, coeffs))
        return replace(self, terms=terms)

    def find(self, t_power: float, has_log: bool, lambda_power: float | None = None) -> Term:
        for tm in self.terms:
            if (
                abs(tm.t_power - t_power) < 1.0e-9
                and tm.has_log == has_log
                and (lambda_power is None or abs(tm.lambda_power - lambda_power) < 1.0e-9)
            ):
                return tm
        raise KeyError(f"no term t^{t_power} log^{int(has_log)}")

    def to_rows(self) -> list[tuple]:
        return [
            (tm.coeff, tm.lambda_power, tm.t_power, tm.has_log, tm.explicit)
            for tm in self.terms
        ]


def collect(terms: list[Term]) -> tuple[Term, ...]:
    """Merge terms sharing a key, summing coefficients.

    The merged term is explicit only if every contribution is. Terms are
    returned sorted by decreasing time exponent, logarithmic terms first.
    """
    merged: dict[tuple, Term] = {}
    for tm in terms:
        prev = merged.get(tm.key)
        if prev is None:
            merged[tm.key] = tm
        else:
            label = prev.label if tm.label in prev.label else f"{prev.label}+{tm.label}"
            merged[tm.key] = replace(
                prev,
                coeff=prev.coeff + tm.coeff,
                explicit=prev.explicit and tm.explicit,
                label=label,
            )
    return tuple(
        sorted(merged.values(), key=lambda tm: (-tm.t_power, not tm.has_log, -tm.lambda_power))
    )


# }}}


# {{{ expansions


def _source_data(src: TemporalSource, J: int) -> tuple[np.ndarray, list[float]]:
    mu = src.mu_coeffs(J)
    cm = [c_mu(src, m).value for m in range(J)]
    return mu, cm


def _raw_terms(
    order: FractionalOrder,
    src: TemporalSource,
    N: float,
    K: int,
    J: int,
    M: int,
) -> tuple[list[Term], float]:
    alpha = order.alpha
    ls = lk_sequence(order, K + 1)
    mu, cm = _source_data(src, J)
    mu0 = mu[0]
    tail = src.has_tail
    terms: list[Term] = []

    if mu0 != 0.0:
        terms.append(Term(mu0, -1.0, 0.0, False, True, "mu0"))
        for l in ls[:K]:
            c = (-1) ** l * mu0 * float(reciprocal_gamma(1.0 - l * alpha))
            terms.append(Term(c, -l - 1.0, -l * alpha, False, True, f"k{l}"))

    for l in ls[:K]:
        rg = float(reciprocal_gamma(-l * alpha))
        for j in range(1, J + 1):
            F = (-1) ** (l - 1 + j) * rg * float(binom(-l * alpha - 1.0, j - 1))
            tp = -l * alpha - j
            if mu[j] != 0.0:
                terms.append(Term(F * mu[j], -l - 1.0, tp, True, True, f"log[j{j},l{l}]"))
            c = F * cm[j - 1]
            if c != 0.0 or tail:
                terms.append(Term(c, -l - 1.0, tp, False, not tail, f"c[j{j},l{l}]"))

    if tail:
        for j in range(1, J + 1):
            for m in range(0, M + 1):
                terms.append(
                    Term(0.0, -1.0 - m / alpha, -float(j + m), False, False, f"b[j{j},m{m}]")
                )

    # first exponent that the truncation leaves out
    nxt = [math.inf]
    if mu0 != 0.0:
        nxt.append(alpha * ls[K])
    if any(mu[1:] != 0.0) or any(c != 0.0 for c in cm):
        nxt.append(alpha * ls[K] + 1.0)
        if K > 0:
            nxt.append(alpha * ls[0] + J + 1.0)
    if tail:
        nxt.extend([J + 1.0, M + 2.0])

    kept = [tm for tm in terms if tm.t_power > -N + 1.0e-12]
    return kept, min(N, min(nxt))


def expansion_psi(
    alpha: float | FractionalOrder,
    src: TemporalSource,
    N: float,
    K: int | None = None,
    J: int | None = None,
    M: int | None = None,
) -> AsymptoticSeries:
    """Large-time expansion of a single modal response, symbolic in ``lambda``.

    Truncation orders not given explicitly are the smallest ones compatible
    with a remainder of order ``t^-N``. Terms decaying at least as fast as the
    remainder are dropped.
    """
    order = as_order(alpha)
    if not N > 0:
        raise ValueError(f"N must be positive: got {N}")
    K = choose_K(order, N) if K is None else int(K)
    J = choose_J(N) if J is None else int(J)
    M = choose_M(N) if M is None else int(M)

    terms, claimed = _raw_terms(order, src, N, K, J, M)
    return AsymptoticSeries(
        collect(terms), order.alpha, claimed, {"K": K, "J": J, "M": M, "N": N}
    )


def moments(
    lambdas: np.ndarray, weights: np.ndarray, gammas: np.ndarray | list[float]
) -> np.ndarray:
    r"""Spectral moments :math:`A_\gamma = \sum_n w_n \lambda_n^{-\gamma-1}`."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return np.array([math.fsum(weights * lambdas ** (-g - 1.0)) for g in gammas])


def expansion_sum(
    alpha: float | FractionalOrder,
    src: TemporalSource,
    lambdas: np.ndarray,
    weights: np.ndarray,
    N: float,
    K: int | None = None,
    J: int | None = None,
    M: int | None = None,
) -> AsymptoticSeries:
    """Expansion of the observed sum ``sum_n w_n psi_n(t)``.

    Each power ``lambda^p`` of the single-mode expansion becomes the moment
    ``A_{-p-1}``; terms whose time exponents coincide (rational ``alpha``)
    are merged.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if lambdas.shape != weights.shape or np.any(lambdas <= 0):
        raise ValueError("need matching weights and positive eigenvalues")
    bound = math.fsum(np.abs(weights) * np.log1p(lambdas) / lambdas)
    if not math.isfinite(bound):
        raise ValueError("sum |w_n| log(1 + lambda_n) / lambda_n does not converge")

    single = expansion_psi(alpha, src, N, K, J, M)
    terms = []
    for tm in single.terms:
        A = moments(lambdas, weights, [-tm.lambda_power - 1.0])[0]
        terms.append(replace(tm, coeff=tm.coeff * A, lambda_power=0.0))
    return replace(single, terms=collect(terms))


# }}}


# {{{ numerical comparison


def _design(series: AsymptoticSeries, t: np.ndarray, lam: float) -> np.ndarray:
    return np.array([tm.basis(t, lam) for tm in series.terms]).T


def fit_series(
    t: np.ndarray,
    values: np.ndarray,
    series: AsymptoticSeries,
    lam: float = 1.0,
    free: str = "placeholders",
) -> AsymptoticSeries:
    """Least-squares fit of (some) coefficients to numerical data.

    :arg free: ``"placeholders"`` refits only the non-explicit terms, keeping
        the analytic ones fixed; ``"all"`` refits every coefficient.
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if free not in ("placeholders", "all"):
        raise ValueError(f"unknown fit mode '{free}'")

    series = series.fold(lam) if any(tm.lambda_power != 0.0 for tm in series.terms) else series
    A = _design(series, t, 1.0)
    coeffs = series.coefficients.copy()
    mask = ~series.explicit_mask if free == "placeholders" else np.ones(len(series), bool)
    if not mask.any():
        return series

    rhs = values - A[:, ~mask] @ coeffs[~mask]
    # relative weighting: every sample matters in proportion to its size
    w = 1.0 / np.maximum(np.abs(values), np.finfo(float).tiny)
    B = A[:, mask] * w[:, None]
    scale = np.linalg.norm(B, axis=0)
    scale[scale == 0] = 1.0
    sol, *_ = np.linalg.lstsq(B / scale, rhs * w, rcond=None)
    coeffs[mask] = sol / scale
    return series.with_coefficients(coeffs)


@dataclass(frozen=True)
class Comparison:
    t: np.ndarray
    residual: np.ndarray
    slope: float
    expected_slope: float
    per_decade: dict[int, float]

    def slope_matches(self, rtol: float = 0.1) -> bool:
        return abs(self.slope - self.expected_slope) <= rtol * abs(self.expected_slope)


def compare(
    t: np.ndarray,
    values: np.ndarray,
    series: AsymptoticSeries,
    lam: float = 1.0,
    fit_placeholders: bool = True,
    reference: AsymptoticSeries | None = None,
) -> Comparison:
    """Residual of a series against numerical values and its log-log slope.

    Placeholder coefficients are fitted first (unless disabled), so the
    residual measures what the explicit terms leave unexplained. With a
    ``reference`` expansion of higher order the placeholders are taken from
    a fit of that richer model, which keeps the omitted orders out of them.
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if t.size < 4 or t.max() / t.min() < 1.0e3 * (1 - 1.0e-12):
        raise ValueError("comparison window must span at least three decades")

    if fit_placeholders and not series.explicit_mask.all():
        if reference is None:
            series = fit_series(t, values, series, lam)
        else:
            rich = fit_series(t, values, reference, lam)
            series = series.fold(lam)
            coeffs = [
                tm.coeff if tm.explicit else rich.find(tm.t_power, tm.has_log).coeff
                for tm in series.terms
            ]
            series = series.with_coefficients(coeffs)
            lam = 1.0
    res = np.abs(values - series.evaluate(t, lam))
    ok = res > 0
    slope = float(np.polyfit(np.log(t[ok]), np.log(res[ok]), 1)[0]) if ok.sum() >= 2 else -math.inf

    decades: dict[int, float] = {}
    for ti, ri in zip(t, res):
        d = math.floor(math.log10(ti) + 1.0e-12)
        decades[d] = max(decades.get(d, 0.0), float(ri))

    return Comparison(t, res, slope, -float(series.order), decades)


# }}}
