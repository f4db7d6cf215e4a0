r"""Temporal source components :math:`\mu(t)` with known large-time expansions.

Every family is closed form and declares its expansion coefficients
:math:`\mu_j` in :math:`\mu(t) \sim \sum_j \mu_j t^{-j}` analytically. Besides
point values, each family knows how to evaluate its own remainder
:math:`\mu(s) - \sum_{j \le J} \mu_j s^{-j}` without cancellation, which is what
makes the glued remainder :math:`\bar R_{\mu,m'}` and the moments
:math:`c_{\mu,m}` computable for large :math:`s`.
"""

from __future__ import annotations

import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from scipy import integrate

CONSTANT_SIGN = "constant-sign"
FAST_DECAY = "fast-decay"


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float) -> None:
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class TemporalSource(ABC):
    """Base class for the closed-form families of :math:`\\mu(t)`."""

    family: ClassVar[str]

    @abstractmethod
    def __call__(self, t: np.ndarray | float) -> np.ndarray | float:
        """Point values :math:`\\mu(t)` for :math:`t \\ge 0`."""

    @abstractmethod
    def coefficient(self, j: int) -> float:
        """Expansion coefficient :math:`\\mu_j`."""

    @abstractmethod
    def remainder(self, s: np.ndarray, order: int) -> np.ndarray:
        """:math:`\\mu(s) - \\sum_{j=0}^{order} \\mu_j s^{-j}` for ``s > 0``."""

    @property
    @abstractmethod
    def sup_norm(self) -> float:
        """Declared bound on :math:`\\|\\mu\\|_\\infty`."""

    @property
    @abstractmethod
    def condition(self) -> str:
        """Which of the two admissibility conditions the instance certifies."""

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Times where :math:`\\mu` is not smooth."""
        return ()

    @property
    def scale(self) -> float:
        """Time scale of the transient features of :math:`\\mu`."""
        return 1.0

    @property
    def has_tail(self) -> bool:
        """Whether some :math:`\\mu_j` with ``j >= 1`` is nonzero."""
        return False

    def mu_coeffs(self, J: int) -> np.ndarray:
        return np.array([self.coefficient(j) for j in range(J + 1)])

    def sign(self, t: np.ndarray) -> np.ndarray:
        return np.sign(np.asarray(self(t), dtype=np.float64))

    def params(self) -> dict[str, Any]:
        return {}

    def describe(self) -> dict[str, Any]:
        return {"family": self.family, **self.params(), "condition": self.condition}


# {{{ families


@dataclass(frozen=True)
class ConstantSource(TemporalSource):
    r""":math:`\mu(t) = \mu_0`."""

    mu0: float = 1.0
    family: ClassVar[str] = "constant"

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=np.float64), self.mu0) + 0.0

    def coefficient(self, j: int) -> float:
        return float(self.mu0) if j == 0 else 0.0

    def remainder(self, s, order):
        s = np.asarray(s, dtype=np.float64)
        return np.zeros_like(s) if order >= 0 else np.full_like(s, self.mu0)

    @property
    def sup_norm(self) -> float:
        return abs(self.mu0)

    @property
    def condition(self) -> str:
        return CONSTANT_SIGN

    def params(self):
        return {"mu0": self.mu0}


@dataclass(frozen=True)
class RationalTailSource(TemporalSource):
    r"""Finite tail :math:`\sum_{j=0}^J \mu_j t^{-j}` glued to a bounded start.

    .. math::

        \mu(t) = \sum_{j=0}^{J} \mu_j \left(\frac{1 - e^{-t}}{t}\right)^j,

    which is bounded by :math:`\sum_j |\mu_j|` and differs from the finite tail
    by an exponentially small amount.
    """

    coeffs: tuple[float, ...] = (0.0, 1.0)
    family: ClassVar[str] = "rational-tail"

    def __post_init__(self) -> None:
        if len(self.coeffs) == 0:
            raise ValueError("rational-tail source needs at least mu_0")

    def _base(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(t > 0, -np.expm1(-t) / np.where(t > 0, t, 1.0), 1.0)
        return g

    def __call__(self, t):
        g = self._base(t)
        out = np.zeros_like(g)
        for c in self.coeffs[::-1]:
            out = out * g + c
        return out

    def coefficient(self, j: int) -> float:
        return float(self.coeffs[j]) if 0 <= j < len(self.coeffs) else 0.0

    def remainder(self, s, order):
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros_like(s)
        small = s < 1.0
        if small.any():
            ss = s[small]
            direct = self(ss)
            for j in range(min(order, len(self.coeffs) - 1) + 1):
                direct = direct - self.coeffs[j] * ss ** (-j)
            out[small] = direct

        big = ~small
        if big.any():
            ss = s[big]
            # (1 - e^{-s})^j - 1, without cancellation
            l1p = np.log1p(-np.exp(-ss))
            acc = np.zeros_like(ss)
            for j, c in enumerate(self.coeffs):
                if c == 0.0:
                    continue
                term = c * ss ** (-j) * np.expm1(j * l1p)
                if j > order:
                    term = term + c * ss ** (-j)
                acc = acc + term
            out[big] = acc
        return out

    @property
    def sup_norm(self) -> float:
        return float(sum(abs(c) for c in self.coeffs))

    @property
    def has_tail(self) -> bool:
        return any(c != 0.0 for c in self.coeffs[1:])

    @property
    def condition(self) -> str:
        return CONSTANT_SIGN

    def params(self):
        return {"coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class InverseLinearSource(TemporalSource):
    r""":math:`\mu(t) = c / (\tau + t)` with :math:`\mu_j = c (-\tau)^{j-1}`."""

    amplitude: float = 1.0
    shift: float = 1.0
    family: ClassVar[str] = "inverse-linear"

    def __post_init__(self) -> None:
        if not self.shift > 0:
            raise ValueError(f"shift must be positive: got {self.shift}")

    def __call__(self, t):
        return self.amplitude / (self.shift + np.asarray(t, dtype=np.float64))

    def coefficient(self, j: int) -> float:
        if j == 0:
            return 0.0
        return float(self.amplitude * (-self.shift) ** (j - 1))

    def remainder(self, s, order):
        s = np.asarray(s, dtype=np.float64)
        order = max(order, 0)
        return self.amplitude * (-self.shift) ** order * s ** (-order) / (self.shift + s)

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude) / self.shift

    @property
    def scale(self) -> float:
        return self.shift

    @property
    def has_tail(self) -> bool:
        return self.amplitude != 0.0

    @property
    def condition(self) -> str:
        return CONSTANT_SIGN

    def params(self):
        return {"amplitude": self.amplitude, "shift": self.shift}


@dataclass(frozen=True)
class CompactSource(TemporalSource):
    """Piecewise polynomial supported on ``[0, breaks[-1]]``.

    ``pieces[i]`` holds the power-basis coefficients (in absolute time, lowest
    degree first) on ``[breaks[i], breaks[i + 1])``.
    """

    breaks: tuple[float, ...] = (0.0, 1.0)
    pieces: tuple[tuple[float, ...], ...] = ((1.0,),)
    family: ClassVar[str] = "compact"

    def __post_init__(self) -> None:
        if len(self.breaks) != len(self.pieces) + 1:
            raise ValueError("need exactly one polynomial per interval")
        if self.breaks[0] != 0.0 or any(
            b <= a for a, b in zip(self.breaks[:-1], self.breaks[1:])
        ):
            raise ValueError("breaks must start at 0 and increase strictly")

    @classmethod
    def polynomial(cls, coeffs, support: float) -> CompactSource:
        return cls((0.0, float(support)), (tuple(float(c) for c in coeffs),))

    @property
    def support(self) -> float:
        return self.breaks[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for a, b, c in zip(self.breaks[:-1], self.breaks[1:], self.pieces):
            mask = (t >= a) & (t < b)
            out = np.where(mask, np.polynomial.polynomial.polyval(t, c), out)
        return out

    def coefficient(self, j: int) -> float:
        return 0.0

    def remainder(self, s, order):
        return np.asarray(self(s), dtype=np.float64)

    @property
    def sup_norm(self) -> float:
        t = np.linspace(0.0, self.support, 4097)[:-1]
        return float(np.max(np.abs(self(t))))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.breaks[1:])

    @property
    def scale(self) -> float:
        return self.support

    @property
    def condition(self) -> str:
        return CONSTANT_SIGN

    def params(self):
        return {"breaks": list(self.breaks), "pieces": [list(p) for p in self.pieces]}


@dataclass(frozen=True)
class FastDecaySource(TemporalSource):
    r""":math:`\mu(t) = c_1 \exp(-c_2 t^p) \cos(\omega t + \varphi)`, ``p >= 1/2``.

    All :math:`\mu_j` vanish; the decay certifies the fast-decay condition.
    """

    c1: float = 1.0
    c2: float = 1.0
    power: float = 0.5
    frequency: float = 0.0
    phase: float = 0.0
    family: ClassVar[str] = "fast-decay"

    def __post_init__(self) -> None:
        if not (self.c2 > 0 and self.power >= 0.5):
            raise ValueError("fast-decay source needs c2 > 0 and power >= 1/2")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return (
            self.c1
            * np.exp(-self.c2 * t**self.power)
            * np.cos(self.frequency * t + self.phase)
        )

    def coefficient(self, j: int) -> float:
        return 0.0

    def remainder(self, s, order):
        return np.asarray(self(s), dtype=np.float64)

    def sign(self, t):
        t = np.asarray(t, dtype=np.float64)
        # sign of the oscillating factor; immune to underflow of the envelope
        return np.sign(self.c1) * np.sign(np.cos(self.frequency * t + self.phase))

    @property
    def sup_norm(self) -> float:
        return abs(self.c1)

    @property
    def scale(self) -> float:
        return self.c2 ** (-1.0 / self.power)

    @property
    def condition(self) -> str:
        return FAST_DECAY

    def params(self):
        return {
            "c1": self.c1,
            "c2": self.c2,
            "power": self.power,
            "frequency": self.frequency,
            "phase": self.phase,
        }


FAMILIES: dict[str, type[TemporalSource]] = {
    cls.family: cls
    for cls in (
        ConstantSource,
        RationalTailSource,
        InverseLinearSource,
        CompactSource,
        FastDecaySource,
    )
}


def make_source(family: str, **params: Any) -> TemporalSource:
    """Build a source from a family name and keyword parameters."""
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(
            f"unknown temporal family '{family}'; expected one of {sorted(FAMILIES)}"
        ) from None

    if cls is RationalTailSource and "coeffs" in params:
        params["coeffs"] = tuple(float(c) for c in params["coeffs"])
    if cls is CompactSource:
        if "breaks" in params:
            params["breaks"] = tuple(float(b) for b in params["breaks"])
        if "pieces" in params:
            params["pieces"] = tuple(tuple(float(c) for c in p) for p in params["pieces"])
    return cls(**params)


# }}}


# {{{ operations


def mu_eval(src: TemporalSource, t: np.ndarray | float) -> np.ndarray | float:
    ta = np.asarray(t, dtype=np.float64)
    if np.any(ta < 0):
        raise ValueError("mu is defined for t >= 0")
    out = src(ta)
    return float(out) if np.ndim(out) == 0 else out


def rbar_literal(src: TemporalSource, m: int, m_prime: int, s: np.ndarray) -> np.ndarray:
    """Glued remainder evaluated term by term, exactly as it is defined.

    Suffers from cancellation for large ``s``; kept as a cross-check for
    :func:`rbar_eval`.
    """
    s = np.asarray(s, dtype=np.float64)
    mu = src.coefficient
    out = np.asarray(src(s), dtype=np.float64).copy()
    for j in range(1, m + 1):
        out -= mu(j) * s ** (-j)
    out -= mu(m + 1) * s ** (-m) / (1.0 + s)
    for j in range(m + 2, m_prime + 1):
        out -= (mu(j) + (-1) ** (j - m) * mu(m + 1)) * s ** (-j)
    return out


def rbar_eval(
    src: TemporalSource, m: int, m_prime: int, s: np.ndarray | float
) -> np.ndarray | float:
    r"""Remainder :math:`\bar R_{\mu,m'}(s)` of the glued expansion of :math:`\mu`.

    For :math:`s \ge 1` the identity

    .. math::

        \bar R_{\mu,m'}(s) = \mu_0 + \Big[\mu(s) - \sum_{j=0}^{m'} \mu_j s^{-j}\Big]
            + (-1)^{m' + 1 - m} \mu_{m+1} \frac{s^{-m'}}{1 + s}

    is used, which avoids subtracting nearly equal quantities.
    """
    if not m_prime > m >= 0:
        raise ValueError(f"need m' > m >= 0: got m={m}, m'={m_prime}")

    sa = np.asarray(s, dtype=np.float64)
    if np.any(sa <= 0):
        raise ValueError("rbar is defined for s > 0")

    flat = np.atleast_1d(sa).ravel()
    out = np.empty_like(flat)
    small = flat < 1.0
    if small.any():
        out[small] = rbar_literal(src, m, m_prime, flat[small])
    big = ~small
    if big.any():
        sb = flat[big]
        out[big] = (
            src.coefficient(0)
            + src.remainder(sb, m_prime)
            + (-1) ** (m_prime + 1 - m) * src.coefficient(m + 1) * sb ** (-m_prime) / (1.0 + sb)
        )

    out = out.reshape(sa.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MomentResult:
    value: float
    error: float


def _moment_integrand_head(src: TemporalSource, m: int):
    # s^m (Rbar_{m+1}(s) - mu_0) multiplied out on (0, 1]
    mu = src.coefficient
    mu0 = mu(0)

    def f(s: float) -> float:
        if s == 0.0:
            s = 1.0e-300
        val = s**m * (float(src(s)) - mu0)
        for j in range(1, m + 1):
            val -= mu(j) * s ** (m - j)
        val -= mu(m + 1) / (1.0 + s)
        return val

    return f


def _moment_integrand_tail(src: TemporalSource, m: int):
    # substitution s = 1/u maps [1, oo) onto (0, 1]
    mu1 = src.coefficient(m + 1)

    def f(u: float) -> float:
        if u == 0.0:
            return 0.0
        s = 1.0 / u
        r = float(src.remainder(np.array([s]), m + 1)[0]) + mu1 * s ** (-m - 1) / (1.0 + s)
        return s ** (m + 2) * r

    return f


def c_mu(
    src: TemporalSource, m: int, epsabs: float = 1.0e-13, epsrel: float = 1.0e-11
) -> MomentResult:
    r"""Moment :math:`c_{\mu,m} = \int_0^\infty s^m \bar R_{\mu,m+1}(s)\,ds`.

    The constant :math:`\mu_0` is removed before integrating (the integral only
    converges for :math:`\mu_0 = 0`), so :math:`c_{\mu,m}` depends on the
    decaying part of :math:`\mu` alone.
    """
    if m < 0:
        raise ValueError(f"m must be non-negative: got {m}")

    head_pts = [b for b in src.breakpoints if 0.0 < b < 1.0]
    tail_pts = [1.0 / b for b in src.breakpoints if b > 1.0]
    # the tail integrand of a decaying source peaks near s ~ scale * m
    peak = max(src.scale, 1.0) * max(m, 1)
    for s in (peak / 4, peak, 4 * peak, 16 * peak):
        if s > 1.0:
            tail_pts.append(1.0 / s)

    total, error = 0.0, 0.0
    for fn, pts in (
        (_moment_integrand_head(src, m), head_pts),
        (_moment_integrand_tail(src, m), tail_pts),
    ):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err, info, *rest = integrate.quad(
                fn,
                0.0,
                1.0,
                points=sorted(set(pts)) or None,
                epsabs=epsabs,
                epsrel=epsrel,
                limit=500,
                full_output=1,
            )
        if rest and err > max(100 * epsabs, 100 * epsrel * abs(val)):
            raise QuadratureError(f"c_mu quadrature did not converge for m={m}", err)
        total += val
        error += err

    return MomentResult(total, error)


def sign_stabilization_time(
    src: TemporalSource, horizon: float, samples: int = 200_001, quiet_fraction: float = 0.1
) -> float | None:
    """Estimate the last sign change of :math:`\\mu` on ``[0, horizon]``.

    Returns the first sample after the last sign change (``0.0`` when the sign
    never changes) or ``None`` when sign changes persist into the final
    ``quiet_fraction`` of the horizon. Exact zeros carry no sign.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive: got {horizon}")

    t = np.linspace(0.0, horizon, samples)
    sg = src.sign(t)
    nz = np.flatnonzero(sg != 0)
    if nz.size == 0:
        return 0.0

    flips = np.flatnonzero(sg[nz][1:] != sg[nz][:-1])
    if flips.size == 0:
        return 0.0

    t_star = float(t[nz[flips[-1] + 1]])
    if t_star > (1.0 - quiet_fraction) * horizon:
        return None
    return t_star


# }}}
