from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from fracsource.temporal import (
    CompactSource,
    ConstantSource,
    FastDecaySource,
    InverseLinearSource,
    RationalTailSource,
    c_mu,
    make_source,
    mu_eval,
    rbar_eval,
    rbar_literal,
    sign_stabilization_time,
)


def _mp_moment(fn, coeffs, m, breaks=()):
    """Moment of the glued remainder, integrated in extended precision.

    The remainder is a difference of terms much larger than itself when
    ``s`` is large, so the working precision grows with ``log10(s)``.
    """
    with mp.workdps(30):
        mu0 = coeffs(0)

        def integrand(s):
            digits = 30 + (m + 3) * max(0, int(mp.log10(s)) + 1) if s > 0 else 30
            with mp.workdps(digits):
                r = fn(s)
                for j in range(1, m + 1):
                    r -= coeffs(j) * s ** (-j)
                r -= coeffs(m + 1) * s ** (-m) / (1 + s)
                return s**m * (r - mu0)

        pts = sorted({0, *breaks, 1, 10, 100}) + [mp.inf]
        return float(mp.quad(integrand, pts))


def test_inverse_linear_coefficients_and_remainder():
    src = InverseLinearSource(3.0, 2.0)
    assert [src.coefficient(j) for j in range(4)] == [0.0, 3.0, -6.0, 12.0]
    s = np.geomspace(1.0, 1e6, 30)
    for order in range(4):
        direct = src(s) - sum(src.coefficient(j) * s ** (-j) for j in range(order + 1))
        assert np.allclose(src.remainder(s, order)[:5], direct[:5], rtol=1e-10)
    # the remainder keeps its relative accuracy where the direct form cancels
    assert src.remainder(np.array([1e6]), 3)[0] == pytest.approx(3.0 * (-2.0) ** 3 * 1e-18 / (2 + 1e6))


def test_rational_tail_remainder_is_exponentially_small():
    src = RationalTailSource((0.5, 1.0, -2.0))
    s = np.array([30.0, 50.0])
    assert np.all(np.abs(src.remainder(s, 2)) < 1e-10)
    assert src.remainder(np.array([0.5]), 2)[0] == pytest.approx(
        float(src(0.5)) - 0.5 - 1.0 / 0.5 + 2.0 / 0.25
    )
    assert src.sup_norm == 3.5 and src.has_tail


def test_families_from_names():
    src = make_source("compact", breaks=[0, 1, 2], pieces=[[0, 1], [2, -1]])
    assert isinstance(src, CompactSource)
    assert src(np.array([0.5, 1.5, 2.5])).tolist() == [0.5, 0.5, 0.0]
    assert src.breakpoints == (1.0, 2.0)
    with pytest.raises(ValueError, match="unknown temporal family"):
        make_source("gaussian")
    with pytest.raises(ValueError):
        FastDecaySource(power=0.3)
    with pytest.raises(ValueError):
        InverseLinearSource(shift=0.0)
    assert make_source("constant", mu0=2.0).describe()["mu0"] == 2.0


def test_mu_eval_domain():
    with pytest.raises(ValueError):
        mu_eval(ConstantSource(1.0), -1.0)
    assert mu_eval(InverseLinearSource(1.0, 1.0), 1.0) == 0.5


@pytest.mark.parametrize("m", [0, 1, 2])
def test_rbar_stable_form_matches_literal(m):
    src = InverseLinearSource(1.0, 2.0)
    s = np.linspace(0.1, 30.0, 300)
    assert np.allclose(rbar_eval(src, m, m + 2, s), rbar_literal(src, m, m + 2, s), rtol=1e-9, atol=1e-14)


def test_rbar_rejects_bad_orders():
    with pytest.raises(ValueError):
        rbar_eval(ConstantSource(), 2, 2, 1.0)
    with pytest.raises(ValueError):
        rbar_eval(ConstantSource(), 0, 1, 0.0)


def test_moments_closed_forms():
    # e^{-t} has moments m!, the unit pulse on [0, 1] has 1 / (m + 1)
    src = FastDecaySource(1.0, 1.0, 1.0)
    for m in range(4):
        assert c_mu(src, m).value == pytest.approx(math.factorial(m), rel=1e-10)
    pulse = CompactSource.polynomial([1.0], 1.0)
    for m in range(4):
        assert c_mu(pulse, m).value == pytest.approx(1 / (m + 1), rel=1e-12)
    assert abs(c_mu(InverseLinearSource(1.0, 1.0), 0).value) < 1e-12


@pytest.mark.parametrize("m", [0, 1, 2])
def test_moments_against_extended_precision(m):
    src = InverseLinearSource(1.5, 2.0)
    ref = _mp_moment(lambda s: 1.5 / (2 + s), src.coefficient, m)
    assert c_mu(src, m).value == pytest.approx(ref, rel=1e-9, abs=1e-12)

    tail = RationalTailSource((0.5, 1.0, -0.5))
    ref = _mp_moment(
        lambda s: sum(c * (-mp.expm1(-s) / s) ** j for j, c in enumerate(tail.coeffs)),
        tail.coefficient,
        m,
    )
    assert c_mu(tail, m).value == pytest.approx(ref, rel=1e-9, abs=1e-12)

    comp = CompactSource((0.0, 1.0, 3.0), ((0.0, 1.0), (1.5, -0.5)))
    ref = _mp_moment(
        lambda s: s if s < 1 else (1.5 - 0.5 * s if s < 3 else 0),
        comp.coefficient,
        m,
        breaks=(1, 3),
    )
    assert c_mu(comp, m).value == pytest.approx(ref, rel=1e-10)


def test_moment_reports_error_estimate():
    res = c_mu(FastDecaySource(2.0, 1.0, 0.5, 1.0, 0.3), 1)
    assert res.error < 1e-8 * max(1.0, abs(res.value))


def test_sign_stabilization():
    assert sign_stabilization_time(ConstantSource(1.0), 10.0) == 0.0
    assert sign_stabilization_time(InverseLinearSource(1.0, 1.0), 10.0) == 0.0
    ramp = CompactSource.polynomial([1.0, -1.0], 2.0)
    assert sign_stabilization_time(ramp, 10.0) == pytest.approx(1.0, abs=1e-3)
    osc = FastDecaySource(1.0, 1.0, 1.0, 1.0, -math.pi / 2)
    assert sign_stabilization_time(osc, 50.0) is None


def test_sources_are_hashable_and_comparable():
    a = CompactSource.polynomial([1.0], 1.0)
    b = make_source("compact", breaks=[0.0, 1.0], pieces=[[1.0]])
    assert a == b and hash(a) == hash(b)
