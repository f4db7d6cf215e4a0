from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from fracsource.asymptotics import (
    FractionalOrder,
    Term,
    choose_J,
    choose_K,
    choose_M,
    compare,
    expansion_psi,
    expansion_sum,
    fit_series,
    lk_sequence,
    moments,
)
from fracsource.forward import mode_response
from fracsource.temporal import (
    CompactSource,
    ConstantSource,
    FastDecaySource,
    InverseLinearSource,
    RationalTailSource,
)


def test_l_sequences():
    assert lk_sequence(0.5, 5) == [1, 3, 5, 7, 9]
    assert lk_sequence(1.5, 5) == [1, 3, 5, 7, 9]
    assert lk_sequence(0.7, 10) == [1, 2, 3, 4, 5, 6, 7, 8, 9, 11]
    assert lk_sequence(2**-0.5, 6) == [1, 2, 3, 4, 5, 6]
    assert lk_sequence(1.25, 4) == [1, 2, 3, 5]


def test_rationality_detection():
    assert FractionalOrder(0.7).ratio == Fraction(7, 10)
    assert not FractionalOrder(math.sqrt(2) / 2).is_rational
    assert not FractionalOrder(math.pi / 4).is_rational
    for bad in (0.0, 1.0, 2.0, 2.5):
        with pytest.raises(ValueError, match=r"\(0, 1\) U \(1, 2\)"):
            FractionalOrder(bad)


def test_truncation_orders():
    # (J + 1) / 3 > N, and K large enough that both alpha l_{K+1} conditions hold
    assert choose_J(3.0) == 9
    assert choose_M(3.0) == 9
    assert choose_K(0.7, 3.0) == 6
    assert choose_K(0.5, 1.0) == 2  # needs l_{K+1} > 6: l = 1, 3, 5, 7
    for N in (0.5, 1.0, 2.3):
        J, M = choose_J(N), choose_M(N)
        assert (J + 1) / 3 > N >= J / 3
        assert (2 / 3) * (M + 2) > N and (1 / 3) * (M + 1) > N


def test_constant_source_coefficients():
    # psi = mu0 / lam (1 - E_{a,1}(-lam t^a)) and E has the algebraic expansion
    # sum_k (-1)^(k+1) (lam t^a)^-k / Gamma(1 - a k)
    alpha, mu0 = 0.7, 2.0
    series = expansion_psi(alpha, ConstantSource(mu0), N=2.0, K=2)
    assert series.find(0.0, False).coeff == pytest.approx(mu0)
    assert series.find(0.0, False).lambda_power == -1.0
    for k in (1, 2):
        tm = series.find(-k * alpha, False)
        assert tm.lambda_power == -k - 1.0
        assert tm.coeff == pytest.approx(-mu0 * (-1) ** (k + 1) / math.gamma(1 - alpha * k), rel=1e-14)
    assert series.explicit_mask.all()
    assert series.order == pytest.approx(min(2.0, 3 * alpha))


def test_series_has_unique_keys_and_respects_N():
    for alpha in (0.5, 0.7, 1.5, 2**-0.5):
        for src in (ConstantSource(1.0), InverseLinearSource(1.0, 1.0), RationalTailSource((1.0, 1.0, -1.0))):
            s = expansion_psi(alpha, src, N=2.5)
            keys = [tm.key for tm in s.terms]
            assert len(keys) == len(set(keys))
            assert all(tm.t_power > -2.5 for tm in s.terms)
            # pure placeholders carry no coefficient until fitted
            assert all(tm.coeff == 0.0 for tm in s.terms if tm.label.startswith("b[") and "+" not in tm.label)


def test_rational_order_merges_colliding_exponents():
    # alpha = 1/2: l = 1, j = 2 and l = 3, j = 1 both give t^-2.5, with
    # different powers of lambda, so they merge once lambda is folded in
    s = expansion_psi(0.5, InverseLinearSource(1.0, 1.0), N=3.0, K=2)
    assert len([tm for tm in s.terms if tm.t_power == -2.5 and tm.has_log]) == 2
    folded = s.fold(2.0)
    logs = [tm for tm in folded.terms if tm.t_power == -2.5 and tm.has_log]
    assert len(logs) == 1 and "+" in logs[0].label
    parts = [tm for tm in s.terms if tm.t_power == -2.5 and tm.has_log]
    assert logs[0].coeff == pytest.approx(sum(tm.coeff * 2.0**tm.lambda_power for tm in parts))


def test_fold_absorbs_lambda():
    s = expansion_psi(0.7, ConstantSource(1.0), N=2.0, K=2)
    lam = 3.0
    t = np.geomspace(10, 1000, 5)
    assert np.allclose(s.fold(lam).evaluate(t), s.evaluate(t, lam), rtol=1e-14)


def test_term_basis():
    tm = Term(2.0, -1.0, -0.5, True, True)
    t = np.array([4.0])
    assert tm.basis(t, 2.0)[0] == pytest.approx(0.5 * 0.5 * math.log(4.0))


@pytest.mark.parametrize(
    ("alpha", "src", "K"),
    [
        (0.7, ConstantSource(1.0), 1),
        (0.7, ConstantSource(1.0), 2),
        (1.3, ConstantSource(1.0), 1),
        (0.6, CompactSource.polynomial([1.0], 1.0), 1),
        (0.6, FastDecaySource(1.0, 1.0, 1.0), 1),
    ],
)
def test_expansion_fidelity(alpha, src, K):
    # the residual decays like the first omitted term
    lam = 2.0
    t = np.geomspace(1e2, 1e5, 25)
    vals = mode_response(alpha, lam, src, t).values
    series = expansion_psi(alpha, src, N=10.0, K=K, J=1, M=0)
    cmp = compare(t, vals, series, lam)
    assert cmp.slope_matches(0.1), (cmp.slope, cmp.expected_slope)


def test_placeholder_fit_with_reference():
    alpha, lam = 0.7, 1.0
    src = InverseLinearSource(1.0, 1.0)
    t = np.geomspace(1e2, 1e6, 41)
    vals = mode_response(alpha, lam, src, t).values
    lo = expansion_psi(alpha, src, N=2.0, K=1, J=1, M=0)
    hi = expansion_psi(alpha, src, N=3.5, K=3, J=3, M=2)
    cmp = compare(t, vals, lo, lam, reference=hi)
    # the explicit logarithmic term is exact; the residual is set by t^-2 and beyond
    assert cmp.slope < -1.6


def test_fit_series_recovers_synthetic_coefficients():
    s = expansion_psi(0.7, ConstantSource(1.0), N=2.0, K=2).fold(1.0)
    t = np.geomspace(10, 1e5, 40)
    truth = np.array([1.5, -0.4, 0.2])
    data = s.with_coefficients(truth).evaluate(t)
    fitted = fit_series(t, data, s.with_coefficients(np.zeros(3)), free="all")
    assert np.allclose(fitted.coefficients, truth, rtol=1e-10)
    with pytest.raises(ValueError):
        fit_series(t, data, s, free="some")


def test_moments_and_expansion_sum():
    lambdas = np.array([1.0, 4.0, 9.0])
    weights = np.array([1.0, -0.5, 0.25])
    A = moments(lambdas, weights, [0.0, 1.0])
    assert A[0] == pytest.approx(1 - 0.125 + 0.25 / 9)
    assert A[1] == pytest.approx(1 - 0.5 / 16 + 0.25 / 81)

    single = expansion_psi(0.7, ConstantSource(1.0), N=2.0, K=2)
    total = expansion_sum(0.7, ConstantSource(1.0), lambdas, weights, N=2.0, K=2)
    t = np.geomspace(10, 1e4, 7)
    direct = sum(w * single.evaluate(t, lam) for lam, w in zip(lambdas, weights))
    assert np.allclose(total.evaluate(t), direct, rtol=1e-13)
    assert all(tm.lambda_power == 0.0 for tm in total.terms)


def test_vanishing_moment_removes_leading_term():
    # w_2 = -16 w_1 makes A_1 = w_1 / 1 + w_2 / 16 vanish
    alpha = 0.7
    lambdas = np.array([1.0, 4.0])
    weights = np.array([1.0, -16.0])
    series = expansion_sum(alpha, ConstantSource(1.0), lambdas, weights, N=2.0, K=3)
    assert series.find(-alpha, False).coeff == pytest.approx(0.0, abs=1e-15)
    assert series.find(-2 * alpha, False).coeff != 0.0

    t = np.geomspace(1e2, 1e5, 20)
    vals = sum(w * mode_response(alpha, lam, ConstantSource(1.0), t).values for lam, w in zip(lambdas, weights))
    decay = np.abs(vals - series.find(0.0, False).coeff)
    slope = np.polyfit(np.log(t), np.log(decay), 1)[0]
    assert slope == pytest.approx(-2 * alpha, rel=0.02)


def test_expansion_sum_rejects_bad_input():
    with pytest.raises(ValueError):
        expansion_sum(0.7, ConstantSource(1.0), np.array([1.0, 4.0]), np.array([1.0]), N=1.0)
    with pytest.raises(ValueError, match="converge"):
        expansion_sum(0.7, ConstantSource(1.0), np.array([1.0, 4.0]), np.array([1.0, np.inf]), N=1.0)
    with pytest.raises(ValueError):
        expansion_psi(0.7, ConstantSource(1.0), N=0.0)


def test_compare_requires_three_decades():
    s = expansion_psi(0.7, ConstantSource(1.0), N=2.0, K=1)
    t = np.geomspace(10, 1000, 10)
    with pytest.raises(ValueError, match="three decades"):
        compare(t, np.ones_like(t), s)


def test_perturbed_coefficient_shows_in_slope():
    alpha, lam = 0.7, 2.0
    t = np.geomspace(1e3, 1e6, 25)
    vals = mode_response(alpha, lam, ConstantSource(1.0), t).values
    series = expansion_psi(alpha, ConstantSource(1.0), N=10.0, K=1).fold(lam)
    coeffs = series.coefficients.copy()
    coeffs[1] *= 1.1
    cmp = compare(t, vals, series.with_coefficients(coeffs))
    assert cmp.slope == pytest.approx(-alpha, rel=0.02)
