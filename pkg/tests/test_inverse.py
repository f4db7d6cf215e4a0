from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from fracsource.asymptotics import lk_sequence, moments
from fracsource.forward import Observation, solve
from fracsource.inverse import (
    BlindSpotError,
    IllConditionedError,
    TailStructure,
    check_window,
    estimate_kappa,
    fit_tail,
    invert_spatial,
    recover_spatial,
    recover_temporal,
)
from fracsource.spectral import build_dirichlet_laplacian
from fracsource.temporal import CompactSource, ConstantSource, InverseLinearSource

T_TAIL = np.geomspace(1e2, 1e6, 41)
COEFFS = np.array([1.0, -0.5, 0.25])


@pytest.fixture(scope="module")
def system():
    return build_dirichlet_laplacian(np.pi, 8)


def test_fit_recovers_synthetic_tail():
    t = np.geomspace(1.0, 1e4, 40)
    fit = fit_tail(t, 3 + 2 * t**-0.7, 0.7, TailStructure.constant_only(), K=1)
    assert fit.coefficient(0.0) == pytest.approx(3.0, abs=1e-6)
    assert fit.coefficient(-0.7) == pytest.approx(2.0, abs=1e-6)
    assert fit.trusted and fit.condition < 100


def test_fit_of_zero_trace_is_zero():
    t = np.geomspace(1.0, 1e4, 40)
    fit = fit_tail(t, np.zeros_like(t), 0.7, TailStructure.unknown(), K=2)
    assert np.all(fit.coeffs == 0.0)


def test_fit_window_requirements():
    check_window(np.geomspace(1.0, 1e3, 24))
    with pytest.raises(ValueError, match="decades"):
        check_window(np.geomspace(1.0, 1e2, 40))
    with pytest.raises(ValueError, match="per decade"):
        check_window(np.geomspace(1.0, 1e4, 20))
    t = np.geomspace(1.0, 1e4, 40)
    with pytest.raises(ValueError, match="basis terms"):
        fit_tail(t, t**-0.7, 0.7, TailStructure.unknown(), K=12, J=3, M=4)


def test_fit_flags_ill_conditioning():
    t = np.geomspace(1.0, 1e4, 40)
    fit = fit_tail(t, 1 + t**-0.7, 0.7, TailStructure.unknown(), K=3, cond_limit=10.0)
    assert not fit.trusted and fit.condition > 10.0


def test_fit_of_simulated_trace(system):
    obs = Observation("interior-point", 1.0)
    trace = solve(system, np.array([1.0]), ConstantSource(1.0), 0.7, obs, T_TAIL)
    fit = fit_tail(trace.times, trace.values, 0.7, TailStructure.constant_only(), K=6)
    phi = math.sqrt(2 / math.pi) * math.sin(1.0)
    assert fit.coefficient(0.0) == pytest.approx(phi, rel=1e-9)
    assert fit.coefficient(-0.7) == pytest.approx(-phi / math.gamma(0.3), rel=1e-6)


def test_moment_inversion_single_mode():
    lam = np.array([4.0])
    A = np.array([0.3])
    res = recover_spatial(A, [1.0], lam)
    assert res.coeffs[0] == pytest.approx(0.3 * 4.0**2)


@pytest.mark.parametrize("n", range(1, 9))
def test_moment_inversion_identity(n):
    lam = np.arange(1, n + 1, dtype=float) ** 2
    b = np.array([(-0.7) ** k for k in range(n)])
    gammas = [0] + lk_sequence(0.7, n + 3)
    res = recover_spatial(moments(lam, b, gammas), gammas, lam)
    assert not res.partial
    assert np.max(np.abs(res.coeffs - b)) < 1e-5
    assert np.max(np.abs(res.coeffs - b)) < (1e-14 * res.condition + 1e-13)


def test_moment_inversion_of_zero_moments():
    lam = np.array([1.0, 4.0, 9.0])
    res = recover_spatial(np.zeros(5), [0, 1, 2, 3, 4], lam)
    assert np.all(res.coeffs == 0.0)


def test_moment_inversion_drops_modes_when_ill_conditioned():
    lam = np.arange(1, 7, dtype=float) ** 2
    b = np.ones(6)
    gammas = [0, 1, 2, 3, 4, 5, 6]
    res = recover_spatial(moments(lam, b, gammas), gammas, lam, cond_limit=1e3)
    assert res.partial and res.notes
    assert res.condition <= 1e3
    assert np.isnan(res.coeffs[-1])
    with pytest.raises(IllConditionedError):
        recover_spatial(moments(lam, b, gammas), gammas, lam, cond_limit=0.5)


def test_spatial_round_trip_from_trace(system):
    obs = Observation("interior-point", 1.0)
    trace = solve(system, COEFFS, ConstantSource(2.0), 0.7, obs, T_TAIL)
    res = invert_spatial(trace, 2.0, obs.functional(system), n_recover=3)
    assert np.max(np.abs(res.coeffs - COEFFS)) < 1e-4
    assert res.recovered.all() and not res.partial

    flux = Observation("boundary-flux", 1)
    trace = solve(system, COEFFS, ConstantSource(2.0), 0.7, flux, T_TAIL)
    res = invert_spatial(trace, 2.0, flux.functional(system), n_recover=3)
    assert np.max(np.abs(res.coeffs - COEFFS)) < 1e-3


def test_spatial_blind_spot(system):
    obs = Observation("interior-point", math.pi / 2)
    trace = solve(system, np.array([0.0, 1.0]), ConstantSource(1.0), 0.7, obs, T_TAIL)
    with pytest.raises(BlindSpotError):
        invert_spatial(trace, 1.0, obs.functional(system), n_recover=2)


def test_spatial_rejects_nonlinear_observation_and_zero_mu0(system):
    obs = Observation("interior-point", 1.0)
    trace = solve(system, COEFFS, ConstantSource(1.0), 0.7, obs, T_TAIL)
    with pytest.raises(ValueError):
        invert_spatial(trace, 0.0, obs.functional(system))
    norm = replace(trace, observation=Observation("subdomain-norm", (0.0, 1.0)))
    with pytest.raises(ValueError):
        invert_spatial(norm, 1.0, obs.functional(system))


def test_temporal_tail_coefficient(system):
    obs = Observation("interior-point", 1.0)
    src = InverseLinearSource(1.0, 1.0)
    trace = solve(system, COEFFS, src, 0.7, obs, T_TAIL)
    structure = TailStructure(False, True, True)
    fit = fit_tail(trace.times, trace.values, 0.7, structure, K=3, J=2)
    rec = recover_temporal(fit, system.lambdas, COEFFS, obs.functional(system), structure)
    assert rec.mu[1].value == pytest.approx(1.0, rel=1e-4)
    assert rec.mu[1].exact and rec.mu[1].samples == 3
    assert rec.mu0 is None
    # c_mu shares its exponent with unknown placeholders: an interval only
    assert not rec.c_mu[0].exact and rec.notes


def test_temporal_moment_of_compact_source(system):
    obs = Observation("interior-point", 1.0)
    src = CompactSource.polynomial([0.0, 1.0], 1.0)  # mu = t on [0, 1]
    trace = solve(system, COEFFS, src, 0.7, obs, T_TAIL)
    structure = TailStructure(False, True, False)
    fit = fit_tail(trace.times, trace.values, 0.7, structure, K=3, J=2)
    rec = recover_temporal(fit, system.lambdas, COEFFS, obs.functional(system), structure)
    assert rec.c_mu[0].exact
    assert rec.c_mu[0].value == pytest.approx(0.5, rel=1e-6)
    # the next moment comes from terms two orders further down
    assert rec.c_mu[1].value == pytest.approx(1 / 3, rel=1e-2)


def test_temporal_blind_spot(system):
    obs = Observation("interior-point", math.pi / 2)
    trace = solve(system, np.array([0.0, 1.0]), InverseLinearSource(1.0, 1.0), 0.7, obs, T_TAIL)
    structure = TailStructure(False, True, True)
    fit = fit_tail(trace.times, trace.values, 0.7, structure, K=2)
    with pytest.raises(BlindSpotError):
        recover_temporal(fit, system.lambdas, np.array([0.0, 1.0]), obs.functional(system), structure)


ALPHA_IRR = 2**-0.5


@pytest.fixture(scope="module")
def kappa_traces(system):
    obs = Observation("interior-point", 0.7)
    src = InverseLinearSource(1.0, 1.0)
    a = solve(system, COEFFS, src, ALPHA_IRR, obs, T_TAIL)
    b = solve(system, COEFFS / 2, InverseLinearSource(2.0, 1.0), ALPHA_IRR, obs, T_TAIL)
    return a, b


def test_kappa_of_proportional_pair(kappa_traces):
    a, b = kappa_traces
    est = estimate_kappa(a, b, TailStructure(False, True, True))
    assert est.proportional
    assert est.kappa == pytest.approx(2.0, abs=1e-3)
    assert est.spread <= 1e-3


def test_kappa_invariant_under_common_scaling(kappa_traces):
    a, b = kappa_traces
    structure = TailStructure(False, True, True)
    base = estimate_kappa(a, b, structure)
    scaled = estimate_kappa(
        replace(a, values=3 * a.values, weights=3 * a.weights),
        replace(b, values=3 * b.values, weights=3 * b.weights),
        structure,
    )
    assert scaled.kappa == pytest.approx(base.kappa, rel=1e-9)
    assert scaled.proportional


def test_kappa_negative_control(system):
    obs = Observation("interior-point", 0.7)
    src = InverseLinearSource(1.0, 1.0)
    a = solve(system, np.array([1.0]), src, ALPHA_IRR, obs, T_TAIL)
    b = solve(system, np.array([0.0, 1.0]), src, ALPHA_IRR, obs, T_TAIL)
    est = estimate_kappa(a, b, TailStructure(False, True, True))
    assert not est.proportional
    assert est.spread > 1e-3


def test_kappa_preconditions(system, kappa_traces):
    a, b = kappa_traces
    with pytest.raises(ValueError, match="weights"):
        estimate_kappa(replace(a, weights=None), b)
    obs = Observation("interior-point", 0.7)
    r1 = solve(system, COEFFS, InverseLinearSource(1.0, 1.0), 0.7, obs, T_TAIL)
    with pytest.raises(ValueError, match="irrational"):
        estimate_kappa(r1, r1)
