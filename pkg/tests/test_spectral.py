from __future__ import annotations

import numpy as np
import pytest

from fracsource.spectral import (
    blind_spots,
    build_dirichlet_laplacian,
    build_sturm_liouville,
    project,
    solve_elliptic,
    synthesize,
    weyl_check,
)
from oracles import shooting_eigenvalues


def test_laplacian_closed_form():
    s = build_dirichlet_laplacian(np.pi, 10)
    assert np.allclose(s.lambdas, np.arange(1, 11) ** 2, rtol=1e-15)
    assert np.allclose(s.gram(), np.eye(10), atol=1e-12)
    # outward flux: -phi'(0) on the left, +phi'(L) on the right
    slope = np.sqrt(2 / np.pi) * np.arange(1, 11)
    assert np.allclose(s.boundary_flux[:, 0], -slope)
    assert np.allclose(s.boundary_flux[:, 1], slope * (-1.0) ** np.arange(1, 11))
    assert s.boundary_flux[1, 0] == pytest.approx(-2 * np.sqrt(2 / np.pi))


def test_sturm_liouville_reduces_to_laplacian():
    s = build_sturm_liouville(1.0, 0.0, np.pi, 2049, 6)
    assert np.allclose(s.lambdas, np.arange(1, 7) ** 2, rtol=2e-5)
    ref = build_dirichlet_laplacian(np.pi, 6, 2049)
    assert np.max(np.abs(s.modes - ref.modes)) < 1e-4
    assert np.allclose(s.boundary_flux, ref.boundary_flux, rtol=1e-4)


def test_shooting_reference_for_linear_potential():
    ref = shooting_eigenvalues(lambda x: x, 1.0, 4)
    s = build_sturm_liouville(1.0, lambda x: x, 1.0, 1025, 4)
    assert np.allclose(s.lambdas, ref, rtol=1e-4)


def test_second_order_grid_convergence():
    ref = np.array(shooting_eigenvalues(lambda x: x, 1.0, 3))
    errs = []
    for m in (257, 513, 1025):
        s = build_sturm_liouville(1.0, lambda x: x, 1.0, m, 3)
        errs.append(np.abs(s.lambdas - ref))
    ratio = errs[1] / errs[2]
    assert np.all((ratio > 3.5) & (ratio < 4.5))


def test_modes_orthonormal_and_sign_normalized():
    s = build_sturm_liouville(lambda x: 1 + 0.5 * x, lambda x: np.sin(x) ** 2, 2.0, 1025, 12)
    assert np.allclose(s.gram(), np.eye(12), atol=1e-10)
    assert np.all(s.modes[:, 1] > 0)
    assert np.all(np.diff(s.lambdas) > 0)


def test_variable_coefficients_rejected_with_location():
    with pytest.raises(ValueError, match=r"a\(.*\)"):
        build_sturm_liouville(lambda x: x - 0.5, 0.0, 1.0, 257, 4)
    with pytest.raises(ValueError, match=r"q\(.*\)"):
        build_sturm_liouville(1.0, lambda x: np.cos(3 * x), 1.0, 257, 4)


def test_grid_must_resolve_modes():
    with pytest.raises(ValueError, match="8 \\* n_modes"):
        build_sturm_liouville(1.0, 0.0, 1.0, 100, 20)


def test_weyl_law():
    assert weyl_check(build_dirichlet_laplacian(np.pi, 40)).slope == pytest.approx(2.0, rel=1e-12)
    s = build_sturm_liouville(1.0, np.sin, np.pi, 2049, 64)
    assert weyl_check(s).slope == pytest.approx(2.0, rel=0.02)
    with pytest.raises(ValueError):
        weyl_check(build_dirichlet_laplacian(np.pi, 8))


def test_projection_round_trip_and_parseval():
    s = build_dirichlet_laplacian(np.pi, 32)
    coeffs = np.array([1.0, -0.5, 0.25])
    p = project(synthesize(coeffs, s), s)
    assert np.allclose(p.coeffs[:3], coeffs, atol=1e-12)
    assert np.max(np.abs(p.coeffs[3:])) < 1e-12
    assert p.parseval_defect < 1e-12

    # x (pi - x) has coefficients 8 / (sqrt(2 pi) n^3) for odd n
    p = project(lambda x: x * (np.pi - x), s)
    n = np.arange(1, 33)
    exact = np.where(n % 2 == 1, 8 / (np.sqrt(2 * np.pi) * n**3), 0.0)
    assert np.allclose(p.coeffs, exact, atol=1e-6)
    m = np.arange(33, 200001, 2, dtype=float)
    tail = np.sum((8 / (np.sqrt(2 * np.pi) * m**3)) ** 2)
    assert p.parseval_defect == pytest.approx(tail, rel=1e-3)


def test_projection_warns_on_boundary_values():
    s = build_dirichlet_laplacian(np.pi, 8)
    with pytest.warns(UserWarning, match="boundary"):
        project(lambda x: np.ones_like(x), s)


def test_elliptic_solver_against_exact():
    # -(w')' = 1 on (0, 1): w = x (1 - x) / 2
    grid, w = solve_elliptic(1.0, 0.0, lambda x: np.ones_like(x), 1.0, 513)
    assert np.max(np.abs(w - grid * (1 - grid) / 2)) < 1e-12


def test_blind_spots():
    s = build_dirichlet_laplacian(np.pi, 8)
    rep = blind_spots(s, np.array([0.0, 1.0]))
    assert rep.interior.size == 1 and rep.interior[0] == pytest.approx(np.pi / 2, abs=1e-12)
    assert not any(rep.boundary)
    assert blind_spots(s, np.array([1.0, 1.0])).interior.size == 0
    rep = blind_spots(s, np.zeros(3))
    assert rep.boundary == (True, True) and rep.warnings


def test_mode_values_interpolate():
    s = build_sturm_liouville(1.0, 0.0, np.pi, 1025, 3)
    x = np.array([0.3, 1.7])
    exact = np.sqrt(2 / np.pi) * np.sin(np.outer(np.arange(1, 4), x))
    assert np.allclose(s.mode_values(x), exact, atol=1e-4)
    with pytest.raises(ValueError):
        s.mode_values(4.0)
