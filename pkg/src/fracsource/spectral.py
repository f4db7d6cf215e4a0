"""Eigensystems of one-dimensional Sturm-Liouville operators.

Two builders are provided: the Dirichlet Laplacian on ``(0, L)`` in closed form
and a second-order finite-difference discretization of
``-(a u')' + q u`` with homogeneous Dirichlet conditions. Both return an
:class:`EigenSystem` whose modes are orthonormal in the discrete inner product
``(u, v)_h = h * sum(u * v)`` on a uniform grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import CubicSpline

ArrayFn = Callable[[np.ndarray], np.ndarray]

# one-sided fourth-order first derivative stencil
_D1 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


@dataclass(frozen=True)
class EigenSystem:
    """Leading eigenpairs of a Dirichlet Sturm-Liouville operator.

    :arg lambdas: increasing eigenvalues.
    :arg grid: uniform grid on ``[0, L]`` including both endpoints.
    :arg modes: array of shape ``(n_modes, grid.size)`` with mode values.
    :arg boundary_flux: outward conormal derivatives ``a du/dnu`` at ``x = 0``
        and ``x = L``, shape ``(n_modes, 2)``.
    """

    lambdas: np.ndarray
    grid: np.ndarray
    modes: np.ndarray
    boundary_flux: np.ndarray
    length: float
    kind: str
    closed_form: bool = False
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def n_modes(self) -> int:
        return self.lambdas.size

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.h * np.sum(u * v, axis=-1)

    def truncate(self, n: int) -> EigenSystem:
        if not 0 < n <= self.n_modes:
            raise ValueError(f"cannot truncate {self.n_modes} modes to {n}")
        return EigenSystem(
            self.lambdas[:n],
            self.grid,
            self.modes[:n],
            self.boundary_flux[:n],
            self.length,
            self.kind,
            self.closed_form,
            dict(self.metadata),
        )

    def mode_values(self, x: np.ndarray | float) -> np.ndarray:
        """Mode values at arbitrary points, shape ``(n_modes, *x.shape)``."""
        x = np.asarray(x, dtype=np.float64)
        if np.any((x < 0) | (x > self.length)):
            raise ValueError("evaluation points must lie in [0, L]")

        if self.closed_form:
            n = np.arange(1, self.n_modes + 1).reshape((-1,) + (1,) * x.ndim)
            return np.sqrt(2.0 / self.length) * np.sin(n * np.pi * x / self.length)

        return CubicSpline(self.grid, self.modes, axis=1)(x)

    def gram(self) -> np.ndarray:
        return self.h * (self.modes @ self.modes.T)


def build_dirichlet_laplacian(
    length: float = np.pi, n_modes: int = 32, grid_size: int | None = None
) -> EigenSystem:
    """Closed-form eigensystem of ``-u''`` on ``(0, length)``."""
    if not length > 0:
        raise ValueError(f"length must be positive: got {length}")
    if n_modes < 1:
        raise ValueError(f"n_modes must be positive: got {n_modes}")
    if grid_size is None:
        grid_size = max(1025, 16 * n_modes + 1)
    if grid_size <= n_modes + 1:
        raise ValueError("grid too coarse to resolve the requested modes")

    n = np.arange(1, n_modes + 1)
    grid = np.linspace(0.0, length, grid_size)
    k = n * np.pi / length
    modes = np.sqrt(2.0 / length) * np.sin(np.outer(k, grid))
    modes[:, 0] = 0.0
    modes[:, -1] = 0.0

    slope = np.sqrt(2.0 / length) * k
    flux = np.stack([-slope, slope * (-1.0) ** n], axis=1)
    return EigenSystem(
        lambdas=k**2,
        grid=grid,
        modes=modes,
        boundary_flux=flux,
        length=float(length),
        kind="dirichlet-laplacian",
        closed_form=True,
    )


def _as_profile(fn: ArrayFn | float, x: np.ndarray) -> np.ndarray:
    if callable(fn):
        return np.broadcast_to(np.asarray(fn(x), dtype=np.float64), x.shape).copy()
    return np.full_like(x, float(fn))


def sturm_liouville_matrix(
    a: ArrayFn | float, q: ArrayFn | float, length: float, grid_size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the interior finite-difference operator."""
    grid = np.linspace(0.0, length, grid_size)
    h = grid[1] - grid[0]
    mid = 0.5 * (grid[:-1] + grid[1:])
    a_mid = _as_profile(a, mid)
    bad = np.flatnonzero(~(a_mid > 0))
    if bad.size:
        raise ValueError(
            f"coefficient a must be positive: a({mid[bad[0]]:.6g}) = {a_mid[bad[0]]:.6g}"
        )
    q_int = _as_profile(q, grid[1:-1])
    bad = np.flatnonzero(~(q_int >= 0))
    if bad.size:
        raise ValueError(
            f"potential q must be nonnegative: q({grid[1 + bad[0]]:.6g}) = {q_int[bad[0]]:.6g}"
        )

    diag = (a_mid[:-1] + a_mid[1:]) / h**2 + q_int
    off = -a_mid[1:-1] / h**2
    return grid, diag, off


def build_sturm_liouville(
    a: ArrayFn | float = 1.0,
    q: ArrayFn | float = 0.0,
    length: float = np.pi,
    grid_size: int = 1025,
    n_modes: int = 32,
) -> EigenSystem:
    """Finite-difference eigensystem of ``-(a u')' + q u`` with Dirichlet data.

    Modes are normalized in the discrete inner product and signed so that
    their derivative at ``x = 0`` is positive, matching ``sin(n x)``.
    """
    if n_modes < 1:
        raise ValueError(f"n_modes must be positive: got {n_modes}")
    if grid_size < 8 * n_modes:
        raise ValueError(
            f"grid_size must be at least 8 * n_modes = {8 * n_modes}: got {grid_size}"
        )

    grid, diag, off = sturm_liouville_matrix(a, q, length, grid_size)
    h = grid[1] - grid[0]
    lambdas, vecs = linalg.eigh_tridiagonal(
        diag, off, select="i", select_range=(0, n_modes - 1)
    )
    if np.any(lambdas <= 0):
        raise ValueError("operator is not positive definite on this grid")

    modes = np.zeros((n_modes, grid.size))
    modes[:, 1:-1] = vecs.T / np.sqrt(h)
    sgn = np.sign(modes[:, 1])
    sgn[sgn == 0] = 1.0
    modes *= sgn[:, None]

    a0 = _as_profile(a, np.array([0.0]))[0]
    aL = _as_profile(a, np.array([length]))[0]
    d0 = modes[:, :5] @ _D1 / h
    dL = -(modes[:, ::-1][:, :5] @ _D1) / h
    flux = np.stack([-a0 * d0, aL * dL], axis=1)

    return EigenSystem(
        lambdas=lambdas,
        grid=grid,
        modes=modes,
        boundary_flux=flux,
        length=float(length),
        kind="sturm-liouville",
        metadata={"grid_size": grid_size},
    )


def solve_elliptic(
    a: ArrayFn | float,
    q: ArrayFn | float,
    rhs: ArrayFn | np.ndarray,
    length: float,
    grid_size: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``-(a w')' + q w = rhs`` with ``w(0) = w(L) = 0``."""
    grid, diag, off = sturm_liouville_matrix(a, q, length, grid_size)
    b = rhs(grid[1:-1]) if callable(rhs) else np.asarray(rhs)[1:-1]
    band = np.zeros((3, diag.size))
    band[0, 1:] = off
    band[1] = diag
    band[2, :-1] = off
    w = np.zeros_like(grid)
    w[1:-1] = linalg.solve_banded((1, 1), band, b)
    return grid, w


# {{{ projections


@dataclass(frozen=True)
class Projection:
    coeffs: np.ndarray
    norm_sq: float

    @property
    def parseval_defect(self) -> float:
        """``||f||^2 - sum a_n^2``; nonnegative up to rounding."""
        return max(self.norm_sq - float(np.sum(self.coeffs**2)), 0.0)


def project(f: ArrayFn | np.ndarray, system: EigenSystem) -> Projection:
    """Coefficients ``a_n = (f, phi_n)_h`` of a spatial profile."""
    vals = f(system.grid) if callable(f) else np.asarray(f, dtype=np.float64)
    if vals.shape != system.grid.shape:
        raise ValueError("profile must be sampled on the system grid")
    if not np.all(np.isfinite(vals)):
        raise ValueError("profile contains non-finite values")
    if abs(vals[0]) > 1.0e-12 * max(1.0, np.max(np.abs(vals))) or abs(
        vals[-1]
    ) > 1.0e-12 * max(1.0, np.max(np.abs(vals))):
        warnings.warn(
            "profile does not vanish at the boundary; boundary values are ignored",
            stacklevel=2,
        )
    vals = vals.copy()
    vals[0] = vals[-1] = 0.0
    return Projection(system.inner(system.modes, vals), float(system.inner(vals, vals)))


def synthesize(coeffs: np.ndarray, system: EigenSystem) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return coeffs @ system.modes[: coeffs.size]


# }}}


# {{{ diagnostics


@dataclass(frozen=True)
class WeylReport:
    slope: float
    constant: float
    max_rel_residual: float


def weyl_check(system: EigenSystem, min_modes: int = 20) -> WeylReport:
    """Fit ``lambda_n ~ c n^s`` in log-log coordinates.

    Only the upper half of the computed spectrum enters the fit, since lower
    order terms of the operator shift the first eigenvalues noticeably.
    """
    if system.n_modes < min_modes:
        raise ValueError(
            f"Weyl fit needs at least {min_modes} eigenvalues: got {system.n_modes}"
        )
    top = slice(system.n_modes // 2, None)
    n = np.arange(1, system.n_modes + 1, dtype=np.float64)[top]
    lam = system.lambdas[top]
    slope, intercept = np.polyfit(np.log(n), np.log(lam), 1)
    fitted = np.exp(intercept) * n**slope
    resid = np.abs(lam - fitted) / lam
    return WeylReport(float(slope), float(np.exp(intercept)), float(np.max(resid)))


@dataclass(frozen=True)
class BlindSpotReport:
    interior: np.ndarray
    boundary: tuple[bool, bool]
    warnings: tuple[str, ...] = ()


def blind_spots(
    system: EigenSystem, coeffs: np.ndarray, tol: float = 1.0e-10
) -> BlindSpotReport:
    """Locate points where every modal component ``a_n phi_n`` vanishes.

    Interior candidates are common roots of all active modes: grid nodes where
    every ``|a_n phi_n|`` is below ``tol`` plus sign changes of the first
    active mode refined by root finding and checked against the others. A
    point on the boundary is blind when every active modal flux vanishes.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    scale = max(float(np.max(np.abs(coeffs))), np.finfo(float).tiny)
    active = np.flatnonzero(np.abs(coeffs) > tol * scale)
    notes: list[str] = []
    if active.size == 0:
        notes.append("all coefficients vanish: every point is blind")
        return BlindSpotReport(system.grid[1:-1].copy(), (True, True), tuple(notes))

    comps = coeffs[active, None] * system.modes[active]
    amp = np.max(np.abs(comps), axis=0)
    ref = scale * float(np.max(np.abs(system.modes[active])))
    on_grid = np.flatnonzero(amp[1:-1] < tol * ref) + 1

    # refine sign changes of the first active mode
    first = active[0]
    vals = system.modes[first]
    cand: list[float] = []
    idx = np.flatnonzero(np.sign(vals[1:-2]) * np.sign(vals[2:-1]) < 0) + 1
    for i in idx:
        def g(x: float, _n: int = first) -> float:
            return float(system.truncate(_n + 1).mode_values(np.array(x))[_n])

        root = optimize.brentq(g, system.grid[i], system.grid[i + 1], xtol=1.0e-14)
        v = np.abs(coeffs[active] * system.mode_values(np.array(root))[active])
        if np.max(v) < tol * ref:
            cand.append(root)

    pts = np.sort(np.concatenate([system.grid[on_grid], cand]))
    if pts.size:
        keep = np.concatenate([[True], np.diff(pts) > 0.5 * system.h])
        pts = pts[keep]

    runs = np.split(on_grid, np.flatnonzero(np.diff(on_grid) > 1) + 1) if on_grid.size else []
    if any(r.size > 2 for r in runs):
        notes.append("a whole subinterval is blind: the profile vanishes there")

    bflux = np.max(np.abs(coeffs[active, None] * system.boundary_flux[active]), axis=0)
    bref = scale * float(np.max(np.abs(system.boundary_flux[active])))
    boundary = (bool(bflux[0] < tol * bref), bool(bflux[1] < tol * bref))
    return BlindSpotReport(pts, boundary, tuple(notes))


# }}}
