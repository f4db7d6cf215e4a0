r"""Forward solution of the time-fractional diffusion equation by modal synthesis.

For a source :math:`f(x)\mu(t)` with zero initial data every mode evolves as

.. math::

    \psi_n(t) = \int_0^t K_n(t - s)\,\mu(s)\,ds, \qquad
    K_n(u) = u^{\alpha - 1} E_{\alpha,\alpha}(-\lambda_n u^\alpha),

and an observation is a linear (or quadratic) functional of
:math:`\sum_n a_n \psi_n(t) \phi_n(x)`.

The convolution is computed in the scaled lag :math:`z = \lambda^{1/\alpha} u`,
where the kernel becomes :math:`\lambda^{-1} k(z)` with
:math:`k(z) = z^{\alpha-1} E_{\alpha,\alpha}(-z^\alpha)` and
:math:`\int_0^\infty k = 1`. The source is split as
:math:`\mu = \mu_0 + \tilde\mu`. Once :math:`\lambda t^\alpha \ge 1` the
constant part is evaluated as :math:`1 - \int_{z_t}^\infty k`, so the distance
to the steady state keeps full absolute precision at large times.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from fracsource.mittag_leffler import MLParams, ml_eval, ml_eval_detailed
from fracsource.spectral import EigenSystem, Projection
from fracsource.temporal import (
    CompactSource,
    ConstantSource,
    FastDecaySource,
    TemporalSource,
)

DEFAULT_RTOL = 1.0e-12
MAX_DEPTH = 12

_XI20, _W20 = np.polynomial.legendre.leggauss(20)
_XI12, _W12 = np.polynomial.legendre.leggauss(12)

# panel variables: lag z, or tau = z**alpha near the origin
_Z, _TAU = 0, 1


class ForwardSolverWarning(UserWarning):
    """Raised for degraded accuracy of a forward computation."""


def validate_alpha(alpha: float, allow_integer: bool = False) -> float:
    """Check that *alpha* lies in ``(0, 1) U (1, 2)``.

    :arg allow_integer: also accept ``alpha = 1`` and ``alpha = 2``, where
        the kernel is elementary. This is only meant for checking the
        quadrature against closed forms.
    """
    alpha = float(alpha)
    ok = math.isfinite(alpha) and 0.0 < alpha < 2.0 and alpha != 1.0
    if allow_integer and alpha in (1.0, 2.0):
        ok = True
    if not ok:
        raise ValueError(f"alpha must lie in (0, 1) U (1, 2): got {alpha}")
    return alpha


def num_threads() -> int:
    """Worker count from ``FRACSOURCE_THREADS`` (default ``1``)."""
    raw = os.environ.get("FRACSOURCE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FRACSOURCE_THREADS must be an integer: got '{raw}'") from None
    return max(1, n)


# {{{ per-mode response


def _oscillation_end(alpha: float) -> float:
    """Lag beyond which the damped oscillation of ``k`` is below rounding."""
    if alpha <= 1.0:
        return 0.0
    return 40.0 / abs(math.cos(math.pi / alpha))


def _support(src: TemporalSource) -> float:
    return src.support if isinstance(src, CompactSource) else math.inf


@dataclass
class _Panels:
    a: list = field(default_factory=list)
    b: list = field(default_factory=list)
    var: list = field(default_factory=list)
    owner: list = field(default_factory=list)
    coef: list = field(default_factory=list)
    smooth_part: list = field(default_factory=list)

    def add(self, edges, var, owner, coef, smooth_part) -> None:
        edges = np.asarray(edges, dtype=np.float64)
        if edges.size < 2:
            return
        edges = edges[np.concatenate([[True], np.diff(edges) > 0])]
        n = edges.size - 1
        if n <= 0:
            return
        self.a.extend(edges[:-1])
        self.b.extend(edges[1:])
        self.var.extend([var] * n)
        self.owner.extend([owner] * n)
        self.coef.extend([coef] * n)
        self.smooth_part.extend([smooth_part] * n)

    def arrays(self):
        return (
            np.array(self.a),
            np.array(self.b),
            np.array(self.var, dtype=np.int8),
            np.array(self.owner, dtype=np.int64),
            np.array(self.coef),
            np.array(self.smooth_part, dtype=bool),
        )


def _geometric(lo: float, hi: float, ratio: float) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    n = max(1, math.ceil(math.log(hi / lo) / math.log(ratio)))
    return np.geomspace(lo, hi, n + 1)


def _head_edges(alpha: float, zmax: float) -> tuple[np.ndarray, np.ndarray]:
    """Panels near the origin: geometric in tau, then geometric/uniform in z."""
    z1 = min(zmax, 1.0)
    tau1 = z1**alpha
    tau_edges = np.concatenate([[0.0], tau1 * 4.0 ** np.arange(-14, 1)])

    z_edges = [z1]
    if zmax > z1:
        z_osc = min(zmax, _oscillation_end(alpha))
        if z_osc > z1:
            n = max(1, math.ceil((z_osc - z1) / 4.0))
            z_edges.extend(np.linspace(z1, z_osc, n + 1)[1:])
        z_edges.extend(_geometric(z_edges[-1], zmax, 2.0)[1:])
    return tau_edges, np.array(z_edges)


def _has_decaying_part(src: TemporalSource) -> bool:
    if isinstance(src, ConstantSource):
        return False
    return src.has_tail or isinstance(src, (CompactSource, FastDecaySource))


def _build_panels(
    alpha: float, lam: float, src: TemporalSource, times: np.ndarray
) -> tuple[_Panels, np.ndarray, np.ndarray]:
    ulam = lam ** (-1.0 / alpha)
    mu0 = src.coefficient(0)
    support = _support(src)
    panels = _Panels()
    offset = np.zeros(times.size)
    tail_from = np.full(times.size, np.nan)

    for i, t in enumerate(times):
        zt = t / ulam

        # {{{ constant part

        if mu0 != 0.0:
            use_tail = zt >= 1.0 and alpha < 1.9
            if use_tail:
                z_osc = max(zt, _oscillation_end(alpha))
                edges = [zt]
                if z_osc > zt:
                    n = max(1, math.ceil((z_osc - zt) / 4.0))
                    edges.extend(np.linspace(zt, z_osc, n + 1)[1:])
                zend = max(256.0 * zt, edges[-1], 50.0 ** (1.0 / alpha))
                edges.extend(_geometric(edges[-1], zend, 2.0)[1:])
                panels.add(edges, _Z, i, -mu0, True)
                offset[i] = mu0
                tail_from[i] = edges[-1]
            else:
                tau_e, z_e = _head_edges(alpha, zt)
                panels.add(tau_e, _TAU, i, mu0, True)
                panels.add(z_e, _Z, i, mu0, True)

        # }}}

        # {{{ decaying part, integrated over the lag z in [z_lo, zt]

        if _has_decaying_part(src):
            z_lo = max(0.0, zt - support / ulam)
            tau_e, z_e = _head_edges(alpha, zt)
            z1 = z_e[0]

            # resolve the source near s = 0 and at its kinks
            s_pts = src.scale * 2.0 ** np.arange(-8, 64)
            s_pts = s_pts[s_pts < t]
            s_pts = np.concatenate([s_pts, [b for b in src.breakpoints if b < t]])
            z_all = np.unique(np.concatenate([z_e, zt - s_pts / ulam, [z_lo]]))
            z_all = z_all[(z_all >= z_lo) & (z_all <= zt)]

            # points below z1 are handled in the tau variable
            low = z_all[z_all < z1]
            tau_all = np.unique(np.concatenate([tau_e, low**alpha]))
            tau_all = tau_all[tau_all >= z_lo**alpha]
            panels.add(tau_all, _TAU, i, 1.0, False)
            panels.add(z_all[z_all >= z1], _Z, i, 1.0, False)

        # }}}

    return panels, offset, tail_from


def _evaluate(
    alpha: float,
    lam: float,
    src: TemporalSource,
    times: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    var: np.ndarray,
    owner: np.ndarray,
    smooth_part: np.ndarray,
    xi: np.ndarray,
    wts: np.ndarray,
) -> np.ndarray:
    ulam = lam ** (-1.0 / alpha)
    mu0 = src.coefficient(0)
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * xi[None, :]

    is_tau = (var == _TAU)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(is_tau, np.power(x, 1.0 / alpha), x)
        arg = np.where(is_tau, x, np.power(z, alpha))
        # panel adaptivity controls the accuracy here, not per-point warnings
        e = ml_eval_detailed(MLParams(alpha, alpha), arg.ravel()).value.reshape(x.shape)
        f = np.where(is_tau, e / alpha, np.power(z, alpha - 1.0) * e)

    s = times[owner][:, None] - ulam * z
    s = np.maximum(s, 0.0)
    g = np.where(smooth_part[:, None], 1.0, np.asarray(src(s)) - mu0)
    return np.sum(f * g * wts[None, :], axis=1) * half


@dataclass(frozen=True)
class ModeResponse:
    values: np.ndarray
    errors: np.ndarray
    panels: int


def mode_response(
    alpha: float,
    lam: float,
    src: TemporalSource,
    times: np.ndarray,
    rtol: float = DEFAULT_RTOL,
) -> ModeResponse:
    r"""Quadrature for :math:`\psi(t) = \int_0^t K(t - s) \mu(s)\,ds` at many times."""
    alpha = validate_alpha(alpha, allow_integer=True)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if lam <= 0:
        raise ValueError(f"eigenvalue must be positive: got {lam}")
    if np.any(times <= 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be positive and finite")

    panels, offset, tail_from = _build_panels(alpha, lam, src, times)
    a, b, var, owner, coef, smooth = panels.arrays()

    total = np.zeros(times.size)
    err = np.zeros(times.size)
    scale = None
    depth = 0
    npanels = a.size
    while a.size:
        hi = _evaluate(alpha, lam, src, times, a, b, var, owner, smooth, _XI20, _W20)
        lo = _evaluate(alpha, lam, src, times, a, b, var, owner, smooth, _XI12, _W12)
        hi, lo = coef * hi, coef * lo
        diff = np.abs(hi - lo)

        if scale is None:
            count = np.bincount(owner, minlength=times.size)
            scale = np.bincount(owner, weights=np.abs(hi), minlength=times.size)
            scale = np.where(count > 0, scale / np.maximum(count, 1), 0.0)

        tol = rtol * np.maximum(np.abs(hi), scale[owner])
        done = (diff <= tol) | (depth >= MAX_DEPTH)
        np.add.at(total, owner[done], hi[done])
        np.add.at(err, owner[done], diff[done])

        keep = ~done
        mid = 0.5 * (a[keep] + b[keep])
        a = np.concatenate([a[keep], mid])
        b = np.concatenate([mid, b[keep]])
        var, owner, coef, smooth = (
            np.tile(arr[keep], 2) for arr in (var, owner, coef, smooth)
        )
        npanels += a.size
        depth += 1

    # closed-form remainder of the constant part beyond the last panel
    has_tail = np.isfinite(tail_from)
    if has_tail.any():
        zt = tail_from[has_tail]
        rem = ml_eval(MLParams(alpha, 1.0), zt**alpha)
        total[has_tail] -= src.coefficient(0) * rem

    values = (total + offset) / lam
    errors = (err + 64 * np.finfo(float).eps * (np.abs(total) + np.abs(offset))) / lam
    return ModeResponse(values, errors, npanels)


@lru_cache(maxsize=4096)
def _cached_response(
    alpha: float, lam: float, src: TemporalSource, times: tuple, rtol: float
) -> ModeResponse:
    return mode_response(alpha, lam, src, np.array(times), rtol)


def psi(
    alpha: float,
    lam: float,
    src: TemporalSource,
    times: np.ndarray | float,
    rtol: float = DEFAULT_RTOL,
) -> np.ndarray | float:
    """Modal response, cached per ``(alpha, lambda, source, times)``."""
    ta = np.asarray(times, dtype=np.float64)
    res = _cached_response(
        float(alpha), float(lam), src, tuple(np.atleast_1d(ta).tolist()), rtol
    )
    return float(res.values[0]) if ta.ndim == 0 else res.values.reshape(ta.shape)


def psi_constant_exact(alpha: float, lam: float, mu0: float, t: np.ndarray) -> np.ndarray:
    r"""Closed form :math:`\mu_0 \lambda^{-1} (1 - E_{\alpha,1}(-\lambda t^\alpha))`."""
    t = np.asarray(t, dtype=np.float64)
    return mu0 / lam * (1.0 - ml_eval(MLParams(alpha, 1.0), lam * t**alpha))


# }}}


# {{{ observations


@dataclass(frozen=True)
class Observation:
    """Where the solution is measured.

    :arg kind: ``"interior-point"``, ``"boundary-flux"`` or ``"subdomain-norm"``.
    :arg location: the point ``x0``; the endpoint ``0`` or ``1`` (index of
        ``x = 0`` or ``x = L``); or an interval ``(x1, x2)``.
    """

    kind: str
    location: float | int | tuple[float, float]

    def __post_init__(self) -> None:
        if self.kind not in ("interior-point", "boundary-flux", "subdomain-norm"):
            raise ValueError(f"unknown observation kind '{self.kind}'")

    @property
    def linear(self) -> bool:
        return self.kind != "subdomain-norm"

    def functional(self, system: EigenSystem) -> np.ndarray:
        """Values of the observation applied to each mode."""
        if self.kind == "interior-point":
            x0 = float(self.location)
            if not 0.0 < x0 < system.length:
                raise ValueError(f"observation point {x0} is not interior")
            return system.mode_values(np.array(x0))
        if self.kind == "boundary-flux":
            side = int(self.location)
            if side not in (0, 1):
                raise ValueError("boundary-flux location must be 0 (x = 0) or 1 (x = L)")
            return system.boundary_flux[:, side].copy()
        raise ValueError("subdomain-norm observations are not linear")

    def gram(self, system: EigenSystem) -> np.ndarray:
        x1, x2 = self.location
        if not 0.0 <= x1 < x2 <= system.length:
            raise ValueError(f"invalid subdomain ({x1}, {x2})")
        w = np.where((system.grid >= x1) & (system.grid <= x2), system.h, 0.0)
        return (system.modes * w) @ system.modes.T


@dataclass(frozen=True)
class ObservationTrace:
    times: np.ndarray
    values: np.ndarray
    tail_bound: np.ndarray
    quad_error: np.ndarray
    alpha: float
    observation: Observation
    n_modes: int
    weights: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    warnings: tuple[str, ...] = ()


def ml_bound_constant(alpha: float) -> float:
    r"""Numerical value of :math:`\sup_{x \ge 0} (1 + x) |E_{\alpha,\alpha}(-x)|`."""
    return _ml_bound_constant(float(alpha))


@lru_cache(maxsize=64)
def _ml_bound_constant(alpha: float) -> float:
    x = np.concatenate([[0.0], np.geomspace(1.0e-6, 1.0e8, 4000)])
    e = ml_eval_detailed(MLParams(alpha, alpha), x).value
    return float(np.max((1.0 + x) * np.abs(e)))


def _mode_bound(alpha: float, lam: np.ndarray, t: float) -> np.ndarray:
    # |psi_n(t)| <= C ||mu|| log(1 + lam t^a) / (a lam), and <= ||mu|| / lam if a < 1
    c = ml_bound_constant(alpha)
    b = c * np.log1p(lam * t**alpha) / (alpha * lam)
    if alpha < 1.0:
        b = np.minimum(b, 1.0 / lam)
    return b


def truncation_bound(
    system: EigenSystem,
    n_modes: int,
    defect: float,
    alpha: float,
    sup_mu: float,
    observation: Observation,
    times: np.ndarray,
    n_extra: int = 200_000,
) -> np.ndarray:
    """Bound on the observed contribution of the modes beyond ``n_modes``.

    By Cauchy-Schwarz the omitted coefficients enter only through
    ``sqrt(||f||^2 - sum a_n^2)``. Omitted eigenvalues are extrapolated by
    Weyl's law and the omitted functionals by the largest ratio seen among
    the computed modes.
    """
    if defect <= 0.0:
        return np.zeros_like(times)

    lam_N = system.lambdas[n_modes - 1]
    n = np.arange(n_modes + 1, n_modes + n_extra + 1, dtype=np.float64)
    lam = lam_N * (n / n_modes) ** 2

    if observation.kind == "interior-point":
        ell = np.full_like(lam, float(np.max(np.abs(system.modes))))
    elif observation.kind == "boundary-flux":
        r = np.max(np.abs(system.boundary_flux[:, int(observation.location)]) / np.sqrt(system.lambdas))
        ell = 1.05 * r * np.sqrt(lam)
    else:
        ell = None

    out = np.empty_like(times)
    for i, t in enumerate(times):
        mb = _mode_bound(alpha, lam, t)
        if ell is None:
            out[i] = math.sqrt(defect) * float(np.max(mb))
        else:
            out[i] = math.sqrt(defect) * math.sqrt(math.fsum((ell * mb) ** 2))
    return sup_mu * out


def solve(
    system: EigenSystem,
    f: Projection | np.ndarray,
    src: TemporalSource,
    alpha: float,
    observation: Observation,
    times: np.ndarray,
    n_modes: int | None = None,
    rtol: float = DEFAULT_RTOL,
    tolerance: float = 1.0e-6,
) -> ObservationTrace:
    """Observe the modal solution at the given times.

    :arg f: spatial coefficients, either a :class:`Projection` (whose Parseval
        defect feeds the truncation bound) or a plain coefficient array,
        which is treated as an exact finite expansion.
    :arg tolerance: relative level above which the truncation bound triggers
        a warning on the returned trace.
    """
    alpha = validate_alpha(alpha)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.ndim != 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")

    if isinstance(f, Projection):
        coeffs, defect = f.coeffs, f.parseval_defect
    else:
        coeffs, defect = np.asarray(f, dtype=np.float64), 0.0
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("spatial coefficients must be finite")

    n = coeffs.size if n_modes is None else int(n_modes)
    if not 0 < n <= min(coeffs.size, system.n_modes):
        raise ValueError(f"cannot use {n} modes")
    if n < coeffs.size:
        defect += float(np.sum(coeffs[n:] ** 2))
    coeffs = coeffs[:n]
    lambdas = system.lambdas[:n]

    active = np.flatnonzero(coeffs != 0.0)
    tkey = tuple(times.tolist())

    def run(k: int) -> ModeResponse:
        return _cached_response(alpha, float(lambdas[k]), src, tkey, rtol)

    with ThreadPoolExecutor(max_workers=num_threads()) as pool:
        responses = dict(zip(active, pool.map(run, active)))

    psi_mat = np.zeros((n, times.size))
    err_mat = np.zeros((n, times.size))
    for k, r in responses.items():
        psi_mat[k], err_mat[k] = r.values, r.errors

    trunc = truncation_bound(
        system.truncate(n), n, defect, alpha, src.sup_norm, observation, times
    )

    if observation.linear:
        weights = coeffs * observation.functional(system)[:n]
        values = np.array([math.fsum(weights * psi_mat[:, j]) for j in range(times.size)])
        qerr = np.abs(weights) @ err_mat
    else:
        weights = None
        G = observation.gram(system)[:n, :n] * np.outer(coeffs, coeffs)
        quad = np.einsum("it,ij,jt->t", psi_mat, G, psi_mat)
        values = np.sqrt(np.maximum(quad, 0.0))
        qerr = np.sqrt(np.abs(coeffs) @ err_mat**2 + 0.0) * np.sqrt(
            np.max(np.abs(observation.gram(system)))
        )

    notes = []
    ref = max(float(np.max(np.abs(values))), np.finfo(float).tiny)
    if np.any(trunc > tolerance * ref):
        msg = (
            f"truncation bound {float(np.max(trunc)):.3e} exceeds "
            f"{tolerance:g} x max|observation|"
        )
        notes.append(msg)
        warnings.warn(msg, ForwardSolverWarning, stacklevel=2)

    return ObservationTrace(
        times=times,
        values=values,
        tail_bound=trunc,
        quad_error=qerr,
        alpha=alpha,
        observation=observation,
        n_modes=n,
        weights=weights,
        lambdas=lambdas.copy(),
        warnings=tuple(notes),
    )


def steady_state(
    system: EigenSystem, coeffs: np.ndarray, mu0: float, observation: Observation
) -> float:
    """Large-time limit ``mu0 sum a_n l(phi_n) / lambda_n`` of a linear observation."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = coeffs.size
    w = coeffs * observation.functional(system)[:n]
    return mu0 * math.fsum(w / system.lambdas[:n])


# }}}


# {{{ diagnostics on a computed trace


@dataclass(frozen=True)
class DecayProbe:
    """Empirical decay of a trace over its last decade.

    .. attribute:: decays

        *True* if the fitted rate is at least ``t^{-N}``.

    .. attribute:: sign_changes

        Number of sign changes of the trace inside the last decade. A nonzero
        count means the slope describes an envelope only.
    """

    decays: bool
    slope: float
    stderr: float
    sign_changes: int


def decay_probe(trace: ObservationTrace, order: float, slack: float = 0.05) -> DecayProbe:
    """Fit ``log|value|`` against ``log t`` over the last decade of *trace*."""
    t = np.asarray(trace.times)
    v = np.asarray(trace.values)
    if t.size < 12 or t[-1] < 1.0e3 * t[0]:
        raise ValueError("decay probe needs at least 12 times spanning 3 decades")

    sel = t >= t[-1] / 10.0
    tw, vw = t[sel], v[sel]
    signs = np.sign(vw[vw != 0.0])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))

    nz = vw != 0.0
    if np.count_nonzero(nz) < 3:
        return DecayProbe(True, -math.inf, 0.0, changes)

    x, y = np.log(tw[nz]), np.log(np.abs(vw[nz]))
    (slope, icpt), cov = np.polyfit(x, y, 1, cov="unscaled")
    resid = y - (slope * x + icpt)
    dof = max(x.size - 2, 1)
    stderr = math.sqrt(max(float(cov[0, 0]) * float(resid @ resid) / dof, 0.0))
    decays = bool(slope <= -order * (1.0 - slack))
    return DecayProbe(decays, float(slope), stderr, changes)


def add_noise(
    trace: ObservationTrace, sigma: float, seed: int | None = None
) -> ObservationTrace:
    """Return a copy of *trace* with Gaussian noise of relative size *sigma*."""
    if sigma < 0:
        raise ValueError(f"noise level must be nonnegative: got {sigma}")
    rng = np.random.default_rng(seed)
    noisy = trace.values * (1.0 + sigma * rng.standard_normal(trace.values.size))
    return replace(trace, values=noisy)


# }}}
