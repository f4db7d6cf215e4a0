"""Independent high-precision reference values used by the test-suite."""

from __future__ import annotations

import mpmath as mp


def ml_oracle(alpha: float, beta: float, x: float) -> mp.mpf:
    """Two-parameter Mittag-Leffler function E_{a,b}(-x) in extended precision.

    Uses the power series at enough working digits to absorb cancellation and,
    for large arguments, the optimally truncated algebraic expansion plus the
    exponentially small pole contributions.
    """
    a, b, x = mp.mpf(alpha), mp.mpf(beta), mp.mpf(x)
    if x == 0:
        return mp.rgamma(b)

    growth = float(x ** (1 / a))
    if growth < 1000:
        dps = int(growth / 2.3) + 40
        with mp.workdps(dps):
            total = mp.mpf(0)
            k = 0
            while True:
                term = (-x) ** k * mp.rgamma(a * k + b)
                total += term
                if k > 10 and abs(term) < mp.mpf(10) ** (-dps + 5) and a * k > 1.1 * growth + 5:
                    return +total
                k += 1

    with mp.workdps(40):
        # truncate where the envelope x^-k Gamma(a k + 1 - b) / pi is smallest;
        # individual terms dip near the poles of 1/Gamma and cannot be used
        total = mp.mpf(0)
        prev = mp.inf
        for k in range(1, 100000):
            env = x ** (-k) * mp.gamma(a * k + 1 - b) if a * k + 1 - b > 0 else mp.inf
            if env > prev and env != mp.inf:
                break
            total += -((-x) ** (-k)) * mp.rgamma(b - a * k)
            if env != mp.inf:
                prev = env
            if env < mp.mpf(10) ** -45:
                break
        if a > 1:
            s = x ** (1 / a) * mp.expjpi(1 / a)
            total += (2 / a) * mp.re(s ** (1 - b) * mp.exp(s))
        return total


def kernel_oracle(alpha: float, lam: float, s: float) -> mp.mpf:
    return mp.mpf(s) ** (mp.mpf(alpha) - 1) * ml_oracle(alpha, alpha, lam * mp.mpf(s) ** mp.mpf(alpha))


def psi_constant_oracle(alpha: float, lam: float, mu0: float, t: float) -> mp.mpf:
    """Response of one mode to a constant source, via the closed form in mpmath."""
    with mp.workdps(40):
        x = mp.mpf(lam) * mp.mpf(t) ** mp.mpf(alpha)
        return mp.mpf(mu0) / lam * (1 - ml_oracle(alpha, 1.0, x))


def shooting_eigenvalues(q, length: float, count: int) -> list[float]:
    """Dirichlet eigenvalues of ``-u'' + q u`` by shooting from ``x = 0``.

    The endpoint value ``u(L; lambda)`` is tabulated on a fine grid of
    ``lambda``, and its sign changes are refined with Brent's method.
    """
    import numpy as np
    from scipy.integrate import solve_ivp
    from scipy.optimize import brentq

    def end_value(lam: float) -> float:
        sol = solve_ivp(
            lambda x, y: [y[1], (q(x) - lam) * y[0]],
            (0.0, length),
            [0.0, 1.0],
            rtol=1e-12,
            atol=1e-14,
        )
        return float(sol.y[0, -1])

    top = (count + 1) ** 2 * np.pi**2 / length**2 + 10.0
    grid = np.linspace(0.1, top, 40 * count + 40)
    vals = [end_value(g) for g in grid]
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa * fb < 0:
            roots.append(brentq(end_value, a, b, xtol=1e-13))
        if len(roots) == count:
            break
    return roots
