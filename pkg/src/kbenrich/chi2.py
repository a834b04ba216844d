"""Chi-squared CDF and quantiles from the regularized incomplete gamma function."""

from __future__ import annotations

import math

_EPS = 1e-15
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    # modified Lentz for the upper tail Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """P(a, x) = gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_contfrac(a, x)


def chi2_cdf(x: float, df: float) -> float:
    return regularized_gamma_p(df / 2.0, x / 2.0)


def chi2_ppf(q: float, df: float, tol: float = 1e-10) -> float:
    """Inverse CDF: the x with P(X <= x) = q, by bisection."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if df <= 0:
        raise ValueError("df must be positive")
    lo, hi = 0.0, max(1.0, df)
    while chi2_cdf(hi, df) < q:
        lo, hi = hi, hi * 2.0
    # relative width, so tiny lower quantiles (df = 1) keep full precision
    while hi - lo > tol * hi and hi > 1e-300:
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_critical(tail_area: float, df: float) -> float:
    """Table-style critical value: the x with upper-tail area ``tail_area``."""
    return chi2_ppf(1.0 - tail_area, df)
