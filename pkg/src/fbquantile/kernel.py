"""Binomial tail kernel.

``tail_G(m, r, y)`` is P(Bin(m, r) <= floor(m*y)), the probability that the
fraction of sensors reporting a one is at most ``y``. Levels such as ``y``
are kept as :class:`fractions.Fraction` so that ``floor(m*y)`` is exact.

For ``m <= LOG_SPACE_MAX_M`` the probabilities are summed term by term from a
log-space pmf; above that the regularized incomplete beta function is used.
"""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational

import numpy as np
from scipy import special

LOG_SPACE_MAX_M = 10_000
LEVEL_MAX_DENOMINATOR = 10**6

_INF = float("inf")


def as_level(value, max_denominator: int = LEVEL_MAX_DENOMINATOR) -> Fraction:
    """Convert ``value`` to an exact rational level in [0, 1].

    Accepts Fractions, ints, ``"p/q"`` strings and floats. Floats (and
    decimal strings) are converted with denominator at most
    ``max_denominator``.
    """
    if isinstance(value, Fraction):
        level = value
    elif isinstance(value, Rational):
        level = Fraction(value)
    elif isinstance(value, str):
        text = value.strip()
        level = Fraction(text)
        if "/" not in text:
            level = level.limit_denominator(max_denominator)
    else:
        x = float(value)
        if not math.isfinite(x):
            raise ValueError(f"level must be finite, got {value!r}")
        level = Fraction(x).limit_denominator(max_denominator)
    if not 0 <= level <= 1:
        raise ValueError(f"level must lie in [0, 1], got {value!r}")
    return level


def _check(m: int, r) -> None:
    if int(m) != m or m < 1:
        raise ValueError(f"m must be an integer >= 1, got {m!r}")
    if not 0 <= r <= 1:
        raise ValueError(f"r must lie in [0, 1], got {r!r}")


def count_floor(m: int, y) -> int | float:
    """Exact ``floor(m*y)``; infinite ``y`` maps to +-inf."""
    if isinstance(y, float) and math.isinf(y):
        return y
    return math.floor(m * Fraction(y))


def _strict_count(m: int, t) -> int | float:
    """Largest count k with k < m*t, i.e. ``ceil(m*t) - 1``."""
    if isinstance(t, float) and math.isinf(t):
        return t
    return math.ceil(m * Fraction(t)) - 1


def binomial_pmf(m: int, r) -> np.ndarray:
    """pmf of Bin(m, r) on 0..m, evaluated in log space."""
    _check(m, r)
    r = float(r)
    i = np.arange(m + 1, dtype=float)
    if m > LOG_SPACE_MAX_M:
        from scipy.stats import binom

        return binom.pmf(i, m, r)
    log_choose = special.gammaln(m + 1) - special.gammaln(i + 1) - special.gammaln(m - i + 1)
    return np.exp(log_choose + special.xlogy(i, r) + special.xlog1py(m - i, -r))


def cdf_count(m: int, r, k) -> float:
    """P(Bin(m, r) <= k) for an integer (or infinite) count ``k``."""
    _check(m, r)
    if k < 0:
        return 0.0
    if k >= m:
        return 1.0
    k = int(k)
    if m > LOG_SPACE_MAX_M:
        return float(special.bdtr(k, m, float(r)))
    return float(np.sum(binomial_pmf(m, r)[: k + 1]))


def _partial_cdf_table(m: int, r: float) -> np.ndarray:
    """d/dr P(X <= k) for k = 0..m via Cov(X, 1{X <= k}) / (r (1 - r)).

    The covariance is summed over whichever tail keeps every term
    (i - m r) pmf_i of one sign: the lower tail for k < m r, otherwise minus
    the upper tail. This avoids cancellation deep in either tail.
    """
    pmf = binomial_pmf(m, r)
    terms = (np.arange(m + 1, dtype=float) - m * r) * pmf
    lower = np.cumsum(terms)
    upper = np.concatenate([np.cumsum(terms[::-1])[::-1][1:], [0.0]])
    k = np.arange(m + 1)
    return np.where(k < m * r, lower, -upper) / (r * (1.0 - r))


def cdf_count_partial_r(m: int, r, k) -> float:
    """d/dr P(Bin(m, r) <= k) through the covariance identity.

    Cov(X, 1{X <= k}) / (r (1 - r)); undefined at r in {0, 1}.
    """
    _check(m, r)
    if not 0 < r < 1:
        raise ValueError("derivative in r is singular at r = 0 or r = 1")
    if k < 0 or k >= m:
        return 0.0
    return float(_partial_cdf_table(m, float(r))[int(k)])


def tail_G(m: int, r, y) -> float:
    """G_m(r, y) = P(Bin(m, r) <= floor(m*y)).

    ``y`` outside [0, 1] is allowed and clamps naturally (0 below, 1 at or
    above 1).
    """
    return cdf_count(m, r, count_floor(m, y))


def tail_G_partial_r(m: int, r, y) -> float:
    """Partial derivative of ``tail_G`` in ``r``; always <= 0."""
    return cdf_count_partial_r(m, r, count_floor(m, y))


def tail_G_partial_limit(m: int, alpha) -> float:
    """Large-m limit of the derivative at r = alpha: -sqrt(m / (2 pi a(1-a)))."""
    alpha = as_level(alpha)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    a = float(alpha * (1 - alpha))
    return -math.sqrt(m / (2.0 * math.pi * a))


def tail_G_exact(m: int, r: Fraction, y) -> Fraction:
    """Exact rational G_m for rational ``r``."""
    _check(m, r)
    k = count_floor(m, y)
    if k < 0:
        return Fraction(0)
    if k >= m:
        return Fraction(1)
    return _cdf_exact(m, Fraction(r), int(k))


def _cdf_exact(m: int, r: Fraction, k: int) -> Fraction:
    if k < 0:
        return Fraction(0)
    if k >= m:
        return Fraction(1)
    q = 1 - r
    return sum((math.comb(m, i) * r**i * q ** (m - i) for i in range(k + 1)), Fraction(0))


# -- quantized expectation ---------------------------------------------------


def _cell_bounds(m: int, x, quantizer) -> list[tuple]:
    """Count bounds (lo, hi] per cell for Q applied to x - X/m.

    Cell j is (b_{j-1}, b_j], so x - X/m in it means
    x - b_j <= X/m < x - b_{j-1}: X ranges over (strict(x - b_j), strict(x - b_{j-1})].
    """
    edges = [-_INF, *quantizer.breakpoints, _INF]
    counts = [_strict_count(m, x - Fraction(e)) if not math.isinf(e) else -e for e in edges]
    # counts[j] is the largest X with X/m < x - edges[j]
    return [(counts[j + 1], counts[j]) for j in range(len(quantizer.outputs))]


def cell_probabilities(m: int, r, x, quantizer) -> np.ndarray:
    """P(Q(x - X/m) = output_j) for X ~ Bin(m, r), one entry per cell."""
    _check(m, r)
    x = Fraction(x)
    bounds = _cell_bounds(m, x, quantizer)
    cdf = np.concatenate([[0.0], np.cumsum(binomial_pmf(m, r))]) if m <= LOG_SPACE_MAX_M else None

    def F(k):
        if k < 0:
            return 0.0
        if k >= m:
            return 1.0
        if cdf is None:
            return float(special.bdtr(int(k), m, float(r)))
        return float(cdf[int(k) + 1])

    return np.array([max(F(hi) - F(lo), 0.0) for lo, hi in bounds])


def cell_probabilities_exact(m: int, r: Fraction, x, quantizer) -> list[Fraction]:
    r = Fraction(r)
    _check(m, r)
    q = 1 - r
    pmf = [math.comb(m, i) * r**i * q ** (m - i) for i in range(m + 1)]
    cdf = [Fraction(0)]
    for p in pmf:
        cdf.append(cdf[-1] + p)

    def F(k):
        if k < 0:
            return Fraction(0)
        if k >= m:
            return Fraction(1)
        return cdf[int(k) + 1]

    return [F(hi) - F(lo) for lo, hi in _cell_bounds(m, Fraction(x), quantizer)]


def quantized_expectation(m: int, r, x, quantizer) -> float:
    """G_{m,l}(r, x) = E[Q(x - X/m)] with X ~ Bin(m, r).

    Equals sum_k r_k [G(r, x - s_k) - G(r, x - s_{k+1})] except when a lattice
    value x - i/m sits exactly on a breakpoint; there the half-open cell
    convention of the quantizer decides (strict lower tails are used).
    """
    probs = cell_probabilities(m, r, x, quantizer)
    return float(np.dot(np.asarray(quantizer.outputs, dtype=float), probs))


def quantized_expectation_exact(m: int, r: Fraction, x, quantizer) -> Fraction:
    probs = cell_probabilities_exact(m, r, x, quantizer)
    return sum((Fraction(o) * p for o, p in zip(quantizer.outputs, probs)), Fraction(0))


def quantized_expectation_partial_r(m: int, r, x, quantizer) -> float:
    """d/dr of ``quantized_expectation`` by the per-cell covariance identity."""
    _check(m, r)
    if not 0 < r < 1:
        raise ValueError("derivative in r is singular at r = 0 or r = 1")
    table = _partial_cdf_table(m, float(r))

    def dF(k):
        if k < 0 or k >= m:
            return 0.0
        return float(table[int(k)])

    total = 0.0
    for out, (lo, hi) in zip(quantizer.outputs, _cell_bounds(m, Fraction(x), quantizer)):
        total += float(out) * (dF(hi) - dF(lo))
    return total
