r"""Modified Bessel functions of the second kind for integer order.

``K_j`` is evaluated from its integral representation

.. math::

   K_j(\gamma) = \frac{2^j j!}{(2j)!}\,\gamma^{-j}
       \int_\gamma^\infty e^{-\lambda}(\lambda^2-\gamma^2)^{j-1/2}\,d\lambda

which after ``lambda = gamma cosh(u)`` becomes the smooth integral
``coef * gamma**j * int_0^inf exp(-gamma cosh u) sinh(u)**(2j) du``.
Below ``policy.asymptotic_switch`` that integral is computed by adaptive
Gauss-Kronrod quadrature; above it the large-argument series

.. math::

   K_j(\gamma) \simeq \sqrt{\frac{\pi}{2\gamma}} e^{-\gamma}
       \sum_m A_{j,m}\gamma^{-m},\qquad
   A_{j,m} = \prod_{k=1}^m \frac{4j^2-(2k-1)^2}{8^m m!}

is summed. Internally everything is carried as ``exp(gamma) * K_j`` so that
ratios stay finite far beyond the underflow point of ``exp(-gamma)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, DomainError, UsageError

__all__ = [
    "EvalPolicy",
    "DEFAULT_POLICY",
    "bessel_k",
    "bessel_k_scaled",
    "bessel_k_ratio",
    "bessel_k_derivative",
    "bessel_k_asymptotic",
    "tail_integral_k1_over_y",
    "tail_integral_scaled",
    "asymptotic_coefficient",
    "tail_coefficient",
    "series_terms",
    "tail_switch",
]


@dataclass(frozen=True)
class EvalPolicy:
    """Accuracy and method-selection knobs.

    Tolerances apply to the scaled quantity ``exp(gamma) * K_j(gamma)``.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_quadrature_nodes: int = 20000
    asymptotic_switch: float = 30.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise UsageError("abs_tol and rel_tol must be positive")
        if not self.asymptotic_switch >= 10:
            raise UsageError("asymptotic_switch must be >= 10")
        if self.max_quadrature_nodes < 15:
            raise UsageError("max_quadrature_nodes must allow one Kronrod rule")


DEFAULT_POLICY = EvalPolicy()

# 7-point Gauss / 15-point Kronrod rule on [-1, 1].
_XK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_XG, _WG = np.polynomial.legendre.leggauss(7)
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_WKRON = np.concatenate([_WK[:-1], _WK[::-1]])
# Gauss nodes sit at odd positions of the Kronrod grid.
_WGAUSS = np.zeros(15)
_WGAUSS[1::2] = _WG


def _gk15(f, a, b):
    half = 0.5 * (b - a)
    fx = f(0.5 * (a + b) + half * _NODES)
    k = half * float(_WKRON @ fx)
    g = half * float(_WGAUSS @ fx)
    return k, abs(k - g)


def _adaptive_gk(f, a, b, policy, pieces=8):
    """Globally adaptive Gauss-Kronrod integration of ``f`` over ``[a, b]``."""
    edges = np.linspace(a, b, pieces + 1)
    heap = []
    total = 0.0
    err = 0.0
    nodes = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, e = _gk15(f, lo, hi)
        nodes += 15
        total += val
        err += e
        heapq.heappush(heap, (-e, lo, hi, val))
    eps = np.finfo(float).eps
    while err > max(policy.abs_tol, policy.rel_tol * abs(total)):
        if err <= 50 * eps * abs(total):
            break
        if nodes + 30 > policy.max_quadrature_nodes:
            raise ConvergenceError(
                f"quadrature did not converge within {policy.max_quadrature_nodes} nodes "
                f"(estimate {total!r}, error {err!r})"
            )
        neg_e, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        v1, e1 = _gk15(f, lo, mid)
        v2, e2 = _gk15(f, mid, hi)
        nodes += 30
        total += v1 + v2 - val
        err += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
    # Re-sum to shed accumulated update round-off.
    total = math.fsum(item[3] for item in heap)
    return total


def _upper_limit(logf, drop=45.0):
    """Find ``U`` beyond which ``exp(logf)`` is negligible relative to its peak."""
    upper = 1.0
    for _ in range(200):
        grid = np.linspace(0.0, upper, 129)[1:]
        vals = logf(grid)
        peak = np.max(vals)
        if vals[-1] < peak - drop and np.argmax(vals) < len(vals) - 1:
            return upper
        upper *= 1.5
    raise ConvergenceError("could not bound the integration range")


def _check_gamma(gamma):
    gamma = float(gamma)
    if not gamma > 0 or math.isnan(gamma):
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    return gamma


def _check_order(j):
    if isinstance(j, bool) or not isinstance(j, (int, np.integer)) or j < 0:
        raise UsageError(f"order must be a non-negative integer, got {j!r}")
    return int(j)


@lru_cache(maxsize=None)
def asymptotic_coefficient(j: int, m: int) -> Fraction:
    """Exact coefficient ``A_{j,m}`` of the large-argument series."""
    if m == 0:
        return Fraction(1)
    return asymptotic_coefficient(j, m - 1) * Fraction(4 * j * j - (2 * m - 1) ** 2, 8 * m)


@lru_cache(maxsize=None)
def tail_coefficient(k: int) -> Fraction:
    """Exact coefficient ``t_k`` of the tail series.

    ``int_gamma^inf K_1(y)/y dy ~ sqrt(pi/2) e^{-gamma} gamma^{-3/2} sum_k t_k gamma^{-k}``.
    """
    total = Fraction(0)
    for m in range(k + 1):
        n = k - m
        rising = Fraction(1)
        s = Fraction(3, 2) + m
        for i in range(n):
            rising *= s + i
        total += asymptotic_coefficient(1, m) * (-1) ** n * rising
    return total


def series_terms(policy: EvalPolicy = DEFAULT_POLICY) -> int:
    """Number of series terms used at and above the switch point.

    The series is divergent; terms keep shrinking until ``m ~ 2 gamma``, so
    truncating near ``2 * switch`` is close to optimal at the switch.
    """
    return int(min(40, max(4, math.floor(2 * policy.asymptotic_switch))))


def _horner(coeffs, u):
    out = np.zeros_like(u, dtype=float) + coeffs[-1]
    for c in coeffs[-2::-1]:
        out = out * u + c
    return out


@lru_cache(maxsize=None)
def _bessel_series(j, n):
    return tuple(float(asymptotic_coefficient(j, m)) for m in range(n))


@lru_cache(maxsize=None)
def _tail_series(n):
    return tuple(float(tail_coefficient(k)) for k in range(n))


def _scaled_quadrature(j, gamma, policy):
    coef = 2.0 ** j * math.factorial(j) / math.factorial(2 * j)

    def logf(u):
        with np.errstate(divide="ignore"):
            return -gamma * (np.cosh(u) - 1.0) + 2 * j * np.log(np.sinh(u))

    def f(u):
        # cosh(u) - 1 = 2 sinh(u/2)^2 avoids cancellation near u = 0.
        return np.exp(-2.0 * gamma * np.sinh(0.5 * u) ** 2) * np.sinh(u) ** (2 * j)

    upper = _upper_limit(logf)
    return coef * gamma ** j * _adaptive_gk(f, 0.0, upper, policy)


@lru_cache(maxsize=4096)
def _scaled_cached(j, gamma, policy):
    if j > 3:
        k_prev = _scaled_cached(2, gamma, policy)
        k_cur = _scaled_cached(3, gamma, policy)
        for order in range(3, j):
            k_prev, k_cur = k_cur, 2.0 * order / gamma * k_cur + k_prev
        return k_cur
    if gamma >= policy.asymptotic_switch:
        n = series_terms(policy)
        return math.sqrt(math.pi / (2.0 * gamma)) * float(_horner(_bessel_series(j, n), 1.0 / gamma))
    return _scaled_quadrature(j, gamma, policy)


def bessel_k_scaled(j: int, gamma: float, policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """Return ``exp(gamma) * K_j(gamma)``."""
    return _scaled_cached(_check_order(j), _check_gamma(gamma), policy)


def bessel_k(j: int, gamma: float, policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """Modified Bessel function of the second kind ``K_j(gamma)``.

    Parameters
    ----------
    j : int
        Non-negative integer order. Orders above 3 use upward recurrence.
    gamma : float
        Positive argument.
    policy : EvalPolicy
        Tolerances and the quadrature/series switch point.

    Returns
    -------
    float
        ``K_j(gamma)``; underflows to 0.0 for ``gamma`` beyond roughly 745.
        Use :func:`bessel_k_scaled` or :func:`bessel_k_ratio` there.
    """
    gamma = _check_gamma(gamma)
    return bessel_k_scaled(j, gamma, policy) * math.exp(-gamma)


def bessel_k_asymptotic(j: int, gamma: float, n_terms: int) -> float:
    """Large-argument series for ``K_j`` truncated after ``n_terms`` terms."""
    j = _check_order(j)
    gamma = _check_gamma(gamma)
    if n_terms < 1:
        raise UsageError("n_terms must be >= 1")
    s = float(_horner(_bessel_series(j, n_terms), 1.0 / gamma))
    return math.sqrt(math.pi / (2.0 * gamma)) * math.exp(-gamma) * s


_RATIO_PAIRS = {(0, 1), (1, 2)}


def bessel_k_ratio(num: int, den: int, gamma: float, policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """Ratio ``K_num(gamma) / K_den(gamma)`` for ``(num, den)`` in {(0,1), (1,2)}.

    The shared ``exp(-gamma)`` factor cancels, so the result is finite for
    arbitrarily large ``gamma``.
    """
    if (num, den) not in _RATIO_PAIRS:
        raise UsageError(f"unsupported order pair {(num, den)!r}; use (0, 1) or (1, 2)")
    gamma = _check_gamma(gamma)
    if gamma >= policy.asymptotic_switch:
        n = series_terms(policy)
        u = 1.0 / gamma
        return float(_horner(_bessel_series(num, n), u) / _horner(_bessel_series(den, n), u))
    return bessel_k_scaled(num, gamma, policy) / bessel_k_scaled(den, gamma, policy)


def bessel_k_derivative(j: int, gamma: float, policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """``dK_j/dgamma`` for ``j`` in {0, 1}.

    Uses ``K_0' = -K_1`` and ``K_1' = -K_0 - K_1/gamma``.
    """
    if j not in (0, 1) or isinstance(j, bool):
        raise UsageError(f"derivative is provided for orders 0 and 1 only, got {j!r}")
    gamma = _check_gamma(gamma)
    if j == 0:
        return -bessel_k(1, gamma, policy)
    return -bessel_k(0, gamma, policy) - bessel_k(1, gamma, policy) / gamma


def tail_switch(policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """Argument above which the tail integral uses its series.

    The tail series inherits the incomplete-gamma error floor of roughly
    ``exp(-gamma)``, so it is only trusted at twice the Bessel switch point.
    """
    return 2.0 * policy.asymptotic_switch


@lru_cache(maxsize=4096)
def _tail_scaled_cached(gamma, policy):
    if gamma >= tail_switch(policy):
        n = series_terms(policy)
        return math.sqrt(math.pi / 2.0) * gamma ** -1.5 * float(_horner(_tail_series(n), 1.0 / gamma))

    # int_gamma^inf K_1(y)/y dy = int_0^inf exp(-gamma cosh u) sinh(u)^2 / cosh(u) du
    def logf(u):
        with np.errstate(divide="ignore"):
            return -gamma * (np.cosh(u) - 1.0) + 2 * np.log(np.sinh(u)) - np.log(np.cosh(u))

    def f(u):
        return np.exp(-2.0 * gamma * np.sinh(0.5 * u) ** 2) * np.sinh(u) ** 2 / np.cosh(u)

    return _adaptive_gk(f, 0.0, _upper_limit(logf), policy)


def tail_integral_scaled(gamma: float, policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """Return ``exp(gamma) * int_gamma^inf K_1(y)/y dy``."""
    return _tail_scaled_cached(_check_gamma(gamma), policy)


def tail_integral_k1_over_y(gamma: float, policy: EvalPolicy = DEFAULT_POLICY) -> float:
    """Incomplete integral ``int_gamma^inf K_1(y)/y dy``.

    Below :func:`tail_switch` the double integral is collapsed to a single
    smooth one by exchanging the order of integration; above it the
    asymptotic series ``sqrt(pi/2) e^{-g} g^{-3/2} (1 - 9/(8g) + 345/(128g^2) - ...)``
    is used.
    """
    gamma = _check_gamma(gamma)
    return tail_integral_scaled(gamma, policy) * math.exp(-gamma)
