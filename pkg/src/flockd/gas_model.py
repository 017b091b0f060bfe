r"""Synge energy closures, Lorentz kinematics and relativistic state functions.

Units follow ``m = k_B = 1``. For a particle with temperature ``T`` and
velocity ``v`` at light speed ``c`` we write ``gamma = c^2/T`` and
``Gamma = 1/sqrt(1 - |v|^2/c^2)``. The closure factor ``H(gamma)`` depends on
the gas type ``chi`` (degrees of freedom ``D = 2 chi + 1``):

====  =====================================================
chi   H(gamma)
====  =====================================================
1     K_1/K_2 + 4/gamma
2     K_0/K_1 + 4/gamma
3     K_1/(gamma * tail) + 3/gamma
4     K_0/(gamma K_0 - gamma^2 * tail) + 3/gamma
====  =====================================================

with ``tail = int_gamma^inf K_1(y)/y dy``. In every case
``H = 1 + (2 chi + 3)/(2 gamma) + O(gamma^-2)``.

For large ``gamma`` the quantities ``H - 1``, ``dH/dgamma`` and the
energy-gap function ``F`` are tiny differences of order-one numbers. They
are therefore computed from exact rational series in ``u = 1/gamma``
(``H - 1 = u R(u)``) and from algebraically rearranged formulas that never
subtract nearly equal quantities.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import special_functions as sf
from .errors import ClosureSingularityError, DomainError, KinematicsError, UsageError

__all__ = [
    "GAMMA_MIN",
    "Atomicity",
    "Closure",
    "ThermoState",
    "synge_closure",
    "h_factor",
    "dh_dgamma",
    "thermo_state",
    "lorentz_gamma",
    "kinematics",
    "relativistic_energy",
    "auxiliary_momentum",
    "error_term_F",
    "classical_energy",
]

GAMMA_MIN = {1: 5.0, 2: 5.0, 3: 10.0, 4: 10.0}


@dataclass(frozen=True)
class Atomicity:
    """Gas type ``chi`` in {1, 2, 3, 4}."""

    chi: int

    def __post_init__(self):
        check_chi(self.chi)

    @property
    def degrees_of_freedom(self) -> int:
        return 2 * self.chi + 1

    @property
    def specific_heat(self) -> float:
        return (2 * self.chi + 1) / 2


def check_chi(chi) -> int:
    if isinstance(chi, Atomicity):
        return chi.chi
    if isinstance(chi, bool) or not isinstance(chi, (int, np.integer)) or not 1 <= chi <= 4:
        raise UsageError(f"chi must be an integer in 1..4, got {chi!r}")
    return int(chi)


class Closure(NamedTuple):
    """Closure values on an array of ``gamma``.

    ``h1 = gamma (H - 1)`` and ``h2 = gamma (h1 - (2 chi + 3)/2)`` are the
    rescaled remainders; both stay of order one as ``gamma -> inf``.
    """

    H: np.ndarray
    dH: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


class ThermoState(NamedTuple):
    pressure: float
    energy_density: float
    internal_energy: float


# ---------------------------------------------------------------- series ---

def _trim(p, n):
    return list(p[:n]) + [Fraction(0)] * max(0, n - len(p))


def _sub(p, q):
    n = max(len(p), len(q))
    return [a - b for a, b in zip(_trim(p, n), _trim(q, n))]


def _shift(p):
    if p[0] != 0:
        raise AssertionError("constant term must vanish before dividing by u")
    return p[1:]


def _mul(p, q, n):
    out = [Fraction(0)] * n
    for i, a in enumerate(p[:n]):
        for j, b in enumerate(q[: n - i]):
            out[i + j] += a * b
    return out


@lru_cache(maxsize=None)
def _series_polys(chi, n):
    """Float coefficients of ``R = N/Dn + k`` and ``h2 = M/(Dn * Dn0)``."""
    P = {j: [sf.asymptotic_coefficient(j, m) for m in range(n)] for j in (0, 1, 2)}
    Pt = [sf.tail_coefficient(k) for k in range(n)]
    if chi == 1:
        num, den, k = _shift(_sub(P[1], P[2])), P[2][: n - 1], 4
    elif chi == 2:
        num, den, k = _shift(_sub(P[0], P[1])), P[1][: n - 1], 4
    elif chi == 3:
        num, den, k = _shift(_sub(P[1], Pt)), Pt[: n - 1], 3
    else:
        d = _shift(_sub(P[0], Pt))
        num, den, k = _shift(_sub(P[0][: n - 1], d)), d[: n - 2], 3
    m = len(den)
    num = _trim(num, m)
    if num[0] / den[0] + k != Fraction(2 * chi + 3, 2):
        raise AssertionError("closure series leading term mismatch")
    rem = _shift(_sub([a * den[0] for a in num], [num[0] * b for b in den]))
    as_float = lambda p: np.array([float(a) for a in p])  # noqa: E731
    dnum = as_float([i * a for i, a in enumerate(num)][1:])
    dden = as_float([i * a for i, a in enumerate(den)][1:])
    return as_float(num), as_float(den), float(k), as_float(rem), float(den[0]), dnum, dden


@lru_cache(maxsize=None)
def _series_matrix(chi, n):
    """Rows ``num, den, dnum, dden, rem`` zero-padded to a common length."""
    num, den, k, rem, den0, dnum, dden = _series_polys(chi, n)
    rows = (num, den, dnum, dden, rem)
    C = np.zeros((len(rows), max(len(r) for r in rows)))
    for i, r in enumerate(rows):
        C[i, : len(r)] = r
    C.setflags(write=False)
    return C, k, den0


def _poly_rows(C, u):
    """Evaluate every row of ``C`` as a polynomial in ``u`` (Horner)."""
    umax = float(np.max(u))
    # drop trailing terms that cannot affect any row at the largest u
    mag = np.abs(C) * umax ** np.arange(C.shape[1])
    keep = np.nonzero((mag > 1e-18 * mag.max(axis=1, keepdims=True)).any(axis=0))[0]
    L = keep[-1] + 1 if keep.size else 1
    out = np.repeat(C[:, L - 1: L], u.size, axis=1)
    for j in range(L - 2, -1, -1):
        out = out * u + C[:, j: j + 1]
    return out


def _series_closure(chi, gamma, policy):
    C, k, den0 = _series_matrix(chi, sf.series_terms(policy))
    u = 1.0 / gamma
    N, D, dN, dD, rem = _poly_rows(C, u)
    R = N / D + k
    dR = (dN * D - N * dD) / (D * D)
    H = 1.0 + u * R
    dH = -u * u * (R + u * dR)
    h2 = rem / (D * den0)
    return H, dH, R, h2


def _quadrature_closure(chi, g, policy):
    e = lambda j: sf.bessel_k_scaled(j, g, policy)  # noqa: E731
    if chi == 1:
        e0, e1, e2 = e(0), e(1), e(2)
        r = e1 / e2
        H = r + 4.0 / g
        dH = r * r + r / g - e0 / e2 - 4.0 / g**2
    elif chi == 2:
        e0, e1 = e(0), e(1)
        r = e0 / e1
        H = r + 4.0 / g
        dH = -1.0 + r * r + r / g - 4.0 / g**2
    else:
        et = sf.tail_integral_scaled(g, policy)
        e0, e1 = e(0), e(1)
        if chi == 3:
            q = e1 / (g * et)
            H = q + 3.0 / g
            dH = q * q - 2.0 * q / g - e0 / (g * et) - 3.0 / g**2
        else:
            den = g * e0 - g * g * et
            if not den > 0:
                raise ClosureSingularityError(
                    f"tetratomic closure denominator is {den!r} at gamma={g!r}"
                )
            H = e0 / den + 3.0 / g
            dH = (-e1 * den - e0 * (e0 - 2.0 * g * et)) / den**2 - 3.0 / g**2
    h1 = g * (H - 1.0)
    h2 = g * (h1 - (2 * chi + 3) / 2)
    return H, dH, h1, h2


def synge_closure(chi, gamma, policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> Closure:
    """Evaluate ``H``, ``dH/dgamma`` and the rescaled remainders on an array.

    Raises
    ------
    DomainError
        If any ``gamma`` lies below the validated cutoff ``GAMMA_MIN[chi]``.
    ClosureSingularityError
        If the tetratomic denominator is not positive.
    """
    chi = check_chi(chi)
    g = np.asarray(gamma, dtype=float).ravel()
    if not np.all(g >= GAMMA_MIN[chi]):
        bad = g[~(g >= GAMMA_MIN[chi])][0]
        raise DomainError(
            f"gamma={float(bad)!r} is below the validated closure range gamma >= {GAMMA_MIN[chi]} "
            f"for chi={chi}"
        )
    switch = policy.asymptotic_switch if chi <= 2 else sf.tail_switch(policy)
    H = np.empty_like(g)
    dH = np.empty_like(g)
    h1 = np.empty_like(g)
    h2 = np.empty_like(g)
    big = g >= switch
    if np.any(big):
        H[big], dH[big], h1[big], h2[big] = _series_closure(chi, g[big], policy)
    for i in np.flatnonzero(~big):
        H[i], dH[i], h1[i], h2[i] = _quadrature_closure(chi, float(g[i]), policy)
    shape = np.shape(gamma)
    return Closure(H.reshape(shape), dH.reshape(shape), h1.reshape(shape), h2.reshape(shape))


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def h_factor(chi, gamma, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Synge closure factor ``H(gamma)`` for gas type ``chi``."""
    return _scalar_or_array(synge_closure(chi, gamma, policy).H, gamma)


def dh_dgamma(chi, gamma, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Analytic derivative ``dH/dgamma``."""
    return _scalar_or_array(synge_closure(chi, gamma, policy).dH, gamma)


# ------------------------------------------------------------ kinematics ---

def _speed_sq(v):
    v = np.asarray(v, dtype=float)
    return np.einsum("...i,...i->...", v, v) if v.ndim else v * v


def kinematics(v2, c):
    """Return ``(Gamma, Gamma - 1)`` from squared speeds, without cancellation."""
    v2 = np.asarray(v2, dtype=float)
    if np.isinf(c):
        return np.ones_like(v2), np.zeros_like(v2)
    beta2 = v2 / (c * c)
    if np.any(beta2 >= 1.0):
        raise KinematicsError(f"speed reached the light speed c={c!r}")
    s = np.sqrt(1.0 - beta2)
    return 1.0 / s, beta2 / (s * (1.0 + s))


def lorentz_gamma(v, c):
    """Lorentz factor ``1/sqrt(1 - |v|^2/c^2)`` of one or many velocity vectors."""
    if not c > 0:
        raise DomainError(f"light speed must be positive, got {c!r}")
    Gamma, _ = kinematics(_speed_sq(v), c)
    return float(Gamma) if np.ndim(Gamma) == 0 else Gamma


def _prepare(chi, T, v, c, policy):
    chi = check_chi(chi)
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise DomainError("temperature must be positive")
    if not c > 0:
        raise DomainError(f"light speed must be positive, got {c!r}")
    v2 = _speed_sq(v)
    Gamma, g = kinematics(v2, c)
    clo = synge_closure(chi, c * c / T, policy)
    return chi, T, v2, Gamma, g, clo


def relativistic_energy(chi, T, v, c, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Per-particle energy ``c^2 (Gamma H - 1 - 1/(gamma Gamma))``.

    Evaluated as ``Gamma^2 |v|^2/(Gamma+1) + T (h1 - 1) + (Gamma-1) T (h1 + 1/Gamma)``,
    an exact rearrangement whose classical limit is ``(2chi+1)T/2 + |v|^2/2``.
    """
    _, T, v2, Gamma, g, clo = _prepare(chi, T, v, c, policy)
    E = Gamma**2 * v2 / (Gamma + 1.0) + T * (clo.h1 - 1.0) + g * T * (clo.h1 + 1.0 / Gamma)
    return _scalar_or_array(E, T)


def auxiliary_momentum(chi, T, v, c, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Momentum-like variable ``w = Gamma H v``."""
    _, T, _, Gamma, _, clo = _prepare(chi, T, v, c, policy)
    return (Gamma * clo.H)[..., None] * np.asarray(v, dtype=float)


def error_term_F(chi, T, v, c, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Energy gap ``c^2 [E - (2chi+1)T/2 - |w|^2/2]`` with ``w = Gamma H v``.

    Computed from the rescaled remainders so that it stays accurate when
    ``c`` is large and the bracket is a difference of nearly equal numbers.
    """
    _, T, v2, Gamma, _, clo = _prepare(chi, T, v, c, policy)
    H, h1 = clo.H, clo.h1
    G2v2 = Gamma**2 * v2
    F = (
        T * T * clo.h2
        + T * (h1 + 1.0 / Gamma) * G2v2 / (Gamma + 1.0)
        - G2v2 * (G2v2 / (Gamma + 1.0) + T * h1 * (H + 1.0) * (Gamma + 1.0)) / (2.0 * (Gamma + 1.0))
    )
    return _scalar_or_array(F, T)


def thermo_state(chi, rho, T, c, policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> ThermoState:
    """Pressure ``rho T``, energy density ``rho (c^2 + eps)`` and internal energy ``eps``.

    ``eps = c^2 (H - 1/gamma - 1) = T (h1 - 1)``.
    """
    chi = check_chi(chi)
    if not (rho > 0 and T > 0 and c > 0):
        raise DomainError("rho, T and c must be positive")
    clo = synge_closure(chi, c * c / T, policy)
    eps = T * (float(clo.h1) - 1.0)
    return ThermoState(rho * T, rho * (c * c + eps), eps)


def classical_energy(chi, T, v):
    """Classical per-particle energy ``(2chi+1)T/2 + |v|^2/2``."""
    chi = check_chi(chi)
    return (2 * chi + 1) / 2 * np.asarray(T, dtype=float) + 0.5 * _speed_sq(v)
