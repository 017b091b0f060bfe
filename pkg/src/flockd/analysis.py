r"""Diagnostics, theoretical bounds and envelope verification.

Norms follow the flocking estimates: ``||X||`` and ``||V||`` are plain
Euclidean norms over all particles (positions uncentred), ``||W||`` uses
``w_a = f_a v_a`` with the model's momentum factor, and
``||T_hat||^2 = (2 chi + 1)/2 * sum_a (T_a - T_inf)^2``.

Relativistic constants are evaluated at leading order: every ``O(c^-2)``
contribution is dropped and the temperature bounds use the relativistic
total energy in place of the classical one. The convention is recorded in
each :class:`BoundsReport`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import gas_model as gm
from . import special_functions as sf
from .dynamics import (
    Ensemble,
    IntegratorConfig,
    Model,
    Trajectory,
    integrate,
    momentum_factor,
)
from .errors import DomainError, FlockdError, SolverError, StateError, UsageError
from .kernels import Constant, KernelSpec, MotherFunction, PerturbedMatrix, validate, weight_matrix

__all__ = [
    "ConservedSet",
    "FlockingMetrics",
    "BoundsReport",
    "DecayFit",
    "Check",
    "conserved",
    "energy_per_particle",
    "entropy_rate",
    "flocking_metrics",
    "temperature_bounds",
    "asymptotic_limits",
    "regime_constants",
    "envelope_check",
    "fit_decay_rate",
    "classical_limit_study",
    "diagnostics",
    "invariant_battery",
    "LEADING_ORDER_CONVENTION",
]

LEADING_ORDER_CONVENTION = (
    "O(c^-2) terms dropped; T bounds and T_inf use the relativistic total energy"
)


def _dot(a, b):
    return np.einsum("ai,ai->a", a, b)


# ----------------------------------------------------------- conserved ---

@dataclass(frozen=True)
class ConservedSet:
    """Total momentum, total energy and entropy data of one state.

    ``S`` is ``sum ln T_a`` for the classical model and ``nan`` otherwise
    (relativistic entropy is accumulated from ``production``).
    ``production`` is the entropy production rate when kernels are given.
    """

    M: np.ndarray
    E: float
    S: float
    production: Optional[float] = None


def energy_per_particle(ens: Ensemble, policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> np.ndarray:
    """Model energy of each particle; ``nan`` for the mechanical model."""
    if ens.model is Model.CLASSICAL:
        return gm.classical_energy(ens.chi, ens.T, ens.v)
    if ens.model is Model.SYNGE:
        return np.asarray(gm.relativistic_energy(ens.chi, ens.T, ens.v, ens.c, policy), dtype=float)
    Gamma, g = gm.kinematics(_dot(ens.v, ens.v), ens.c)
    if ens.model is Model.SIMPLIFIED:
        return Gamma * ens.T + ens.c**2 * g
    return np.full(ens.N, np.nan)


def entropy_rate(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec) -> float:
    """Entropy production rate from kernel sums.

    Classical: ``(1/c_V) [(1/2N) sum phi |v_b/T_b - v_a/T_a|^2 + (1/2N) sum zeta (1/T_b - 1/T_a)^2]``,
    which equals ``d/dt sum ln T_a``. Relativistic: the same sums with
    ``Gamma v/T`` and ``Gamma/T`` and no ``1/c_V`` factor.
    """
    if not np.all(ens.T > 0):
        raise StateError("temperature must be positive")
    Wp = weight_matrix(phi, ens.x)
    Wz = Wp if zeta is phi else weight_matrix(zeta, ens.x)
    if ens.model is Model.CLASSICAL:
        Gamma, scale = np.ones(ens.N), 2.0 / (2 * ens.chi + 1)
    else:
        Gamma, _ = gm.kinematics(_dot(ens.v, ens.v), ens.c)
        scale = 1.0
    q = Gamma[:, None] * ens.v / ens.T[:, None]
    r = Gamma / ens.T
    dq = q[None, :, :] - q[:, None, :]
    dr = r[None, :] - r[:, None]
    total = (Wp * np.einsum("abi,abi->ab", dq, dq)).sum() + (Wz * dr * dr).sum()
    return float(scale * total / (2 * ens.N))


def conserved(ens: Ensemble, phi: Optional[KernelSpec] = None, zeta: Optional[KernelSpec] = None,
              policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> ConservedSet:
    """Conserved quantities of ``ens`` for its own model."""
    if not np.all(ens.T > 0):
        raise StateError("temperature must be positive")
    f = momentum_factor(ens, policy)
    M = (f[:, None] * ens.v).sum(axis=0)
    E = float(np.sum(energy_per_particle(ens, policy)))
    S = float(np.sum(np.log(ens.T))) if ens.model is Model.CLASSICAL else math.nan
    prod = None
    if phi is not None:
        prod = entropy_rate(ens, phi, zeta if zeta is not None else phi)
    return ConservedSet(M, E, S, prod)


# ------------------------------------------------------------- metrics ---

@dataclass(frozen=True)
class FlockingMetrics:
    D_x: float
    D_v: float
    D_T: float
    D_w: float
    norm_X: float
    norm_V: float
    norm_W: float
    norm_That: float


def _diameter(q):
    q = q.reshape(q.shape[0], -1)
    d = q[:, None, :] - q[None, :, :]
    return float(np.sqrt(np.max(np.einsum("abi,abi->ab", d, d))))


def flocking_metrics(ens: Ensemble, T_inf: float,
                     policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> FlockingMetrics:
    """Diameters and norms of one state; ``T_inf`` centres ``T_hat``."""
    w = momentum_factor(ens, policy)[:, None] * ens.v
    T_hat = ens.T - T_inf
    return FlockingMetrics(
        D_x=_diameter(ens.x),
        D_v=_diameter(ens.v),
        D_T=float(ens.T.max() - ens.T.min()),
        D_w=_diameter(w),
        norm_X=float(np.linalg.norm(ens.x)),
        norm_V=float(np.linalg.norm(ens.v)),
        norm_W=float(np.linalg.norm(w)),
        norm_That=float(math.sqrt((2 * ens.chi + 1) / 2 * float(T_hat @ T_hat))),
    )


# -------------------------------------------------------------- bounds ---

def _bounds_from_energy(E0, T0, chi):
    N = len(T0)
    T_upper = 2.0 * E0 / (2 * chi + 1)
    # product / T_upper^(N-1) in log space
    T_lower = math.exp(float(np.sum(np.log(T0))) - (N - 1) * math.log(T_upper))
    return T_lower, T_upper


def temperature_bounds(ens: Ensemble, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """``(T_lower, T_upper)`` with ``T_upper = 2E(0)/(2chi+1)`` and
    ``T_lower = prod T_a(0) / T_upper^(N-1)``.

    Relativistic ensembles use their total energy (leading-order convention).
    """
    if not np.all(ens.T > 0):
        raise StateError("temperature must be positive")
    E0 = float(np.sum(energy_per_particle(ens, policy)))
    return _bounds_from_energy(E0, ens.T, ens.chi)


def _speed_from_momentum(wn, factor_h, c):
    # |w| = Gamma h |v|  =>  |v| = |w| / sqrt(h^2 + |w|^2/c^2)
    return wn / math.sqrt(factor_h * factor_h + wn * wn / (c * c))


def asymptotic_limits(ens: Ensemble, policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Limit momentum-per-particle and temperature predicted by conservation.

    Classical: ``v_inf = M/N`` and ``T_inf = (E/N - |M|^2/(2N^2)) / (chi + 1/2)``.
    Relativistic: ``w_inf = M/N`` and ``T_inf`` solves
    ``e(T, v(w_inf, T)) = E/N`` by bracketed root finding, where ``e`` is the
    model's per-particle energy. The mechanical model has no temperature
    limit and returns ``nan``.
    """
    cs = conserved(ens, policy=policy)
    N = ens.N
    m_inf = cs.M / N
    if ens.model is Model.CLASSICAL:
        T_inf = (cs.E / N - float(cs.M @ cs.M) / (2 * N * N)) / (ens.chi + 0.5)
        return m_inf, float(T_inf)
    if ens.model is Model.MECHANICAL:
        return m_inf, math.nan
    c, chi = ens.c, ens.chi
    wn = float(np.linalg.norm(m_inf))
    target = cs.E / N

    def resid(T):
        if ens.model is Model.SYNGE:
            h = float(gm.h_factor(chi, c * c / T, policy))
        else:
            h = 1.0 + T / (c * c)
        s = _speed_from_momentum(wn, h, c)
        one = ens.replace(x=np.zeros((1, ens.dim)), v=np.array([[s] + [0.0] * (ens.dim - 1)]),
                          T=np.array([T]))
        return float(energy_per_particle(one, policy)[0]) - target

    lo_b, hi_b = temperature_bounds(ens, policy)
    lo, hi = 0.5 * lo_b, 2.0 * hi_b
    if ens.model is Model.SYNGE:
        hi = min(hi, c * c / gm.GAMMA_MIN[chi])
    try:
        flo, fhi = resid(lo), resid(hi)
    except FlockdError as exc:
        raise SolverError(f"limit temperature bracket is outside the valid range: {exc}") from exc
    if not (flo < 0 < fhi):
        raise SolverError(f"limit temperature not bracketed in ({float(lo)!r}, {float(hi)!r})")
    T_inf = brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return m_inf, float(T_inf)


@dataclass
class BoundsReport:
    """Constants, thresholds and condition flags of one flocking regime.

    ``rate`` is the velocity (or ``W``) envelope rate, ``position_bound`` the
    bound on ``||X||`` (``sqrt(2)||X||`` in regime 3), ``A``/``lam`` the
    Lyapunov constants with ``A = (1 + margin) * A_threshold``.
    """

    regime: int
    relativistic: bool
    chi: int
    c: float
    N: int
    T_lower: float
    T_upper: float
    T_inf: float
    v_inf: List[float]
    norm_X0: float
    norm_V0: float
    norm_That0: float
    A_threshold: float
    A: float
    lam: float
    rate: float
    position_bound: float
    position_scaled: bool
    margin: float
    feasible: bool
    flags: Dict[str, bool] = field(default_factory=dict)
    U: Optional[float] = None
    chi_U: Optional[float] = None
    stats: Dict[str, Optional[float]] = field(default_factory=dict)
    conventions: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def _profile(spec: KernelSpec):
    if isinstance(spec, Constant):
        v = spec.value
        return lambda r: v
    if isinstance(spec, MotherFunction):
        return lambda r: float(spec(r))
    raise UsageError("the well-prepared regime needs a distance-dependent or constant kernel")


def _search_U(base, drive, chi_fn):
    """Smallest ``U`` in the search window with ``chi(U) > 0`` and
    ``U >= base + drive / chi(U)``; ``None`` when none exists."""
    lo_end = base
    hi_end = 1e3 * (base + 1.0)

    def ok(U):
        k = chi_fn(U)
        return k > 0 and U >= base + drive / k

    grid = np.concatenate([[lo_end], lo_end + np.geomspace(1e-9 * (base + 1.0), hi_end - lo_end, 2000)])
    hit = next((i for i, U in enumerate(grid) if ok(U)), None)
    if hit is None:
        return None
    if hit == 0:
        return float(grid[0])
    a, b = float(grid[hit - 1]), float(grid[hit])
    for _ in range(200):
        m = 0.5 * (a + b)
        if ok(m):
            b = m
        else:
            a = m
        if b - a <= 4 * np.finfo(float).eps * b:
            break
    return b


def regime_constants(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec, regime: int,
                     margin: float = 0.1, domain_hint: Optional[float] = None,
                     policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> BoundsReport:
    """Evaluate the flocking constants of ``regime`` (1, 2 or 3) for ``ens``.

    Regime 1: unit constant weights. Regime 2: ``phi`` a small perturbation of
    a constant. Regime 3: distance-dependent weights and well-prepared data.
    The Synge and simplified relativistic models use the relativistic
    formulas; the mechanical model is not covered.
    """
    if regime not in (1, 2, 3):
        raise UsageError(f"regime must be 1, 2 or 3, got {regime!r}")
    if not margin > 0:
        raise UsageError("margin must be positive")
    if ens.model is Model.MECHANICAL:
        raise UsageError("no flocking constants are available for the mechanical model")
    rel = ens.model.relativistic
    chi, N, c = ens.chi, ens.N, ens.c
    k = 2 * chi + 1
    T_lo, T_hi = temperature_bounds(ens, policy)
    m_inf, T_inf = asymptotic_limits(ens, policy)
    met = flocking_metrics(ens, T_inf, policy)
    X0 = met.norm_X
    V0 = met.norm_W if rel else met.norm_V
    V0sq = V0 * V0
    mix = (N - 1) ** 2 * (T_hi - T_lo) ** 2 / (2 * N * N * T_lo * T_inf)
    flags: Dict[str, bool] = {}
    notes: List[str] = []
    conventions = [LEADING_ORDER_CONVENTION] if rel else []
    if rel:
        flags["c_condition"] = (2 * chi + 3) / (2 * c * c) <= 1.0 / (2 * T_hi)
    # speed factor c^2/(1+c^2) of the relativistic position bound
    sf_c = c * c / (1.0 + c * c) if rel else 1.0
    U = chi_U = None
    scaled = False
    stats: Dict[str, Optional[float]] = {}

    if regime == 1:
        flags["unit_kernels"] = (
            isinstance(phi, Constant) and phi.value == 1.0 and isinstance(zeta, Constant) and zeta.value == 1.0
        )
        if not rel:
            thr = V0sq / (k * k * N * N * T_hi) + T_hi + mix * T_hi / 2
            A = (1 + margin) * thr
            lam = min(4.0 / (k * T_hi**2),
                      2.0 / T_hi - (2 * V0sq / (k * k * N * N * T_hi**2) + 2 + mix) / A)
            rate = 1.0 / T_hi
            pos = X0 + T_hi * V0
        else:
            thr = T_hi + mix * T_hi / 2 + V0sq / (k * k * N * N * T_hi)
            A = (1 + margin) * thr
            lam = min(4.0 / (k * T_hi**2),
                      2.0 / T_hi - (2 + mix + 2 * V0sq / (k * k * N * N * T_hi**2)) / A)
            rate = 1.0 / (2 * T_hi)
            pos = X0 + 2 * sf_c * T_hi * V0
        stats = {"phi_min": 1.0, "zeta_min": 1.0, "epsilon": 0.0}
    elif regime == 2:
        st = validate(phi, zeta, domain_hint)
        pm, zm, eps = st.phi_min, st.zeta_min, st.epsilon
        stats = st.as_dict()
        if not rel:
            flags["epsilon_condition"] = eps <= pm * T_lo / (2 * T_hi)
            thr = 4.0 / 7.0 * (
                2 * zm * V0sq / (k * k * N * N * pm * T_hi)
                + (2 + mix) * T_hi
                + (2 + V0sq / (2 * k * T_lo)) * eps * T_hi / pm
            )
            A = (1 + margin) * thr
            lam = min(4 * zm / (k * T_hi**2),
                      7 * pm / (4 * T_hi) - (2 * zm * V0sq / (k * k * N * N * T_hi**2)
                                             + (2 + V0sq / (2 * k * T_lo)) * eps
                                             + (2 + mix) * pm) / A)
            pos = X0 + 2 * T_hi * V0 / pm
        else:
            flags["epsilon_condition"] = 2 * eps / T_lo <= pm / T_hi
            gap = 2 + (T_inf - T_lo) ** 2 / (2 * T_lo * T_inf)
            thr = 4.0 / 7.0 * (
                8 * zm * V0sq / (k * k * pm * T_hi) + (2 + mix) * T_hi + eps * T_hi / pm * gap
            )
            A = (1 + margin) * thr
            lam = min(4 * zm / (k * T_hi**2),
                      7 * pm / (4 * T_hi) - ((2 + mix) * pm + 8 * zm * V0sq / (k * k * T_hi**2)
                                             + eps * gap) / A)
            pos = X0 + 2 * sf_c * T_hi * V0 / pm
        rate = pm / (2 * T_hi)
    else:
        f_phi, f_zeta = _profile(phi), _profile(zeta)
        p0 = f_phi(0.0)
        if not rel:
            def chi_fn(u):
                return (T_lo * p0 * p0 - T_hi * (p0 - f_phi(u)) ** 2) / (2 * T_hi * T_lo * p0)
            drive = math.sqrt(2.0) * V0
        else:
            def chi_fn(u):
                return 0.5 * (p0 / T_hi - (p0 - f_phi(u)) ** 2 / (p0 * T_lo))
            drive = math.sqrt(2.0) * sf_c * V0
        U = _search_U(math.sqrt(2.0) * X0, drive, chi_fn)
        flags["well_prepared"] = U is not None
        scaled = True
        if U is None:
            notes.append("no admissible U in the search window")
            thr = A = lam = rate = pos = math.nan
        else:
            chi_U = chi_fn(U)
            zU = f_zeta(U)
            stats = {"phi_0": p0, "phi_U": f_phi(U), "zeta_U": zU}
            if not rel:
                common = 2 * V0sq * zU / (k * k * N * N * T_hi**2) + (2 + V0sq / (2 * k * T_lo)) * p0
            else:
                common = 2 * zU * V0sq / (k * k * N * N * T_hi**2) + (
                    2 + (T_hi - T_lo) ** 2 / (2 * T_lo * T_inf)) * p0
            thr = common / (2 * chi_U)
            A = (1 + margin) * thr
            lam = min(4 * zU / (k * T_hi**2), 2 * chi_U - common / A)
            rate = chi_U
            pos = U
    flags["lambda_positive"] = bool(lam > 0) if not math.isnan(lam) else False
    if not flags["lambda_positive"] and not math.isnan(lam):
        notes.append("decay rate is not positive after the margin")
    feasible = all(flags.values())
    return BoundsReport(
        regime=regime, relativistic=rel, chi=chi, c=c, N=N,
        T_lower=T_lo, T_upper=T_hi, T_inf=T_inf, v_inf=[float(a) for a in m_inf],
        norm_X0=X0, norm_V0=V0, norm_That0=met.norm_That,
        A_threshold=float(thr), A=float(A), lam=float(lam), rate=float(rate),
        position_bound=float(pos), position_scaled=scaled, margin=margin, feasible=bool(feasible),
        flags={k_: bool(v_) for k_, v_ in flags.items()}, U=U, chi_U=chi_U, stats=stats,
        conventions=conventions, notes=notes,
    )


# ------------------------------------------------------------ envelopes ---

@dataclass
class Check:
    """Outcome of one inequality over a trajectory.

    ``status`` is ``"pass"``, ``"fail"`` or ``"not-applicable"``;
    ``worst_slack`` is ``min_t (bound - value)`` and ``worst_t`` its time.
    """

    name: str
    status: str
    worst_slack: float = math.nan
    worst_t: float = math.nan
    first_fail_t: Optional[float] = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def as_dict(self):
        return asdict(self)


def _inequality(name, t, value, bound, rtol=1e-10):
    slack = bound - value
    tol = rtol * np.maximum(np.abs(bound), 1e-300)
    bad = slack < -tol
    i = int(np.argmin(slack))
    first = float(t[np.argmax(bad)]) if bad.any() else None
    return Check(name, "fail" if bad.any() else "pass", float(slack[i]), float(t[i]), first)


def _series(traj: Trajectory, T_inf, policy):
    X, V, That = [], [], []
    k = (2 * traj.chi + 1) / 2
    for i in range(len(traj)):
        ens = traj.state(i)
        X.append(np.linalg.norm(ens.x))
        w = momentum_factor(ens, policy)[:, None] * ens.v if traj.model.relativistic else ens.v
        V.append(np.linalg.norm(w))
        d = ens.T - T_inf
        That.append(k * float(d @ d))
    return np.array(X), np.array(V), np.array(That)


def envelope_check(traj: Trajectory, report: BoundsReport,
                   policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> List[Check]:
    """Check the position, velocity and Lyapunov envelopes at every sample.

    Checks are ``not-applicable`` when the report is infeasible. A relative
    tolerance of ``1e-10`` absorbs round-off in the comparisons.
    """
    if traj.model.relativistic != report.relativistic or traj.x.shape[1] != report.N:
        raise UsageError("trajectory does not match the bounds report")
    names = ("position", "velocity", "lyapunov")
    if not report.feasible:
        return [Check(n, "not-applicable", detail="sufficient conditions not met") for n in names]
    t = traj.t
    X, V, That2 = _series(traj, report.T_inf, policy)
    pos_val = math.sqrt(2.0) * X if report.position_scaled else X
    checks = [
        _inequality("position", t, pos_val, np.full_like(t, report.position_bound)),
        _inequality("velocity", t, V, V[0] * np.exp(-report.rate * t)),
        _inequality("lyapunov", t, That2 + report.A * V * V,
                    (That2[0] + report.A * V[0] ** 2) * np.exp(-report.lam * t)),
    ]
    return checks


# ----------------------------------------------------------------- fits ---

@dataclass(frozen=True)
class DecayFit:
    rate: float
    window: tuple
    residual: float


def fit_decay_rate(t: Sequence[float], y: Sequence[float], window: Optional[tuple] = None) -> DecayFit:
    """Least-squares fit of ``ln y = a - rate * t`` over ``window``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise UsageError("t and y must be one-dimensional arrays of equal length")
    if window is None:
        window = (float(t[0]), float(t[-1]))
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 10:
        raise UsageError("decay fit needs at least 10 samples in the window")
    ts, ys = t[sel], y[sel]
    if np.any(~(ys > 0)):
        raise DomainError("decay fit needs positive samples")
    A = np.vstack([np.ones_like(ts), ts]).T
    coef, *_ = np.linalg.lstsq(A, np.log(ys), rcond=None)
    resid = np.log(ys) - A @ coef
    return DecayFit(float(-coef[1]), (float(window[0]), float(window[1])),
                    float(np.sqrt(np.mean(resid**2))))


# ------------------------------------------------------- classical limit ---

def classical_limit_study(x, v, T, chi: int, phi: KernelSpec, zeta: KernelSpec,
                          c_values: Sequence[float], cfg: IntegratorConfig,
                          model: Model = Model.SYNGE,
                          policy: sf.EvalPolicy = sf.DEFAULT_POLICY):
    """Deviation of relativistic runs from the classical run on shared data.

    The classical reference uses ``c_V = (2chi+1)/2`` for the Synge model.
    Returns ``(rows, slope)``: each row has ``c``, ``deviation`` (max over
    samples of the largest absolute difference in ``x``, ``v`` or ``T``) and
    ``error``; ``slope`` is the least-squares log-log slope over finite ``c``.
    """
    if model not in (Model.SYNGE,):
        raise UsageError("the classical limit study compares the Synge model with the classical one")
    ref = integrate(Ensemble(x, v, T, chi), phi, zeta, cfg, policy=policy)
    if not ref.ok:
        raise SolverError(f"classical reference run failed: {ref.error}")
    rows = []
    for c in c_values:
        if math.isinf(c):
            rows.append({"c": c, "deviation": 0.0, "error": None})
            continue
        try:
            tr = integrate(Ensemble(x, v, T, chi, c, model), phi, zeta, cfg, policy=policy)
        except FlockdError as exc:
            rows.append({"c": c, "deviation": math.nan, "error": exc.to_dict()})
            continue
        if not tr.ok or len(tr) != len(ref):
            rows.append({"c": c, "deviation": math.nan, "error": tr.error})
            continue
        dev = max(np.abs(tr.x - ref.x).max(), np.abs(tr.v - ref.v).max(), np.abs(tr.T - ref.T).max())
        rows.append({"c": c, "deviation": float(dev), "error": None})
    pts = [(r["c"], r["deviation"]) for r in rows
           if math.isfinite(r["c"]) and r["error"] is None and r["deviation"] > 0]
    slope = math.nan
    if len(pts) >= 2:
        lc, ld = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
        slope = float(np.polyfit(lc, ld, 1)[0])
    return rows, slope


# ----------------------------------------------------------- diagnostics ---

def diagnostics(traj: Trajectory, phi: KernelSpec, zeta: KernelSpec,
                report: Optional[BoundsReport] = None, T_inf: Optional[float] = None,
                policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> Dict[str, np.ndarray]:
    """Per-sample diagnostic columns.

    Columns: ``t``, ``M_0..M_{d-1}``, ``E``, ``S``, ``D_x``, ``D_v``, ``D_T``,
    ``norm_V`` (``||W||`` for relativistic runs), ``norm_That`` and
    ``slack`` (smallest relative envelope slack, ``nan`` without a feasible
    report). ``D_T`` and ``norm_That`` are ``nan`` when the limit temperature
    cannot be computed. Relativistic ``S`` is the trapezoidal integral of the entropy
    production rate.
    """
    n, d = len(traj), traj.x.shape[2]
    if T_inf is None and report is not None:
        T_inf = report.T_inf
    if T_inf is None:
        try:
            T_inf = asymptotic_limits(traj.state(0), policy)[1]
        except SolverError:
            T_inf = math.nan  # equilibrium outside the closure range
    cols: Dict[str, list] = {k: [] for k in ["t"] + [f"M_{i}" for i in range(d)]
                             + ["E", "S", "D_x", "D_v", "D_T", "norm_V", "norm_That", "slack"]}
    rates = []
    for i in range(n):
        ens = traj.state(i)
        cs = conserved(ens, phi, zeta, policy)
        met = flocking_metrics(ens, T_inf, policy)
        cols["t"].append(float(traj.t[i]))
        for j in range(d):
            cols[f"M_{j}"].append(float(cs.M[j]))
        cols["E"].append(cs.E)
        cols["S"].append(cs.S)
        rates.append(cs.production)
        cols["D_x"].append(met.D_x)
        cols["D_v"].append(met.D_w if traj.model.relativistic else met.D_v)
        cols["D_T"].append(met.D_T)
        cols["norm_V"].append(met.norm_W if traj.model.relativistic else met.norm_V)
        cols["norm_That"].append(met.norm_That)
    out = {k: np.array(v_, dtype=float) for k, v_ in cols.items() if k != "slack"}
    if traj.model.relativistic:
        r = np.array(rates, dtype=float)
        dt = np.diff(out["t"])
        out["S"] = np.concatenate([[0.0], np.cumsum(0.5 * dt * (r[1:] + r[:-1]))])
    slack = np.full(n, np.nan)
    if report is not None and report.feasible:
        t = out["t"]
        V = out["norm_V"]
        T2 = out["norm_That"] ** 2
        pos = np.sqrt(2.0) * np.linalg.norm(traj.x.reshape(n, -1), axis=1) if report.position_scaled \
            else np.linalg.norm(traj.x.reshape(n, -1), axis=1)
        rel = lambda val, b: (b - val) / np.maximum(np.abs(b), 1e-300)  # noqa: E731
        slack = np.minimum.reduce([
            rel(pos, np.full(n, report.position_bound)),
            rel(V, V[0] * np.exp(-report.rate * t)),
            rel(T2 + report.A * V * V, (T2[0] + report.A * V[0] ** 2) * np.exp(-report.lam * t)),
        ])
    out["slack"] = slack
    return out


def invariant_battery(traj: Trajectory, phi: KernelSpec, zeta: KernelSpec,
                      diag: Optional[Dict[str, np.ndarray]] = None,
                      policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> List[Check]:
    """Conservation, entropy and temperature-bound checks on a trajectory.

    Drift tolerance is ``1e-8`` for the classical model and ``1e-7``
    otherwise. Relativistic temperature bounds report the empirical ``K``.
    """
    if diag is None:
        diag = diagnostics(traj, phi, zeta, policy=policy)
    t = diag["t"]
    d = traj.x.shape[2]
    tol = 1e-8 if traj.model is Model.CLASSICAL else 1e-7
    M = np.stack([diag[f"M_{i}"] for i in range(d)], axis=1)
    mdrift = np.linalg.norm(M - M[0], axis=1) / (1.0 + np.linalg.norm(M[0]))
    checks = [_inequality("momentum_drift", t, mdrift, np.full_like(t, tol), rtol=0.0)]
    if traj.model is not Model.MECHANICAL:
        E = diag["E"]
        edrift = np.abs(E - E[0]) / abs(E[0])
        checks.append(_inequality("energy_drift", t, edrift, np.full_like(t, tol), rtol=0.0))
        dS = np.concatenate([[0.0], np.diff(diag["S"])])
        checks.append(_inequality("entropy_monotone", t, -dS, np.full_like(t, 1e-10), rtol=0.0))
    e0 = traj.state(0)
    if traj.model is Model.CLASSICAL:
        lo, hi = temperature_bounds(e0, policy)
        checks.append(_inequality("temperature_upper", t, traj.T.max(axis=1), np.full_like(t, hi)))
        checks.append(_inequality("temperature_lower", t, -traj.T.min(axis=1), np.full_like(t, -lo)))
    elif traj.model is not Model.MECHANICAL:
        E0 = float(diag["E"][0])
        N = traj.x.shape[1]
        K_up = float(traj.T.max() / E0)
        log_lo = float(np.sum(np.log(traj.T[0]))) - (N - 1) * math.log(abs(E0))
        K_lo = float(math.exp(log_lo) / traj.T.min())
        K = max(1.0, K_up, K_lo)
        checks.append(Check("temperature_K", "pass", detail=f"empirical K={float(K)!r}"))
    return checks
