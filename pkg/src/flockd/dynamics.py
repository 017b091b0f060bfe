r"""Right-hand sides and time integration for the flocking models.

State variables are positions ``x`` (N, dim), velocities ``v`` (N, dim) and
temperatures ``T`` (N,). Four models are available:

``ClassicalTCS``
    ``dv_a = (1/N) sum_b phi_ab (v_b/T_b - v_a/T_a)`` and
    ``c_V dT_a = (1/N) sum_b zeta_ab (1/T_a - 1/T_b) - v_a . dv_a``.
``RTCSSynge``
    ``d(Gamma H v)/dt = S_mom`` and ``d/dt[c^2 (Gamma H - 1 - 1/(gamma Gamma))] = S_en``
    with the Synge closure ``H``; resolved into ``(dv, dT)`` through a 2x2
    linear solve for ``(dgamma/dt, d|v|^2/dt)``.
``RTCSSimplified``
    ``H`` replaced by ``1 + T/c^2`` and energy ``Gamma T + c^2 (Gamma - 1)``.
``RelativisticCSMechanical``
    ``d/dt[Gamma v (1 + Gamma/c^2)] = (1/N) sum_b phi_ab (v_b - v_a)``, fixed ``T``.

Pair sums are formed from an exactly antisymmetric difference matrix and
reduced in a fixed order, so results do not depend on threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from . import gas_model as gm
from . import special_functions as sf
from .errors import (
    DegenerateClosureError,
    FlockdError,
    KinematicsError,
    NormalizationError,
    StateError,
    StiffnessError,
    UsageError,
)
from .kernels import KernelSpec, weight_matrix

__all__ = [
    "Model",
    "Ensemble",
    "Derivative",
    "ClosureSolve",
    "IntegratorConfig",
    "Trajectory",
    "tcs_rhs",
    "rtcs_rhs",
    "rtcs_solve",
    "rtcs_simplified_rhs",
    "rcs_mechanical_rhs",
    "rhs",
    "momentum_factor",
    "normalize_frame",
    "integrate",
    "rk4_step",
]


class Model(str, Enum):
    CLASSICAL = "ClassicalTCS"
    SYNGE = "RTCSSynge"
    SIMPLIFIED = "RTCSSimplified"
    MECHANICAL = "RelativisticCSMechanical"

    @property
    def relativistic(self) -> bool:
        return self is not Model.CLASSICAL


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Immutable particle state.

    ``c`` is ``math.inf`` exactly for the classical model.
    """

    x: np.ndarray
    v: np.ndarray
    T: np.ndarray
    chi: int = 1
    c: float = math.inf
    model: Model = Model.CLASSICAL

    def __post_init__(self):
        x, v, T = _frozen(self.x), _frozen(self.v), _frozen(self.T)
        if x.ndim != 2 or v.shape != x.shape or T.shape != (x.shape[0],):
            raise StateError(f"inconsistent shapes x{x.shape}, v{v.shape}, T{T.shape}")
        model = Model(self.model)
        gm.check_chi(self.chi)
        c = float(self.c)
        if model is Model.CLASSICAL and not math.isinf(c):
            raise UsageError("the classical model requires c = inf")
        if model.relativistic and not (c > 0 and math.isfinite(c)):
            raise UsageError(f"{model.value} requires a finite positive light speed")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "chi", int(self.chi))

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def replace(self, **kw) -> "Ensemble":
        fields = dict(x=self.x, v=self.v, T=self.T, chi=self.chi, c=self.c, model=self.model)
        fields.update(kw)
        return Ensemble(**fields)


@dataclass(frozen=True, eq=False)
class Derivative:
    dx: np.ndarray
    dv: np.ndarray
    dT: np.ndarray


class ClosureSolve(NamedTuple):
    """Per-particle coefficients and solution of the 2x2 closure system."""

    a1: np.ndarray
    b1: np.ndarray
    c1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    det: np.ndarray
    dgamma: np.ndarray
    dv2: np.ndarray
    S_mom: np.ndarray


def _pair_sum(W, q):
    """``(1/N) sum_b W_ab (q_b - q_a)`` for ``q`` of shape (N,) or (N, k)."""
    n = W.shape[0]
    if q.ndim == 1:
        return (W * (q[None, :] - q[:, None])).sum(axis=1) / n
    return (W[:, :, None] * (q[None, :, :] - q[:, None, :])).sum(axis=1) / n


def _check_T(T):
    if not np.all(T > 0):
        a = int(np.argmin(T > 0))
        raise StateError(f"temperature of particle {a} is not positive ({float(T[a])!r})")


def _dot(a, b):
    return np.einsum("ai,ai->a", a, b)


def _expect(ens, model):
    if ens.model is not model:
        raise UsageError(f"expected a {model.value} ensemble, got {ens.model.value}")


def tcs_rhs(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec,
            heat_capacity: Optional[float] = None) -> Derivative:
    """Classical TCS right-hand side.

    ``heat_capacity`` defaults to ``(2 chi + 1)/2``; other values give the
    classical limit of the simplified relativistic variant (``c_V = 1``).
    """
    _expect(ens, Model.CLASSICAL)
    _check_T(ens.T)
    cv = (2 * ens.chi + 1) / 2 if heat_capacity is None else float(heat_capacity)
    Wp = weight_matrix(phi, ens.x)
    Wz = Wp if zeta is phi else weight_matrix(zeta, ens.x)
    dv = _pair_sum(Wp, ens.v / ens.T[:, None])
    heat = -_pair_sum(Wz, 1.0 / ens.T)
    dT = (heat - _dot(ens.v, dv)) / cv
    return Derivative(ens.v.copy(), dv, dT)


def _relativistic_sums(ens, phi, zeta, Gamma):
    Wp = weight_matrix(phi, ens.x)
    Wz = Wp if zeta is phi else weight_matrix(zeta, ens.x)
    S_mom = _pair_sum(Wp, Gamma[:, None] * ens.v / ens.T[:, None])
    S_en = -_pair_sum(Wz, Gamma / ens.T)
    return S_mom, S_en


def _solve(v, v2, Gamma, c, h, dh, a2, b2, S_mom, S_en):
    a1 = Gamma * v2 * dh
    b1 = 0.5 * h * Gamma**3
    c1 = _dot(S_mom, v)
    c2 = S_en
    det = a1 * b2 - a2 * b1
    scale = np.abs(a1 * b2) + np.abs(a2 * b1)
    if np.any(~(np.abs(det) > 1e-300 * scale)) or not np.all(np.isfinite(det)):
        a = int(np.argmin(np.abs(det) > 1e-300 * scale))
        raise DegenerateClosureError(f"closure determinant {float(det[a])!r} is singular for particle {a}")
    dgamma = (c1 * b2 - c2 * b1) / det
    dv2 = (a1 * c2 - a2 * c1) / det
    return ClosureSolve(a1, b1, c1, a2, b2, c2, det, dgamma, dv2, S_mom)


def _extract_dv(sol, v, Gamma, c, h, dh):
    # d(Gamma h v) = Gamma h dv + h v dGamma + Gamma v h' dgamma, dGamma = Gamma^3 d|v|^2/(2c^2)
    corr = Gamma * dh * sol.dgamma + h * Gamma**3 * sol.dv2 / (2.0 * c * c)
    return (sol.S_mom - corr[:, None] * v) / (Gamma * h)[:, None]


def _synge(ens, phi, zeta, policy):
    _expect(ens, Model.SYNGE)
    _check_T(ens.T)
    c = ens.c
    v2 = _dot(ens.v, ens.v)
    Gamma, _ = gm.kinematics(v2, c)
    gamma = c * c / ens.T
    clo = gm.synge_closure(ens.chi, gamma, policy)
    S_mom, S_en = _relativistic_sums(ens, phi, zeta, Gamma)
    a2 = c * c * Gamma * clo.dH + ens.T**2 / (c * c * Gamma)
    b2 = 0.5 * Gamma * (Gamma**2 * clo.H + 1.0 / gamma)
    sol = _solve(ens.v, v2, Gamma, c, clo.H, clo.dH, a2, b2, S_mom, S_en)
    return sol, Gamma, clo


def rtcs_solve(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec,
               policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> ClosureSolve:
    """Coefficients ``a_i, b_i, c_i`` and the solved rates for the Synge model.

    ``a1 = Gamma |v|^2 H'``, ``b1 = H Gamma^3 / 2``, ``c1 = S_mom . v``,
    ``a2 = c^2 (Gamma H' + 1/(Gamma gamma^2))``, ``b2 = Gamma (Gamma^2 H + 1/gamma)/2``,
    ``c2 = S_en``.
    """
    return _synge(ens, phi, zeta, policy)[0]


def rtcs_rhs(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec,
             policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> Derivative:
    """Synge-closure RTCS right-hand side."""
    sol, Gamma, clo = _synge(ens, phi, zeta, policy)
    dv = _extract_dv(sol, ens.v, Gamma, ens.c, clo.H, clo.dH)
    dT = -(ens.T**2 / (ens.c * ens.c)) * sol.dgamma
    return Derivative(ens.v.copy(), dv, dT)


def rtcs_simplified_rhs(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec) -> Derivative:
    """Simplified RTCS: ``d/dt[Gamma v (1 + T/c^2)] = S_mom``, ``d/dt[Gamma T + c^2(Gamma-1)] = S_en``."""
    _expect(ens, Model.SIMPLIFIED)
    _check_T(ens.T)
    c = ens.c
    v2 = _dot(ens.v, ens.v)
    Gamma, _ = gm.kinematics(v2, c)
    gamma = c * c / ens.T
    h = 1.0 + 1.0 / gamma
    dh = -1.0 / gamma**2
    S_mom, S_en = _relativistic_sums(ens, phi, zeta, Gamma)
    # E = c^2 Gamma / gamma + c^2 (Gamma - 1)
    a2 = -Gamma * ens.T**2 / (c * c)
    b2 = (ens.T + c * c) * Gamma**3 / (2.0 * c * c)
    sol = _solve(ens.v, v2, Gamma, c, h, dh, a2, b2, S_mom, S_en)
    dv = _extract_dv(sol, ens.v, Gamma, c, h, dh)
    dT = -(ens.T**2 / (c * c)) * sol.dgamma
    return Derivative(ens.v.copy(), dv, dT)


def rcs_mechanical_rhs(ens: Ensemble, phi: KernelSpec, zeta: Optional[KernelSpec] = None) -> Derivative:
    """Mechanical relativistic CS; temperatures are held fixed.

    ``g(Gamma) = Gamma + Gamma^2/c^2`` and ``d(g v) = g dv + g'(Gamma) Gamma^3/c^2 v (v . dv)``;
    the rank-one system is inverted with the Sherman-Morrison formula.
    """
    _expect(ens, Model.MECHANICAL)
    c = ens.c
    v2 = _dot(ens.v, ens.v)
    Gamma, _ = gm.kinematics(v2, c)
    S = _pair_sum(weight_matrix(phi, ens.x), ens.v)
    g = Gamma + Gamma**2 / (c * c)
    beta = (1.0 + 2.0 * Gamma / (c * c)) * Gamma**3 / (c * c)
    vS = _dot(ens.v, S)
    dv = (S - (beta * vS / (g + beta * v2))[:, None] * ens.v) / g[:, None]
    return Derivative(ens.v.copy(), dv, np.zeros_like(ens.T))


def rhs(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec,
        policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> Derivative:
    """Dispatch to the right-hand side of ``ens.model``."""
    if ens.model is Model.CLASSICAL:
        return tcs_rhs(ens, phi, zeta)
    if ens.model is Model.SYNGE:
        return rtcs_rhs(ens, phi, zeta, policy)
    if ens.model is Model.SIMPLIFIED:
        return rtcs_simplified_rhs(ens, phi, zeta)
    return rcs_mechanical_rhs(ens, phi)


def momentum_factor(ens: Ensemble, policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> np.ndarray:
    """Scalar ``f_a`` with conserved momentum ``sum_a f_a v_a``."""
    if ens.model is Model.CLASSICAL:
        return np.ones(ens.N)
    c = ens.c
    Gamma, _ = gm.kinematics(_dot(ens.v, ens.v), c)
    if ens.model is Model.SYNGE:
        return Gamma * gm.synge_closure(ens.chi, c * c / ens.T, policy).H
    if ens.model is Model.SIMPLIFIED:
        return Gamma * (1.0 + ens.T / (c * c))
    return Gamma * (1.0 + Gamma / (c * c))


def normalize_frame(ens: Ensemble, max_iter: int = 200,
                    policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> Ensemble:
    """Shift all velocities by a common vector so the total momentum vanishes.

    Classical ensembles subtract the mean velocity. Relativistic ensembles
    step along ``-sum(w) / sum(f)`` with ``w = f v``, backtracking until the
    shifted state is subluminal and ``|sum w|`` decreases, and stop once
    ``|sum w| < 1e-12 N``.
    """
    if ens.model is Model.CLASSICAL:
        return ens.replace(v=ens.v - ens.v.mean(axis=0))
    tol = 1e-12 * ens.N

    def total_of(v):
        cur = ens.replace(v=v)
        f = momentum_factor(cur, policy)
        return cur, f, (f[:, None] * v).sum(axis=0)

    v = np.array(ens.v)
    cur, f, total = total_of(v)
    for _ in range(max_iter):
        norm = np.linalg.norm(total)
        if norm < tol:
            return cur
        step = total / f.sum()
        for _ in range(60):
            try:
                trial = total_of(v - step)
            except (KinematicsError, gm.DomainError):
                trial = None
            if trial is not None and np.linalg.norm(trial[2]) < norm:
                break
            step = 0.5 * step
        else:
            break
        v = v - step
        cur, f, total = trial
    raise NormalizationError(f"momentum did not vanish after {max_iter} iterations")


# ------------------------------------------------------------ integration ---

@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping settings.

    ``scheme`` is ``"rk4"`` (fixed step ``dt``) or ``"rk45"`` (adaptive
    Dormand-Prince with ``rtol``/``atol``; ``dt`` is the initial step).
    ``sample_stride`` counts nominal RK4 steps or accepted RK45 steps.
    """

    t_end: float = 1.0
    scheme: str = "rk4"
    dt: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-10
    dt_min: float = 1e-12
    dt_max: float = math.inf
    sample_stride: int = 1
    T_floor: float = 1e-8

    def __post_init__(self):
        if self.scheme not in ("rk4", "rk45"):
            raise UsageError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.rtol > 0 and self.atol > 0 and self.dt_min > 0):
            raise UsageError("dt, rtol, atol and dt_min must be positive")
        if not (self.t_end >= 0 and self.sample_stride >= 1):
            raise UsageError("t_end must be >= 0 and sample_stride >= 1")


@dataclass
class Trajectory:
    """Sampled states; ``error`` is set when integration stopped early."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    T: np.ndarray
    chi: int
    c: float
    model: Model
    error: Optional[dict] = None
    accepted_steps: int = 0
    rejected_steps: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None

    def __len__(self):
        return len(self.t)

    def state(self, k: int) -> Ensemble:
        return Ensemble(self.x[k], self.v[k], self.T[k], self.chi, self.c, self.model)

    @property
    def final(self) -> Ensemble:
        return self.state(len(self.t) - 1)


class _Rejected(Exception):
    pass


class _System:
    """Flat-vector view of an ensemble for the steppers."""

    def __init__(self, ens, phi, zeta, policy, T_floor):
        self.template = ens
        self.phi, self.zeta, self.policy = phi, zeta, policy
        self.N, self.dim = ens.N, ens.dim
        self.T_floor = T_floor
        self.nx = self.N * self.dim

    def pack(self, ens):
        return np.concatenate([ens.x.ravel(), ens.v.ravel(), ens.T])

    def unpack(self, y):
        n = self.nx
        return self.template.replace(
            x=y[:n].reshape(self.N, self.dim), v=y[n:2 * n].reshape(self.N, self.dim), T=y[2 * n:]
        )

    def f(self, y):
        d = rhs(self.unpack(y), self.phi, self.zeta, self.policy)
        return np.concatenate([d.dx.ravel(), d.dv.ravel(), d.dT])

    def stage(self, y):
        """RHS at an intermediate stage; failures there mean the step was too long."""
        if np.any(y[2 * self.nx:] <= self.T_floor):
            raise _Rejected()
        try:
            return self.f(y)
        except (StateError, KinematicsError, DegenerateClosureError, gm.DomainError) as exc:
            raise _Rejected() from exc

    def admissible(self, y):
        return bool(np.all(np.isfinite(y)) and np.all(y[2 * self.nx:] > self.T_floor))


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float,
             k1: Optional[np.ndarray] = None) -> np.ndarray:
    """One classical Runge-Kutta step for the autonomous system ``y' = f(y)``."""
    k1 = f(y) if k1 is None else k1
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(stage, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks) if a != 0.0)
        ks.append(stage(yi))
    y_new = y + h * sum(b * k for b, k in zip(_DP_B, ks) if b != 0.0)
    err = h * sum(e * k for e, k in zip(_DP_E, ks) if e != 0.0)
    return y_new, err, ks[-1]


def integrate(ens: Ensemble, phi: KernelSpec, zeta: KernelSpec, cfg: IntegratorConfig,
              observer: Optional[Callable[[float, Ensemble], None]] = None,
              policy: sf.EvalPolicy = sf.DEFAULT_POLICY) -> Trajectory:
    """Advance ``ens`` to ``cfg.t_end`` and return the sampled trajectory.

    The observer is called with ``(t, snapshot)`` at every recorded sample.
    Errors do not propagate: the trajectory up to the last accepted step is
    returned with ``error`` describing the failure and its time.
    """
    sys_ = _System(ens, phi, zeta, policy, cfg.T_floor)
    ts: List[float] = []
    ys: List[np.ndarray] = []

    def record(t, y):
        ts.append(t)
        ys.append(y.copy())
        if observer is not None:
            observer(t, sys_.unpack(y))

    y = sys_.pack(ens)
    t = 0.0
    record(t, y)
    error = None
    accepted = rejected = 0
    try:
        if cfg.scheme == "rk4":
            accepted, rejected, t, y = _run_rk4(sys_, cfg, y, record)
        else:
            accepted, rejected, t, y = _run_rk45(sys_, cfg, y, record)
    except _Failure as fail:
        error = fail.report
        accepted, rejected = fail.accepted, fail.rejected
    x = np.array([yy[: sys_.nx].reshape(sys_.N, sys_.dim) for yy in ys])
    v = np.array([yy[sys_.nx: 2 * sys_.nx].reshape(sys_.N, sys_.dim) for yy in ys])
    T = np.array([yy[2 * sys_.nx:] for yy in ys])
    return Trajectory(np.array(ts), x, v, T, ens.chi, ens.c, ens.model, error, accepted, rejected)


class _Failure(Exception):
    def __init__(self, report, accepted, rejected):
        super().__init__(report["message"])
        self.report, self.accepted, self.rejected = report, accepted, rejected


def _report(exc, t):
    out = exc.to_dict() if isinstance(exc, FlockdError) else {"error": "integration", "message": str(exc)}
    out["t"] = t
    return out


def _advance_rk4(sys_, y, h, cfg, counts, k1=None, t=0.0):
    """Advance by ``h``, halving recursively on rejection.

    Returns the new state and its derivative; a step is accepted only if the
    derivative at its end point can be evaluated.
    """
    if k1 is None:
        try:
            k1 = sys_.f(y)
        except FlockdError as exc:
            raise _Fatal(exc, t)
    cause = None
    try:
        y_new = rk4_step(sys_.stage, y, h, k1)
        if sys_.admissible(y_new):
            return y_new, sys_.stage(y_new)
    except _Rejected as rej:
        cause = rej.__cause__
    counts[1] += 1
    half = 0.5 * h
    if half < cfg.dt_min:
        if isinstance(cause, gm.DomainError):
            raise _Fatal(cause, t)
        raise _Fatal(StiffnessError(f"step size fell below dt_min={cfg.dt_min!r}"), t)
    y_mid, k_mid = _advance_rk4(sys_, y, half, cfg, counts, k1, t)
    return _advance_rk4(sys_, y_mid, half, cfg, counts, k_mid, t + half)


class _Fatal(Exception):
    def __init__(self, exc, t):
        super().__init__(str(exc))
        self.exc, self.t = exc, t


def _run_rk4(sys_, cfg, y, record):
    n_steps = max(0, int(math.ceil(cfg.t_end / cfg.dt - 1e-9)))
    counts = [0, 0]
    t = 0.0
    k1 = None
    for k in range(1, n_steps + 1):
        t_next = min(k * cfg.dt, cfg.t_end)
        try:
            y, k1 = _advance_rk4(sys_, y, t_next - t, cfg, counts, k1, t)
        except _Fatal as fatal:
            raise _Failure(_report(fatal.exc, fatal.t), counts[0], counts[1])
        counts[0] += 1
        t = t_next
        if k % cfg.sample_stride == 0 or k == n_steps:
            record(t, y)
    return counts[0], counts[1], t, y


def _run_rk45(sys_, cfg, y, record):
    t = 0.0
    h = min(cfg.dt, cfg.dt_max, cfg.t_end) if cfg.t_end > 0 else 0.0
    accepted = rejected = 0
    try:
        k1 = sys_.f(y)
    except FlockdError as exc:
        raise _Failure(_report(exc, t), 0, 0)
    while t < cfg.t_end:
        h = min(h, cfg.t_end - t)
        last = h >= cfg.t_end - t
        try:
            y_new, err, k_last = _dp_step(sys_.stage, y, h, k1)
            ok = sys_.admissible(y_new)
        except _Rejected:
            ok, err = False, None
        if ok:
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            enorm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if ok and enorm <= 1.0:
            t = cfg.t_end if last else t + h
            y, k1 = y_new, k_last
            accepted += 1
            if accepted % cfg.sample_stride == 0 or t >= cfg.t_end:
                record(t, y)
            fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
            h = min(h * fac, cfg.dt_max)
        else:
            rejected += 1
            h = 0.5 * h if not ok else h * max(0.2, 0.9 * enorm ** -0.2)
            if h < cfg.dt_min:
                raise _Failure(
                    _report(StiffnessError(f"step size fell below dt_min={cfg.dt_min!r}"), t),
                    accepted, rejected,
                )
    return accepted, rejected, t, y
