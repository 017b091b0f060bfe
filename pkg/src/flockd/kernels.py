"""Communication weights ``phi_ab`` and ``zeta_ab``.

Three regimes are supported:

* :class:`Constant` -- the same weight for every pair,
* :class:`PerturbedMatrix` -- a fixed symmetric matrix close to a constant,
* :class:`MotherFunction` -- a non-increasing Lipschitz profile ``f(r)`` of
  the pair distance (power law, hat, or tabulated).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, KernelValidationError, UsageError

__all__ = [
    "Constant",
    "PerturbedMatrix",
    "MotherFunction",
    "KernelSpec",
    "KernelStats",
    "power_law",
    "hat",
    "tabulated",
    "load_tabulated",
    "perturbed_constant",
    "weight",
    "weight_matrix",
    "validate",
    "kernel_from_dict",
]


@dataclass(frozen=True)
class Constant:
    value: float
    applies_to: str = "phi"

    def __post_init__(self):
        if not (self.value > 0 and math.isfinite(self.value)):
            raise KernelValidationError(f"constant weight must be positive, got {self.value!r}")


@dataclass(frozen=True, eq=False)
class PerturbedMatrix:
    matrix: np.ndarray
    base: Optional[float] = None
    applies_to: str = "phi"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise KernelValidationError("weight matrix must be square")
        if not np.array_equal(m, m.T):
            i, j = np.argwhere(m != m.T)[0]
            raise KernelValidationError(
                f"weight matrix is not symmetric at ({i}, {j})", witness=[(i, j), (j, i)]
            )
        if not np.all(m > 0):
            i, j = np.argwhere(~(m > 0))[0]
            raise KernelValidationError(f"weight matrix entry ({i}, {j}) is not positive")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class MotherFunction:
    """Distance profile ``f(r)``; ``family`` and ``params`` describe it for output."""

    func: Callable[[np.ndarray], np.ndarray]
    family: str = "custom"
    params: dict = field(default_factory=dict)
    applies_to: str = "phi"

    def __call__(self, r):
        return self.func(np.asarray(r, dtype=float))


KernelSpec = Union[Constant, PerturbedMatrix, MotherFunction]


@dataclass(frozen=True)
class KernelStats:
    phi_max: float
    phi_min: float
    zeta_max: float
    zeta_min: float
    epsilon: float
    lipschitz: Optional[float] = None

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def power_law(phi0: float = 1.0, beta: float = 1.0, applies_to: str = "phi") -> MotherFunction:
    """``phi0 (1 + r^2)^(-beta)``."""
    if not (phi0 > 0 and beta >= 0):
        raise KernelValidationError("power law needs phi0 > 0 and beta >= 0")
    return MotherFunction(
        lambda r: phi0 * (1.0 + r * r) ** (-beta), "power", {"phi0": phi0, "beta": beta}, applies_to
    )


def hat(phi0: float = 1.0, R: float = 1.0, applies_to: str = "phi") -> MotherFunction:
    """``phi0 max(0, 1 - r/R)``; strictly positive only for ``r < R``."""
    if not (phi0 > 0 and R > 0):
        raise KernelValidationError("hat kernel needs phi0 > 0 and R > 0")
    return MotherFunction(
        lambda r: phi0 * np.maximum(0.0, 1.0 - r / R), "hat", {"phi0": phi0, "R": R}, applies_to
    )


def tabulated(r: Sequence[float], values: Sequence[float], applies_to: str = "phi") -> MotherFunction:
    """Piecewise-linear profile through ``(r, value)`` pairs, constant outside the table."""
    r = np.asarray(r, dtype=float)
    values = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.shape != values.shape or r.size < 2:
        raise KernelValidationError("tabulated kernel needs two equal-length columns of >= 2 rows")
    if not np.all(np.diff(r) > 0):
        i = int(np.argmin(np.diff(r) > 0))
        raise KernelValidationError(
            "tabulated r must be strictly increasing", witness=[(r[i], values[i]), (r[i + 1], values[i + 1])]
        )
    r.setflags(write=False)
    values.setflags(write=False)
    return MotherFunction(
        lambda x: np.interp(x, r, values),
        "tabulated",
        {"r": r.tolist(), "values": values.tolist()},
        applies_to,
    )


def load_tabulated(path, applies_to: str = "phi") -> MotherFunction:
    """Read a two-column ``r,value`` CSV; a non-numeric first row is treated as a header."""
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if k == 0:
                    continue
                raise KernelValidationError(f"{path}: malformed row {k + 1}: {row!r}")
    if not rows:
        raise KernelValidationError(f"{path}: no data rows")
    r, vals = zip(*rows)
    return tabulated(r, vals, applies_to)


def perturbed_constant(N: int, base: float, epsilon: float, seed: int = 0,
                       applies_to: str = "phi") -> PerturbedMatrix:
    """Symmetric ``N x N`` matrix with entries in ``[base, base + epsilon]``.

    The spread is exactly ``epsilon`` whenever ``N >= 2`` and ``epsilon > 0``.
    """
    if N < 1 or not base > 0 or epsilon < 0:
        raise KernelValidationError("need N >= 1, base > 0 and epsilon >= 0")
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random((N, N))
    u = np.triu(u) + np.triu(u, 1).T
    if N >= 2:
        u[0, 0] = 0.0
        u[0, 1] = u[1, 0] = 1.0
    m = base + epsilon * u
    return PerturbedMatrix(m, base, applies_to)


def weight(spec: KernelSpec, a: int, b: int, r: float) -> float:
    """Weight of the pair ``(a, b)`` at separation ``r``."""
    if not r >= 0:
        raise DomainError(f"separation must be non-negative, got {r!r}")
    if isinstance(spec, Constant):
        return float(spec.value)
    if isinstance(spec, PerturbedMatrix):
        n = spec.N
        if not (0 <= a < n and 0 <= b < n):
            raise UsageError(f"pair ({a}, {b}) out of range for {n} particles")
        return float(spec.matrix[a, b])
    if isinstance(spec, MotherFunction):
        return float(spec(r))
    raise UsageError(f"unknown kernel spec {spec!r}")


def pair_distances(x: np.ndarray) -> np.ndarray:
    """Exactly symmetric matrix of Euclidean distances between rows of ``x``."""
    d = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("abi,abi->ab", d, d))


def weight_matrix(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """All pair weights for positions ``x`` of shape ``(N, dim)``."""
    n = x.shape[0]
    if isinstance(spec, Constant):
        return np.full((n, n), float(spec.value))
    if isinstance(spec, PerturbedMatrix):
        if spec.N != n:
            raise UsageError(f"weight matrix is {spec.N}x{spec.N} but ensemble has {n} particles")
        return spec.matrix
    if isinstance(spec, MotherFunction):
        return np.asarray(spec(pair_distances(x)), dtype=float)
    raise UsageError(f"unknown kernel spec {spec!r}")


def _profile_check(spec: MotherFunction, domain_hint, step):
    upper = 2.0 * domain_hint if domain_hint is not None else 100.0
    grid = np.arange(0.0, upper + 0.5 * step, step)
    f = np.asarray(spec(grid), dtype=float)
    if not np.all(np.isfinite(f)):
        i = int(np.argmin(np.isfinite(f)))
        raise KernelValidationError(f"kernel is not finite at r={grid[i]!r}", witness=[(grid[i], f[i])])
    rise = np.flatnonzero(np.diff(f) > 0)
    if rise.size:
        i = int(rise[0])
        raise KernelValidationError(
            f"kernel is not non-increasing: f({grid[i]!r})={f[i]!r} < f({grid[i + 1]!r})={f[i + 1]!r}",
            witness=[(grid[i], f[i]), (grid[i + 1], f[i + 1])],
        )
    relevant = grid <= (domain_hint if domain_hint is not None else upper)
    if not np.all(f[relevant] > 0):
        i = int(np.argmin(f[relevant] > 0))
        raise KernelValidationError(
            f"kernel is not positive at r={grid[i]!r}", witness=[(grid[i], f[i])]
        )
    slopes = np.abs(np.diff(f)) / step
    lip = float(np.max(slopes)) if slopes.size else 0.0
    # Refine around the steepest cell: a Lipschitz profile keeps the same slope.
    if slopes.size:
        k = int(np.argmax(slopes))
        fine = np.linspace(grid[k], grid[k + 1], 33)
        ff = np.asarray(spec(fine), dtype=float)
        lip_fine = float(np.max(np.abs(np.diff(ff))) / (fine[1] - fine[0]))
        if lip_fine > 4.0 * lip + 1e-12:
            raise KernelValidationError(
                f"kernel does not look Lipschitz near r={grid[k]!r} (slope {lip_fine!r})",
                witness=[(fine[0], ff[0]), (fine[1], ff[1])],
            )
        lip = max(lip, lip_fine)
    fmin = float(spec(domain_hint)) if domain_hint is not None else float(np.min(f))
    return float(f[0]), fmin, lip


def _stats_one(spec: KernelSpec, domain_hint, step):
    if isinstance(spec, Constant):
        return spec.value, spec.value, 0.0
    if isinstance(spec, PerturbedMatrix):
        return float(spec.matrix.max()), float(spec.matrix.min()), None
    if isinstance(spec, MotherFunction):
        return _profile_check(spec, domain_hint, step)
    raise UsageError(f"unknown kernel spec {spec!r}")


def validate(phi: KernelSpec, zeta: Optional[KernelSpec] = None, domain_hint: Optional[float] = None,
             step: float = 1e-2) -> KernelStats:
    """Check kernel admissibility and return the regime statistics.

    Parameters
    ----------
    phi, zeta : KernelSpec
        Momentum and energy weights; ``zeta`` defaults to ``phi``.
    domain_hint : float, optional
        Largest pair distance of interest. Mother functions are sampled on
        ``[0, 2 * domain_hint]`` (``[0, 100]`` without a hint) and ``phi_min``
        is ``f(domain_hint)``.
    step : float
        Grid spacing of the sampled monotonicity/Lipschitz checks.
    """
    pmax, pmin, lip = _stats_one(phi, domain_hint, step)
    if zeta is None:
        zmax, zmin = pmax, pmin
    else:
        zmax, zmin, _ = _stats_one(zeta, domain_hint, step)
    return KernelStats(float(pmax), float(pmin), float(zmax), float(zmin), float(pmax - pmin), lip)


def kernel_from_dict(desc: dict, N: Optional[int] = None, applies_to: str = "phi",
                     base_dir: Union[str, Path] = ".") -> KernelSpec:
    """Build a kernel from a configuration mapping.

    Recognised ``type`` values: ``constant`` (``value``), ``matrix``
    (``matrix``), ``perturbed`` (``base``, ``epsilon``, ``seed``), ``power``
    (``phi0``, ``beta``), ``hat`` (``phi0``, ``R``) and ``tabulated``
    (``path`` or inline ``r``/``values``).
    """
    if not isinstance(desc, dict) or "type" not in desc:
        raise KernelValidationError("kernel descriptor needs a 'type' key")
    kind = desc["type"]
    if kind == "constant":
        return Constant(float(desc.get("value", 1.0)), applies_to)
    if kind == "matrix":
        return PerturbedMatrix(np.asarray(desc["matrix"], dtype=float), desc.get("base"), applies_to)
    if kind == "perturbed":
        if N is None:
            raise UsageError("perturbed kernel needs the particle count")
        return perturbed_constant(N, float(desc.get("base", 1.0)), float(desc.get("epsilon", 0.0)),
                                  int(desc.get("seed", 0)), applies_to)
    if kind == "power":
        return power_law(float(desc.get("phi0", 1.0)), float(desc.get("beta", 1.0)), applies_to)
    if kind == "hat":
        return hat(float(desc.get("phi0", 1.0)), float(desc["R"]), applies_to)
    if kind == "tabulated":
        if "path" in desc:
            return load_tabulated(Path(base_dir) / desc["path"], applies_to)
        return tabulated(desc["r"], desc["values"], applies_to)
    raise KernelValidationError(f"unknown kernel type {kind!r}")
