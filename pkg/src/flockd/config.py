"""Simulation configuration: YAML loading, validation and ensemble construction.

A configuration is a YAML mapping::

    model: ClassicalTCS        # or RTCSSynge, RTCSSimplified, RelativisticCSMechanical
    chi: 1
    c: inf                     # "inf" selects the classical model
    N: 8
    dim: 3
    kernel_phi: {type: constant, value: 1.0}
    kernel_zeta: {type: constant, value: 1.0}
    init:                      # seeded random initial data ...
      seed: 7
      box: 2.0                 # positions uniform in [-box/2, box/2]^dim
      velocity_scale: 0.5      # Gaussian velocities, then frame-normalized
      T_range: [0.8, 1.2]
    # init: {x: [[...]], v: [[...]], T: [...]}   ... or explicit arrays
    integrator: {scheme: rk4, dt: 0.001, t_end: 20.0, sample_stride: 100}
    regime: 1                  # optional, enables envelope checks
    margin: 0.1
    domain_hint: null          # optional largest pair distance for kernel checks

Every validation failure raises :class:`ConfigError` naming the field.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import yaml

from .dynamics import Ensemble, IntegratorConfig, Model
from .errors import ConfigError, FlockdError
from .kernels import KernelSpec, kernel_from_dict

__all__ = ["SimConfig", "load_config", "parse_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema", "model", "chi", "c", "N", "dim", "kernel_phi", "kernel_zeta", "init",
    "integrator", "regime", "margin", "domain_hint",
}
_INTEGRATOR_KEYS = {"scheme", "dt", "t_end", "rtol", "atol", "dt_min", "dt_max", "sample_stride", "T_floor"}
_RANDOM_INIT_KEYS = {"seed", "box", "velocity_scale", "T_range"}
_EXPLICIT_INIT_KEYS = {"x", "v", "T"}


@dataclass
class SimConfig:
    """Validated simulation settings; ``raw`` keeps the parsed mapping."""

    model: Model
    chi: int
    c: float
    N: int
    dim: int
    kernel_phi: Dict[str, Any]
    kernel_zeta: Dict[str, Any]
    init: Dict[str, Any]
    integrator: IntegratorConfig
    regime: Optional[int] = None
    margin: float = 0.1
    domain_hint: Optional[float] = None
    base_dir: Path = field(default_factory=Path)
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def seeded(self) -> bool:
        return "seed" in self.init

    def with_overrides(self, **changes) -> "SimConfig":
        """Re-validate a copy of the raw mapping with top-level ``changes``."""
        raw = copy.deepcopy(self.raw)
        for key, value in changes.items():
            if key == "seed":
                if "seed" not in raw.get("init", {}):
                    raise ConfigError("seed override needs a seeded random init", "init.seed")
                raw["init"]["seed"] = value
            elif key == "epsilon":
                if raw.get("kernel_phi", {}).get("type") != "perturbed":
                    raise ConfigError("epsilon applies only to a perturbed phi kernel", "kernel_phi.type")
                raw["kernel_phi"]["epsilon"] = value
            elif key == "dt":
                raw.setdefault("integrator", {})["dt"] = value
            else:
                raw[key] = value
            if key == "c" and "model" in raw:
                relativistic_model = Model(raw["model"]).relativistic
                if math.isinf(_as_c(value)) == relativistic_model:
                    raw["model"] = (Model.CLASSICAL if math.isinf(_as_c(value)) else Model.SYNGE).value
        return parse_config(raw, self.base_dir)

    def kernels(self):
        """``(phi, zeta)`` built from the descriptors."""
        try:
            phi = kernel_from_dict(self.kernel_phi, self.N, "phi", self.base_dir)
            zeta = kernel_from_dict(self.kernel_zeta, self.N, "zeta", self.base_dir)
        except FlockdError as exc:
            raise ConfigError(str(exc), "kernel_phi/kernel_zeta") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad kernel descriptor: {exc}", "kernel_phi/kernel_zeta") from exc
        return phi, zeta

    def ensemble(self) -> Ensemble:
        """Initial ensemble before frame normalization."""
        if self.seeded:
            x, v, T = _random_init(self.init, self.N, self.dim)
        else:
            x, v, T = self.init["x"], self.init["v"], self.init["T"]
        try:
            return Ensemble(x, v, T, self.chi, self.c, self.model)
        except FlockdError as exc:
            raise ConfigError(str(exc), "init") from exc


def _random_init(init, N, dim):
    rng = np.random.Generator(np.random.Philox(int(init["seed"])))
    box = float(init.get("box", 2.0))
    scale = float(init.get("velocity_scale", 0.5))
    lo, hi = init.get("T_range", [0.8, 1.2])
    x = box * (rng.random((N, dim)) - 0.5)
    v = scale * rng.standard_normal((N, dim))
    T = lo + (hi - lo) * rng.random(N)
    return x, v, T


def _as_c(value):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        c = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"c must be a positive number or 'inf', got {value!r}", "c")
    if not c > 0:
        raise ConfigError(f"c must be positive, got {value!r}", "c")
    return c


def _number(raw, key, cond, what, default=None, kind=float, path=None):
    path = path or key
    if key not in raw:
        if default is None:
            raise ConfigError(f"missing required field '{path}'", path)
        return default
    value = raw[key]
    if isinstance(value, bool):
        raise ConfigError(f"'{path}' must be {what}, got {value!r}", path)
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{path}' must be {what}, got {value!r}", path)
    if kind is int and out != value:
        raise ConfigError(f"'{path}' must be {what}, got {value!r}", path)
    if not cond(out):
        raise ConfigError(f"'{path}' must be {what}, got {value!r}", path)
    return out


def _array(raw, key, shape):
    path = f"init.{key}"
    try:
        a = np.asarray(raw[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"'{path}' must be numeric", path)
    if a.shape != shape:
        raise ConfigError(f"'{path}' must have shape {shape}, got {a.shape}", path)
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"'{path}' must be finite", path)
    return a


def parse_config(raw: Dict[str, Any], base_dir=".") -> SimConfig:
    """Validate a parsed mapping and return a :class:`SimConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown field '{name}'", name)
    if raw.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {raw.get('schema')!r}", "schema")
    c = _as_c(raw.get("c", "inf"))
    if "model" in raw:
        try:
            model = Model(raw["model"])
        except ValueError:
            raise ConfigError(f"unknown model {raw['model']!r}", "model")
        if math.isinf(c) == model.relativistic:
            raise ConfigError(f"model {model.value} conflicts with c={raw.get('c', 'inf')!r}", "model")
    else:
        model = Model.CLASSICAL if math.isinf(c) else Model.SYNGE
    chi = _number(raw, "chi", lambda k: k in (1, 2, 3, 4), "an integer in 1..4", 1, int)
    N = _number(raw, "N", lambda n: n >= 1, "an integer >= 1", None, int)
    dim = _number(raw, "dim", lambda d: d in (2, 3), "2 or 3", 3, int)

    for key in ("kernel_phi", "kernel_zeta"):
        desc = raw.get(key, {"type": "constant", "value": 1.0})
        if not isinstance(desc, dict) or "type" not in desc:
            raise ConfigError(f"'{key}' must be a mapping with a 'type'", key)
    kphi = dict(raw.get("kernel_phi", {"type": "constant", "value": 1.0}))
    kzeta = dict(raw.get("kernel_zeta", {"type": "constant", "value": 1.0}))

    init = raw.get("init")
    if not isinstance(init, dict):
        raise ConfigError("missing required mapping 'init'", "init")
    keys = set(init)
    if keys & _RANDOM_INIT_KEYS and keys & _EXPLICIT_INIT_KEYS:
        raise ConfigError("init mixes explicit arrays with random settings", "init")
    if "seed" in init:
        extra = keys - _RANDOM_INIT_KEYS
        if extra:
            raise ConfigError(f"unknown field 'init.{sorted(extra)[0]}'", f"init.{sorted(extra)[0]}")
        seed = _number(init, "seed", lambda s: 0 <= s < 2**64, "an unsigned 64-bit integer", None, int,
                       "init.seed")
        _number(init, "box", lambda b: b >= 0, "non-negative", 2.0, float, "init.box")
        _number(init, "velocity_scale", lambda s: s >= 0, "non-negative", 0.5, float, "init.velocity_scale")
        tr = init.get("T_range", [0.8, 1.2])
        if not (isinstance(tr, (list, tuple)) and len(tr) == 2
                and all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in tr)
                and 0 < tr[0] <= tr[1]):
            raise ConfigError(f"'init.T_range' must be [T_min, T_max] with 0 < T_min <= T_max, got {tr!r}",
                              "init.T_range")
        init = dict(init, seed=seed)
    elif keys == _EXPLICIT_INIT_KEYS:
        x = _array(init, "x", (N, dim))
        v = _array(init, "v", (N, dim))
        T = _array(init, "T", (N,))
        bad = np.nonzero(~(T > 0))[0]
        if bad.size:
            a = int(bad[0])
            raise ConfigError(f"temperature must be positive, 'init.T[{a}]' = {float(T[a])!r}", f"init.T[{a}]")
        if model.relativistic:
            speed = np.sqrt(np.einsum("ai,ai->a", v, v))
            fast = np.nonzero(~(speed < c))[0]
            if fast.size:
                a = int(fast[0])
                raise ConfigError(f"speed of particle {a} is not below c", f"init.v[{a}]")
        init = {"x": x, "v": v, "T": T}
    else:
        raise ConfigError("init needs either 'seed' or all of 'x', 'v', 'T'", "init")

    integ = raw.get("integrator", {})
    if not isinstance(integ, dict):
        raise ConfigError("'integrator' must be a mapping", "integrator")
    extra = set(integ) - _INTEGRATOR_KEYS
    if extra:
        name = sorted(extra)[0]
        raise ConfigError(f"unknown field 'integrator.{name}'", f"integrator.{name}")
    pos = lambda v: v > 0  # noqa: E731
    kw = {}
    for key in ("dt", "rtol", "atol", "dt_min", "dt_max", "T_floor"):
        if key in integ:
            kw[key] = _number(integ, key, pos, "positive", None, float, f"integrator.{key}")
    if "t_end" in integ:
        kw["t_end"] = _number(integ, "t_end", lambda v: v >= 0 and math.isfinite(v), "finite and >= 0",
                              None, float, "integrator.t_end")
    if "sample_stride" in integ:
        kw["sample_stride"] = _number(integ, "sample_stride", lambda v: v >= 1, "an integer >= 1", None, int,
                                      "integrator.sample_stride")
    if "scheme" in integ:
        if integ["scheme"] not in ("rk4", "rk45"):
            raise ConfigError(f"'integrator.scheme' must be rk4 or rk45, got {integ['scheme']!r}",
                              "integrator.scheme")
        kw["scheme"] = integ["scheme"]
    icfg = IntegratorConfig(**kw)

    regime = raw.get("regime")
    if regime is not None and regime not in (1, 2, 3):
        raise ConfigError(f"'regime' must be 1, 2 or 3, got {regime!r}", "regime")
    if regime is not None and model is Model.MECHANICAL:
        raise ConfigError("regimes are not defined for the mechanical model", "regime")
    margin = _number(raw, "margin", pos, "positive", 0.1, float)
    hint = raw.get("domain_hint")
    if hint is not None:
        hint = _number(raw, "domain_hint", pos, "positive", None, float)
    return SimConfig(model, chi, c, N, dim, kphi, kzeta, init, icfg, regime, margin, hint,
                     Path(base_dir), copy.deepcopy(raw))


def load_config(path) -> SimConfig:
    """Read and validate a YAML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "config")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", "config")
    return parse_config(raw, path.parent)
