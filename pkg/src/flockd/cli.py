"""Command-line interface: ``flockd {run,bounds,verify,sweep} --config PATH``.

Exit codes: 0 success, 1 failed verification, 2 validation error,
3 integration error. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import (
    Check,
    asymptotic_limits,
    conserved,
    diagnostics,
    envelope_check,
    fit_decay_rate,
    invariant_battery,
    regime_constants,
)
from .config import SimConfig, load_config, parse_config
from .dynamics import integrate, momentum_factor, normalize_frame
from .errors import ConfigError, FlockdError
from .io import read_trajectory, to_jsonable, write_columns, write_csv, write_json, write_trajectory

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_INTEGRATION = 0, 1, 2, 3
SWEEP_PARAMS = ("c", "chi", "N", "epsilon", "dt")


class _Exit(Exception):
    def __init__(self, code, payload):
        super().__init__(payload.get("message", ""))
        self.code, self.payload = code, payload


def _fail(code, exc_or_payload):
    payload = exc_or_payload.to_dict() if isinstance(exc_or_payload, FlockdError) else exc_or_payload
    raise _Exit(code, payload)


def _threads() -> int:
    raw = os.environ.get("FLOCKD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        _fail(EXIT_VALIDATION, {"error": "validation", "message": f"FLOCKD_THREADS must be an integer, got {raw!r}",
                                "field": "FLOCKD_THREADS"})
    if n < 1:
        _fail(EXIT_VALIDATION, {"error": "validation", "message": "FLOCKD_THREADS must be >= 1",
                                "field": "FLOCKD_THREADS"})
    return n


def _load(args) -> SimConfig:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
    except FlockdError as exc:
        _fail(EXIT_VALIDATION, exc)
    return cfg


def _prepare(cfg: SimConfig):
    """Normalized initial ensemble and kernels; failures are validation errors."""
    try:
        phi, zeta = cfg.kernels()
        ens = normalize_frame(cfg.ensemble())
        conserved(ens)
    except FlockdError as exc:
        _fail(EXIT_VALIDATION, exc)
    return ens, phi, zeta


def _report(cfg, ens, phi, zeta):
    if cfg.regime is None:
        return None
    try:
        return regime_constants(ens, phi, zeta, cfg.regime, cfg.margin, cfg.domain_hint)
    except FlockdError as exc:
        _fail(EXIT_VALIDATION, exc)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _decay_fit(diag):
    V = diag["norm_V"]
    if not V[0] > 0:
        return None
    keep = V > 1e-10 * V[0]
    if keep.sum() < 10:
        return None
    # contiguous prefix above the round-off floor
    stop = int(np.argmin(keep)) if not keep.all() else len(V)
    if stop < 10:
        return None
    return fit_decay_rate(diag["t"][:stop], V[:stop])


def _summary(cfg, traj, diag, report):
    E, S = diag["E"], diag["S"]
    d = traj.x.shape[2]
    M = np.stack([diag[f"M_{i}"] for i in range(d)], axis=1)
    fit = _decay_fit(diag)
    return {
        "version": __version__,
        "model": cfg.model.value,
        "chi": cfg.chi,
        "c": cfg.c,
        "N": cfg.N,
        "dim": cfg.dim,
        "ok": traj.ok,
        "error": traj.error,
        "t_final": float(traj.t[-1]),
        "samples": len(traj),
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
        "M0": M[0],
        "E0": float(E[0]),
        "energy_drift": float(np.max(np.abs(E - E[0])) / abs(E[0])) if math.isfinite(E[0]) else math.nan,
        "momentum_drift": float(np.max(np.linalg.norm(M - M[0], axis=1)) / (1 + np.linalg.norm(M[0]))),
        "entropy_initial": float(S[0]),
        "entropy_final": float(S[-1]),
        "decay_fit": None if fit is None else {"rate": fit.rate, "window": fit.window, "residual": fit.residual},
        "bounds": None if report is None else report.as_dict(),
    }


def _simulate(cfg, ens, phi, zeta):
    try:
        traj = integrate(ens, phi, zeta, cfg.integrator)
    except FlockdError as exc:
        _fail(EXIT_INTEGRATION, exc)
    return traj


def cmd_run(args) -> int:
    cfg = _load(args)
    ens, phi, zeta = _prepare(cfg)
    report = _report(cfg, ens, phi, zeta)
    traj = _simulate(cfg, ens, phi, zeta)
    diag = diagnostics(traj, phi, zeta, report)
    out = _outdir(args)
    write_trajectory(out / "trajectory.csv", traj)
    write_columns(out / "diagnostics.csv", "diagnostics", diag)
    write_json(out / "summary.json", "summary", _summary(cfg, traj, diag, report))
    if not traj.ok:
        _fail(EXIT_INTEGRATION, traj.error)
    if not args.quiet:
        print(f"run complete: {len(traj)} samples to t={float(traj.t[-1])!r}; artifacts in {out}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _load(args)
    if cfg.regime is None:
        _fail(EXIT_VALIDATION, ConfigError("bounds needs 'regime' in the configuration", "regime"))
    ens, phi, zeta = _prepare(cfg)
    report = _report(cfg, ens, phi, zeta)
    out = _outdir(args)
    write_json(out / "bounds.json", "bounds", report.as_dict())
    body = {"schema": "flockd.bounds/1"}
    body.update(to_jsonable(report.as_dict()))
    print(json.dumps(body, indent=2, allow_nan=False))
    return EXIT_OK


def _extra_checks(traj, report, diag, policy=None) -> List[Check]:
    checks = []
    if not report.feasible:
        return [Check(n, "not-applicable", detail="sufficient conditions not met")
                for n in ("decay_rate", "limit_consistency")]
    fit = _decay_fit(diag)
    if fit is None:
        checks.append(Check("decay_rate", "not-applicable", detail="too few samples above round-off"))
    else:
        need = report.rate - 0.05
        ok = fit.rate >= need
        checks.append(Check("decay_rate", "pass" if ok else "fail", fit.rate - need, math.nan,
                            detail=f"fitted rate {float(fit.rate)!r} vs bound rate {float(report.rate)!r}"))
    first, last = traj.state(0), traj.final
    m_inf, T_inf = np.asarray(report.v_inf), report.T_inf

    def dev(ens):
        w = momentum_factor(ens)[:, None] * ens.v
        return max(float(np.abs(w - m_inf).max()), float(np.abs(ens.T - T_inf).max()))

    bound = math.exp(-report.lam * traj.t[-1] / 2) * dev(first)
    d_end = dev(last)
    checks.append(Check("limit_consistency", "pass" if d_end <= bound * (1 + 1e-10) + 1e-14 else "fail",
                        bound - d_end, float(traj.t[-1])))
    return checks


def cmd_verify(args) -> int:
    cfg = _load(args)
    if cfg.regime is None:
        _fail(EXIT_VALIDATION, ConfigError("verify needs 'regime' in the configuration", "regime"))
    ens, phi, zeta = _prepare(cfg)
    report = _report(cfg, ens, phi, zeta)
    out = _outdir(args)
    if args.replay:
        try:
            traj = read_trajectory(args.replay, cfg.chi, cfg.c, cfg.model, cfg.dim)
        except ConfigError as exc:
            _fail(EXIT_VALIDATION, exc)
    else:
        traj = _simulate(cfg, ens, phi, zeta)
        write_trajectory(out / "trajectory.csv", traj)
    diag = diagnostics(traj, phi, zeta, report)
    write_columns(out / "diagnostics.csv", "diagnostics", diag)
    if not traj.ok:
        write_json(out / "summary.json", "summary", _summary(cfg, traj, diag, report))
        _fail(EXIT_INTEGRATION, traj.error)
    checks = envelope_check(traj, report) + _extra_checks(traj, report, diag) + invariant_battery(
        traj, phi, zeta, diag)
    all_pass = all(ch.passed for ch in checks)
    write_json(out / "summary.json", "summary", _summary(cfg, traj, diag, report))
    write_json(out / "ledger.json", "ledger", {
        "all_pass": all_pass,
        "feasible": report.feasible,
        "regime": report.regime,
        "relativistic": report.relativistic,
        "checks": [ch.as_dict() for ch in checks],
    })
    if not args.quiet:
        for ch in checks:
            print(f"{ch.status:>14}  {ch.name}  worst_slack={float(ch.worst_slack)!r}")
        print("verify:", "PASS" if all_pass else "FAIL")
    return EXIT_OK if all_pass else EXIT_FAIL


def _parse_sweep(spec: str):
    if "=" not in spec:
        _fail(EXIT_VALIDATION, ConfigError("sweep must look like PARAM=v1,v2,...", "sweep"))
    name, _, values = spec.partition("=")
    name = name.strip()
    if name not in SWEEP_PARAMS:
        _fail(EXIT_VALIDATION, ConfigError(f"cannot sweep {name!r}; choose from {', '.join(SWEEP_PARAMS)}",
                                           "sweep"))
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        _fail(EXIT_VALIDATION, ConfigError("sweep list is empty", "sweep"))
    parsed = []
    for item in items:
        try:
            if name in ("chi", "N"):
                parsed.append(int(item))
            elif name == "c" and item.lower() in ("inf", "infinity"):
                parsed.append("inf")
            else:
                parsed.append(float(item))
        except ValueError:
            _fail(EXIT_VALIDATION, ConfigError(f"bad sweep value {item!r}", "sweep"))
    return name, parsed


def _sweep_row(job):
    raw, base_dir, name, value = job
    row = {"param": name, "value": value, "status": "ok", "energy_drift": math.nan,
           "momentum_drift": math.nan, "norm_V_final": math.nan, "D_T_final": math.nan, "error": ""}
    try:
        cfg = parse_config(raw, base_dir).with_overrides(**{name: value})
        phi, zeta = cfg.kernels()
        ens = normalize_frame(cfg.ensemble())
        traj = integrate(ens, phi, zeta, cfg.integrator)
        diag = diagnostics(traj, phi, zeta)
        s = _summary(cfg, traj, diag, None)
        row.update(energy_drift=s["energy_drift"], momentum_drift=s["momentum_drift"],
                   norm_V_final=float(diag["norm_V"][-1]), D_T_final=float(diag["D_T"][-1]))
        if not traj.ok:
            row.update(status="failed", error=json.dumps(to_jsonable(traj.error)))
        return row, (traj.x, traj.v, traj.T)
    except FlockdError as exc:
        row.update(status="failed", error=json.dumps(to_jsonable(exc.to_dict())))
        return row, None


def cmd_sweep(args) -> int:
    cfg = _load(args)
    name, values = _parse_sweep(args.sweep)
    workers = _threads()
    raw = cfg.raw
    if args.seed is not None:
        raw = dict(raw, init=dict(raw["init"], seed=args.seed))
    jobs = [(raw, str(cfg.base_dir), name, v) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_row, jobs))
    else:
        results = [_sweep_row(j) for j in jobs]
    rows = [r for r, _ in results]
    slope = None
    if name == "c":
        ref_row, ref = _sweep_row((raw, str(cfg.base_dir), "c", "inf"))
        pts = []
        for (row, data) in results:
            row["deviation"] = math.nan
            if ref is None or data is None or row["status"] != "ok" or data[0].shape != ref[0].shape:
                continue
            dev = max(float(np.abs(a - b).max()) for a, b in zip(data, ref))
            row["deviation"] = dev
            if row["value"] != "inf" and dev > 0:
                pts.append((float(row["value"]), dev))
        if len(pts) >= 2:
            slope = float(np.polyfit(np.log([p[0] for p in pts]), np.log([p[1] for p in pts]), 1)[0])
    out = _outdir(args)
    cols = ["param", "value", "status", "energy_drift", "momentum_drift", "norm_V_final", "D_T_final"]
    if name == "c":
        cols += ["deviation", "slope"]
    cols.append("error")
    table = []
    for row in rows:
        row.setdefault("slope", None)
        table.append([row["param"], str(row["value"])] + [row.get(k) for k in cols[2:]])
    if name == "c":
        table.append(["c", "slope", "ok" if slope is not None else "failed"]
                     + [None] * (len(cols) - 5) + [slope, ""])
    write_csv(out / "sweep.csv", "sweep", cols, table)
    write_json(out / "summary.json", "sweep", {"param": name, "rows": rows, "slope": slope})
    n_ok = sum(r["status"] == "ok" for r in rows)
    if not args.quiet:
        print(f"sweep {name}: {n_ok}/{len(rows)} rows succeeded" + (f"; slope {slope!r}" if slope else ""))
    if n_ok == 0:
        _fail(EXIT_INTEGRATION, {"error": "integration", "message": "every sweep row failed"})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flockd", description="Thermodynamic Cucker-Smale flocking simulations.")
    p.add_argument("--version", action="version", version=f"flockd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--out", default="./out", help="output directory (default ./out)")
        sp.add_argument("--seed", type=_u64, default=None, help="override init.seed")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")

    common(sub.add_parser("run", help="integrate and write trajectory, diagnostics and summary"))
    common(sub.add_parser("bounds", help="print the regime constants without integrating"))
    v = sub.add_parser("verify", help="run and check every envelope and invariant")
    common(v)
    v.add_argument("--replay", default=None, help="check an existing trajectory.csv instead of integrating")
    s = sub.add_parser("sweep", help="run a one-parameter sweep")
    common(s)
    s.add_argument("--sweep", required=True, help="PARAM=v1,v2,... with PARAM in " + ", ".join(SWEEP_PARAMS))
    return p


def _u64(text):
    try:
        n = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}")
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


COMMANDS = {"run": cmd_run, "bounds": cmd_bounds, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _Exit as ex:
        code, payload = ex.code, ex.payload
    except FlockdError as exc:
        code, payload = EXIT_INTEGRATION, exc.to_dict()
    sys.stderr.write(json.dumps(to_jsonable(payload), allow_nan=False) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
