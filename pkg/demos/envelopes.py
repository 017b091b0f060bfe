"""Library-level tour: simulate a classical flock and compare it with its guaranteed envelopes.

Run with ``python demos/envelopes.py``.
"""

import math

import numpy as np

from flockd import analysis as an
from flockd import dynamics as dy
from flockd import kernels as kn


def main():
    rng = np.random.default_rng(1)
    N = 6
    ens = dy.Ensemble(rng.uniform(-1, 1, (N, 3)), 0.5 * rng.standard_normal((N, 3)), rng.uniform(0.8, 1.2, N), chi=2)
    ens = dy.normalize_frame(ens)
    one = kn.Constant(1.0)

    report = an.regime_constants(ens, one, one, regime=1)
    print(f"T bounds [{report.T_lower:.4g}, {report.T_upper:.4g}], T_inf {report.T_inf:.6g}")
    print(f"velocity rate {report.rate:.4g}, A {report.A:.4g}, lambda {report.lam:.4g}, feasible {report.feasible}")

    traj = dy.integrate(ens, one, one, dy.IntegratorConfig(t_end=15.0, dt=1e-3, sample_stride=100))
    diag = an.diagnostics(traj, one, one, report)
    print("\n    t      |V|        envelope   D_T")
    for k in range(0, len(traj), 15):
        t = diag["t"][k]
        env = diag["norm_V"][0] * math.exp(-report.rate * t)
        print(f"{t:6.2f}  {diag['norm_V'][k]:.3e}  {env:.3e}  {diag['D_T'][k]:.3e}")

    for check in an.envelope_check(traj, report) + an.invariant_battery(traj, one, one, diag):
        print(f"{check.status:>6}  {check.name}")
    V = diag["norm_V"]
    keep = V > 1e-10 * V[0]
    fit = an.fit_decay_rate(diag["t"][keep], V[keep])
    print(f"\nfitted decay rate {fit.rate:.4g} vs guaranteed {report.rate:.4g}")


if __name__ == "__main__":
    main()
