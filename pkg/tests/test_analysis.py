import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flockd import analysis as an
from flockd import dynamics as dy
from flockd import gas_model as gm
from flockd import kernels as kn
from flockd.dynamics import Ensemble, IntegratorConfig, Model, Trajectory
from flockd.errors import DomainError, StateError, UsageError

ONE = kn.Constant(1.0)


def rel(model, x, v, T, chi=1, c=1e3):
    return Ensemble(x, v, T, chi, c, model)


def state(rng, N, dim=3, vmax=0.5):
    return rng.normal(size=(N, dim)), rng.uniform(-vmax, vmax, size=(N, dim)), rng.uniform(0.5, 2.0, size=N)


# ----------------------------------------------------------- conserved

def test_single_particle_at_rest():
    cs = an.conserved(Ensemble(np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1), 1))
    assert cs.E == 1.5 and cs.S == 0.0
    assert np.array_equal(cs.M, np.zeros(3))


def test_antisymmetric_pair_has_zero_momentum():
    v = np.array([[0.3, -0.7, 0.2], [-0.3, 0.7, -0.2]])
    for ens in (Ensemble(np.zeros((2, 3)), v, np.ones(2)), rel(Model.SYNGE, np.zeros((2, 3)), v, np.ones(2))):
        assert np.array_equal(an.conserved(ens).M, np.zeros(3))


def test_production_vanishes_for_equal_states():
    v = np.tile([0.3, 0.1, 0.0], (4, 1))
    x = np.random.default_rng(0).normal(size=(4, 3))
    for model in (Model.SYNGE, Model.SIMPLIFIED):
        assert an.entropy_rate(rel(model, x, v, np.full(4, 1.3)), ONE, kn.power_law()) == 0.0


def test_conserved_rejects_nonpositive_temperature():
    with pytest.raises(StateError):
        an.conserved(Ensemble(np.zeros((2, 3)), np.zeros((2, 3)), np.array([1.0, -1.0])))


def test_energy_matches_gas_model_sum():
    rng = np.random.default_rng(1)
    x, v, T = state(rng, 5)
    for chi in (1, 2, 3, 4):
        cs = an.conserved(rel(Model.SYNGE, x, v, T, chi, 50.0))
        assert cs.E == pytest.approx(gm.relativistic_energy(chi, T, v, 50.0).sum(), rel=1e-14)
        assert cs.M == pytest.approx(gm.auxiliary_momentum(chi, T, v, 50.0).sum(axis=0), rel=1e-14)
        assert math.isnan(cs.S)
        ccs = an.conserved(Ensemble(x, v, T, chi))
        assert ccs.E == pytest.approx(((2 * chi + 1) * T / 2 + 0.5 * (v * v).sum(axis=1)).sum(), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(N=st.integers(2, 8), chi=st.integers(1, 4), seed=st.integers(0, 2**32))
def test_classical_entropy_rate_is_log_temperature_derivative(N, chi, seed):
    x, v, T = state(np.random.default_rng(seed), N)
    ens = Ensemble(x, v, T, chi)
    phi, zeta = kn.power_law(1.5, 0.7), kn.hat(2.0, 6.0)
    d = dy.tcs_rhs(ens, phi, zeta)
    rate = an.entropy_rate(ens, phi, zeta)
    assert rate == pytest.approx(float(np.sum(d.dT / T)), rel=1e-10, abs=1e-13)
    assert rate >= 0


@settings(max_examples=40, deadline=None)
@given(N=st.integers(2, 8), seed=st.integers(0, 2**32), model=st.sampled_from([Model.SYNGE, Model.SIMPLIFIED]))
def test_relativistic_production_is_nonnegative(N, seed, model):
    x, v, T = state(np.random.default_rng(seed), N)
    assert an.entropy_rate(rel(model, x, v, T, 2, 20.0), ONE, kn.power_law()) >= 0


def test_mechanical_energy_is_nan():
    ens = rel(Model.MECHANICAL, np.zeros((2, 3)), np.zeros((2, 3)), np.ones(2))
    assert math.isnan(an.conserved(ens).E)


# ------------------------------------------------------------- metrics

def test_flocking_metrics_by_hand():
    x = np.array([[0.0, 0, 0], [3.0, 4, 0]])
    v = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    m = an.flocking_metrics(Ensemble(x, v, np.array([1.0, 2.0])), 1.5)
    assert (m.D_x, m.D_v, m.D_T) == (5.0, 2.0, 1.0)
    assert m.norm_V == pytest.approx(math.sqrt(2))
    assert m.norm_That == pytest.approx(math.sqrt(1.5 * 0.5))
    assert m.D_w == m.D_v and m.norm_W == m.norm_V


# -------------------------------------------------------------- bounds

def test_temperature_bounds_single_particle():
    assert an.temperature_bounds(Ensemble(np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1))) == (1.0, 1.0)


def test_temperature_bounds_pair():
    lo, hi = an.temperature_bounds(Ensemble(np.zeros((2, 3)), np.zeros((2, 3)), np.ones(2)))
    assert hi == pytest.approx(2.0) and lo == pytest.approx(0.5)


@settings(max_examples=80, deadline=None)
@given(N=st.integers(1, 20), chi=st.integers(1, 4), seed=st.integers(0, 2**32))
def test_initial_temperatures_inside_bounds(N, chi, seed):
    x, v, T = state(np.random.default_rng(seed), N)
    lo, hi = an.temperature_bounds(Ensemble(x, v, T, chi))
    assert lo <= T.min() * (1 + 1e-12) and T.max() <= hi * (1 + 1e-12)


def test_limits_zero_momentum():
    x, v, T = state(np.random.default_rng(3), 6)
    ens = dy.normalize_frame(Ensemble(x, v, T, 1))
    _, T_inf = an.asymptotic_limits(ens)
    assert T_inf == pytest.approx(2 / 3 * an.conserved(ens).E / 6, rel=1e-13)


def test_limits_energy_average():
    ens = Ensemble(np.zeros((2, 3)), np.zeros((2, 3)), np.array([1.0, 3.0]), 2)
    assert an.asymptotic_limits(ens)[1] == pytest.approx(2.0, rel=1e-15)


def test_limits_with_momentum():
    v = np.array([[1.0, 0, 0], [1.0, 0, 0]])
    v_inf, T_inf = an.asymptotic_limits(Ensemble(np.zeros((2, 3)), v, np.array([1.0, 3.0]), 1))
    assert v_inf == pytest.approx([1.0, 0, 0])
    assert T_inf == pytest.approx(2.0)


@pytest.mark.parametrize("chi", [1, 2, 3, 4])
def test_relativistic_limit_near_classical(chi):
    x, v, T = state(np.random.default_rng(4), 5)
    _, Tc = an.asymptotic_limits(Ensemble(x, v, T, chi))
    w, Tr = an.asymptotic_limits(rel(Model.SYNGE, x, v, T, chi, 1e4))
    assert abs(Tr - Tc) < 1e-6
    # the limit state reproduces the per-particle energy
    s = np.linalg.norm(w) / math.sqrt(gm.h_factor(chi, 1e8 / Tr) ** 2 + w @ w / 1e8)
    e = gm.relativistic_energy(chi, Tr, [s, 0, 0], 1e4)
    assert e == pytest.approx(an.conserved(rel(Model.SYNGE, x, v, T, chi, 1e4)).E / 5, rel=1e-12)


def test_simplified_limit_solves_its_energy():
    x, v, T = state(np.random.default_rng(5), 4)
    ens = dy.normalize_frame(rel(Model.SIMPLIFIED, x, v, T, 1, 30.0))
    _, T_inf = an.asymptotic_limits(ens)
    assert T_inf == pytest.approx(an.conserved(ens).E / 4, rel=1e-12)


# ------------------------------------------------------------ regimes

def pair_state():
    x = np.array([[-0.5, 0, 0], [0.5, 0, 0]])
    v = np.array([[0.3, 0, 0], [-0.3, 0, 0]])
    return Ensemble(x, v, np.ones(2))


def test_regime1_pair_constants():
    r = an.regime_constants(pair_state(), ONE, ONE, 1)
    T_hi = 2 * (3.0 + 0.09) / 3
    assert r.T_upper == pytest.approx(T_hi)
    assert r.T_lower == pytest.approx(1 / T_hi)
    assert r.T_inf == pytest.approx((3.09 / 2) / 1.5)
    assert r.rate == pytest.approx(1 / T_hi)
    assert r.lam > 0 and r.feasible
    assert r.A == pytest.approx(1.1 * r.A_threshold)
    assert r.position_bound == pytest.approx(math.sqrt(0.5) + T_hi * math.sqrt(0.18))


def test_regime1_flags_non_unit_kernels():
    r = an.regime_constants(pair_state(), kn.Constant(2.0), ONE, 1)
    assert not r.flags["unit_kernels"] and not r.feasible


def test_regime2_constant_kernel_satisfies_epsilon_condition():
    for phi in (0.2, 1.0, 7.0):
        r = an.regime_constants(pair_state(), kn.Constant(phi), kn.Constant(phi), 2)
        assert r.flags["epsilon_condition"]
        assert r.stats["epsilon"] == 0.0
        assert r.rate == pytest.approx(phi / (2 * r.T_upper))


def test_regime2_epsilon_threshold_is_sharp():
    ens = pair_state()
    lo, hi = an.temperature_bounds(ens)
    limit = lo / (2 * hi)
    ok = an.regime_constants(ens, kn.PerturbedMatrix(np.array([[1, 1 + 0.99 * limit], [1 + 0.99 * limit, 1]])),
                             ONE, 2)
    bad = an.regime_constants(ens, kn.PerturbedMatrix(np.array([[1, 1 + 1.01 * limit], [1 + 1.01 * limit, 1]])),
                              ONE, 2)
    assert ok.flags["epsilon_condition"] and not bad.flags["epsilon_condition"]


def test_regime3_constant_profile_collapses():
    ens = pair_state()
    phi0 = 2.0
    r = an.regime_constants(ens, kn.Constant(phi0), kn.Constant(phi0), 3)
    assert r.chi_U == pytest.approx(phi0 / (2 * r.T_upper), rel=1e-14)
    U_min = math.sqrt(2) * r.norm_X0 + 2 * math.sqrt(2) * r.T_upper * r.norm_V0 / phi0
    assert r.U == pytest.approx(U_min, rel=1e-12)
    assert r.U >= U_min * (1 - 1e-15)
    assert r.position_scaled and r.feasible


def test_regime3_infeasible_is_reported():
    rng = np.random.default_rng(6)
    ens = dy.normalize_frame(Ensemble(10 * rng.normal(size=(6, 3)), 3 * rng.normal(size=(6, 3)),
                                      rng.uniform(0.2, 5, 6)))
    r = an.regime_constants(ens, kn.power_law(1.0, 1.0), ONE, 3)
    assert not r.feasible and r.U is None and not r.flags["well_prepared"]
    assert r.notes


def test_regime3_needs_profile():
    with pytest.raises(UsageError):
        an.regime_constants(pair_state(), kn.perturbed_constant(2, 1.0, 0.1), ONE, 3)


def test_regime_errors():
    with pytest.raises(UsageError):
        an.regime_constants(pair_state(), ONE, ONE, 4)
    with pytest.raises(UsageError):
        an.regime_constants(pair_state(), ONE, ONE, 1, margin=0)
    mech = rel(Model.MECHANICAL, np.zeros((2, 3)), np.zeros((2, 3)), np.ones(2))
    with pytest.raises(UsageError):
        an.regime_constants(mech, ONE, ONE, 1)


def test_relativistic_regime1_records_convention():
    e = pair_state()
    r = an.regime_constants(rel(Model.SYNGE, e.x, e.v, e.T, 1, 1e3), ONE, ONE, 1)
    assert r.relativistic and r.flags["c_condition"] and r.conventions
    assert r.rate == pytest.approx(1 / (2 * r.T_upper))
    small_c = an.regime_constants(rel(Model.SYNGE, e.x, e.v, e.T, 1, 2.3), ONE, ONE, 1)
    assert not small_c.flags["c_condition"]


@settings(max_examples=40, deadline=None)
@given(N=st.integers(2, 10), chi=st.integers(1, 4), seed=st.integers(0, 2**32), regime=st.integers(1, 2))
def test_constants_positive_when_flags_hold(N, chi, seed, regime):
    x, v, T = state(np.random.default_rng(seed), N)
    r = an.regime_constants(dy.normalize_frame(Ensemble(x, v, T, chi)), ONE, ONE, regime)
    assert r.T_lower <= r.T_upper
    if r.feasible:
        assert r.A > 0 and r.lam > 0 and r.rate > 0 and r.position_bound > 0


# ------------------------------------------------------------ envelopes

def stationary(n=30):
    t = np.linspace(0, 3, n)
    x = np.tile(np.array([[0.0, 0, 0], [1.0, 0, 0]]), (n, 1, 1))
    return Trajectory(t, x, np.zeros_like(x), np.ones((n, 2)), 1, math.inf, Model.CLASSICAL)


def test_stationary_trajectory_passes_with_initial_slack():
    traj = stationary()
    r = an.regime_constants(traj.state(0), ONE, ONE, 1)
    checks = an.envelope_check(traj, r)
    assert [c.status for c in checks] == ["pass"] * 3
    assert checks[0].worst_slack == pytest.approx(r.position_bound - math.sqrt(1.0))
    assert checks[1].worst_slack == 0.0 and checks[2].worst_slack == 0.0


@pytest.fixture(scope="module")
def regime1_run():
    rng = np.random.default_rng(8)
    x, v, T = state(rng, 4)
    ens = dy.normalize_frame(Ensemble(x, v, T, 1))
    traj = dy.integrate(ens, ONE, ONE, IntegratorConfig(t_end=10.0, dt=0.01, sample_stride=10))
    return traj, an.regime_constants(ens, ONE, ONE, 1)


def test_regime1_run_passes(regime1_run):
    traj, r = regime1_run
    assert r.feasible
    assert all(c.status == "pass" for c in an.envelope_check(traj, r))
    assert all(c.passed for c in an.invariant_battery(traj, ONE, ONE))


def test_corrupted_velocity_fails_at_located_time(regime1_run):
    traj, r = regime1_run
    # velocities scaled to ride just under the guaranteed envelope
    scale = 0.99 * np.exp(-r.rate * traj.t) * r.norm_V0 / np.linalg.norm(traj.v.reshape(len(traj), -1), axis=1)
    v = traj.v * scale[:, None, None]
    ok = Trajectory(traj.t, traj.x, v, traj.T, traj.chi, traj.c, traj.model)
    assert {c.name: c for c in an.envelope_check(ok, r)}["velocity"].status == "pass"
    k = int(np.argmin(np.abs(traj.t - 5.0)))
    v = v.copy()
    v[k] *= 10
    bad = Trajectory(traj.t, traj.x, v, traj.T, traj.chi, traj.c, traj.model)
    checks = {c.name: c for c in an.envelope_check(bad, r)}
    assert checks["velocity"].status == "fail"
    assert checks["velocity"].first_fail_t == pytest.approx(5.0)
    assert checks["velocity"].worst_t == pytest.approx(5.0)


def test_infeasible_report_is_not_applicable(regime1_run):
    traj, r = regime1_run
    r2 = an.regime_constants(traj.state(0), kn.Constant(2.0), ONE, 1)
    assert {c.status for c in an.envelope_check(traj, r2)} == {"not-applicable"}


def test_envelope_rejects_mismatched_report(regime1_run):
    traj, r = regime1_run
    e = pair_state()
    with pytest.raises(UsageError):
        an.envelope_check(traj, an.regime_constants(e, ONE, ONE, 1))


def test_diagnostics_columns(regime1_run):
    traj, r = regime1_run
    d = an.diagnostics(traj, ONE, ONE, r)
    assert list(d) == ["t", "M_0", "M_1", "M_2", "E", "S", "D_x", "D_v", "D_T", "norm_V", "norm_That", "slack"]
    assert np.all(d["slack"] >= -1e-10)
    assert np.all(np.diff(d["S"]) >= -1e-10)
    assert np.all(np.isnan(an.diagnostics(traj, ONE, ONE)["slack"]))


def test_limit_consistency(regime1_run):
    traj, r = regime1_run
    fin = traj.final
    dev = max(np.abs(fin.v - r.v_inf).max(), np.abs(fin.T - r.T_inf).max())
    dev0 = max(np.abs(traj.v[0] - r.v_inf).max(), np.abs(traj.T[0] - r.T_inf).max())
    assert dev <= math.exp(-r.lam * traj.t[-1] / 2) * dev0


def test_relativistic_temperature_spread_inequality():
    rng = np.random.default_rng(9)
    x, v, T = state(rng, 6)
    ens = dy.normalize_frame(rel(Model.SYNGE, x, v, T, 2, 1e3))
    T_inf = an.asymptotic_limits(ens)[1]
    traj = dy.integrate(ens, ONE, ONE, IntegratorConfig(t_end=2.0, dt=0.01, sample_stride=10))
    for Ts in traj.T:
        lhs = ((Ts[:, None] - Ts[None, :]) ** 2).sum()
        assert lhs <= 2 * 6 * 1.01 * ((Ts - T_inf) ** 2).sum()


# ---------------------------------------------------------------- fits

def test_fit_exact_exponential():
    t = np.linspace(0, 5, 51)
    f = an.fit_decay_rate(t, 3 * np.exp(-2 * t))
    assert f.rate == pytest.approx(2.0, abs=1e-9)
    assert f.residual < 1e-12 and f.window == (0.0, 5.0)


def test_fit_perturbed_exponential():
    t = np.linspace(0, 10, 200)
    assert an.fit_decay_rate(t, np.exp(-t) * (1 + 0.01 * np.sin(t))).rate == pytest.approx(1.0, abs=0.02)


def test_fit_constant():
    assert an.fit_decay_rate(np.arange(20.0), np.full(20, 4.2)).rate == pytest.approx(0.0, abs=1e-12)


def test_fit_errors():
    t = np.arange(20.0)
    with pytest.raises(DomainError):
        an.fit_decay_rate(t, np.where(t == 3, 0.0, 1.0))
    with pytest.raises(UsageError):
        an.fit_decay_rate(t[:9], np.ones(9))
    with pytest.raises(UsageError):
        an.fit_decay_rate(t, np.ones(20), window=(0, 5))
    assert an.fit_decay_rate(t, np.exp(-0.5 * t), window=(5, 15)).window == (5, 15)


# ------------------------------------------------------ classical limit

LIMIT_CFG = IntegratorConfig(t_end=1.0, dt=0.01, sample_stride=5)


def limit_data():
    rng = np.random.default_rng(11)
    x, v, T = state(rng, 4)
    ens = dy.normalize_frame(Ensemble(x, v, T, 1))
    return ens.x, ens.v, ens.T


def test_classical_limit_slope():
    rows, slope = an.classical_limit_study(*limit_data(), 1, ONE, ONE, [100.0, 200.0, 400.0, math.inf], LIMIT_CFG)
    assert slope == pytest.approx(-2.0, abs=0.2)
    assert rows[-1] == {"c": math.inf, "deviation": 0.0, "error": None}
    devs = [r["deviation"] for r in rows[:3]]
    assert devs[0] > devs[1] > devs[2] > 0


def test_classical_limit_chi_sweep():
    x, v, T = limit_data()
    for chi in (1, 2, 3, 4):
        rows, _ = an.classical_limit_study(x, v, T, chi, ONE, ONE, [100.0], LIMIT_CFG)
        assert math.isfinite(rows[0]["deviation"]) and rows[0]["error"] is None


def test_classical_limit_partial_failure():
    x, v, T = limit_data()
    rows, _ = an.classical_limit_study(x, v, T, 1, ONE, ONE, [0.5, 100.0], LIMIT_CFG)
    assert rows[0]["error"] is not None and math.isnan(rows[0]["deviation"])
    assert rows[1]["error"] is None


def test_classical_limit_model_restriction():
    with pytest.raises(UsageError):
        an.classical_limit_study(*limit_data(), 1, ONE, ONE, [100.0], LIMIT_CFG, model=Model.SIMPLIFIED)
