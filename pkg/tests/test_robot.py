import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from nhdiff.systems import robot

import oracles

RP = robot.RobotParams()
pos = st.floats(0.05, 2)


def test_params_validation():
    with pytest.raises(ValueError):
        robot.RobotParams(c=0.0)
    with pytest.raises(ValueError):
        robot.RobotParams(l=-0.1)
    assert RP.m == pytest.approx(1.5)


def test_kernel_of_connection_is_xi():
    rng = np.random.default_rng(0)
    for q in rng.uniform(-3, 3, (20, 5)):
        A = robot.connection_form(RP, q)
        assert np.max(np.abs(A @ robot.xi_fields(RP, q))) < 1e-10
        assert np.max(np.abs(A @ robot.se2_generators(q).T - np.eye(3))) < 1e-10


def test_xi_norms_constant():
    rng = np.random.default_rng(1)
    vals = []
    for q in rng.uniform(-3, 3, (20, 5)):
        Xi = robot.xi_fields(RP, q)
        G = Xi.T @ robot.metric(RP, q) @ Xi
        vals.append([G[0, 0], G[1, 1], G[0, 1]])
    vals = np.array(vals)
    assert np.ptp(vals, axis=0).max() < 1e-12
    assert vals[0, 0] == pytest.approx(RP.xi_norm2, rel=1e-12)
    assert vals[0, 0] + vals[0, 2] == pytest.approx(oracles.ROBOT_XI_SUM, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(pos, pos, pos, pos, pos, pos, pos)
def test_closed_form_matches_oracle_reading(m0, mw, Jw, J0, l, c, R):
    p = robot.RobotParams(m0, mw, Jw, J0, l, c, R)
    assert robot.robot_drift_closed_form(p)[0] == pytest.approx(
        oracles.robot_b_closed(m0, mw, Jw, J0, l, c, R), rel=1e-12)


def test_closed_form_default_and_l0():
    assert robot.robot_drift_closed_form(RP) == pytest.approx([oracles.ROBOT_B_DEFAULT] * 2, rel=1e-14)
    assert np.array_equal(robot.robot_drift_closed_form(robot.RobotParams(l=0.0)), [0.0, 0.0])


def test_mean_motion_ode_examples():
    q = np.array([0.3, 0.1, 0.5, -0.4, 0.0])
    v = robot.robot_mean_motion_ode(RP, q)
    b = oracles.ROBOT_B_DEFAULT
    assert v[robot.PSI1] == pytest.approx(0.5 * b, rel=1e-12)
    assert v[robot.PSI2] == pytest.approx(0.5 * b, rel=1e-12)
    # 1/2 b (xi1 + xi2) at theta = 0: x-rate -R/2 * b, y-rate 0, theta-rate 0
    assert v[robot.X] == pytest.approx(-0.5 * RP.R * b, rel=1e-12)
    assert v[robot.Y] == pytest.approx(0.0, abs=1e-15)
    assert v[robot.TH] == pytest.approx(0.0, abs=1e-15)
    assert np.array_equal(robot.robot_mean_motion_ode(robot.RobotParams(l=0.0), q), np.zeros(5))


def test_mean_exact_solves_its_ode_when_theta_frozen():
    # with theta pinned the decay factor reduces to t; compare to the ODE flow
    q0 = np.array([0.0, 0.0, 0.0, 0.0, 0.7])
    sol = solve_ivp(lambda t, q: robot.robot_mean_motion_ode(RP, q), (0, 1), q0,
                    rtol=1e-12, atol=1e-12)
    ode = sol.y[:, -1]
    exact = robot.robot_mean_exact(RP, q0, 1.0)
    assert np.allclose(exact[[0, 1, 4]], ode[[0, 1, 4]], atol=1e-10)
    # theta diffusion shortens the x-y excursion relative to the ODE
    assert np.linalg.norm(exact[2:4]) < np.linalg.norm(ode[2:4])


def test_control_and_kappa():
    ctl = robot.RobotControl(rho=1.0)
    t1, T = ctl.t1, ctl.T
    assert ctl.theta(0.0) == pytest.approx(np.pi / 2)
    assert ctl.theta(t1) == pytest.approx(np.pi, rel=1e-14)
    assert ctl.theta(T) == pytest.approx(2.5 * np.pi, rel=1e-14)
    # theta is continuous at t1; its rate lambda jumps from 2 t1 down to 2
    assert ctl.theta(t1 - 1e-12) == pytest.approx(ctl.theta(t1), abs=1e-9)
    assert ctl.lam(t1 - 1e-12) == pytest.approx(2 * t1)
    assert ctl.lam(t1) == pytest.approx(2.0)
    assert ctl.lam(T) == pytest.approx(0.0, abs=1e-14)
    p = robot.RobotParams(D1=1.2, D2=0.8, R=0.3, c=0.1)
    assert robot.kappa(p) == pytest.approx(oracles.KAPPA_REFERENCE, rel=1e-14)


def test_theta_rate_is_lambda():
    ctl = robot.RobotControl()
    t = np.linspace(0.01, ctl.T - 0.01, 50)
    h = 1e-6
    d = (ctl.theta(t + h) - ctl.theta(t - h)) / (2 * h)
    assert np.allclose(d, ctl.lam(t), atol=1e-6)


def test_plan_kappa_zero_closes_circle():
    res = robot.robot_plan_mean(robot.RobotParams(D1=1.0, D2=1.0), robot.RobotControl(1.0), 10_000)
    assert np.linalg.norm(res.mean[-1] - [1.0, 0.0]) < 1e-6
    assert np.array_equal(res.mean, res.nominal)
    # nominal circle: centre (rho, -rho), radius rho
    r = np.linalg.norm(res.nominal - [1.0, -1.0], axis=1)
    assert np.max(np.abs(r - 1.0)) < 1e-6


def test_plan_reference_gap_and_variants():
    p = robot.RobotParams(D1=1.2, D2=0.8, R=0.3, c=0.1)
    ctl = robot.RobotControl(1.0)
    res = robot.robot_plan_mean(p, ctl, 10_000)
    assert np.linalg.norm(res.mean[-1] - [1.0, 0.0]) > 0.05
    assert res.accelerating.sum() > 0 and (~res.accelerating).sum() > 0
    lit = robot.robot_plan_mean(p, ctl, 10_000, variant="paper-literal")
    assert not np.allclose(lit.mean, res.mean)
    kin = robot.robot_plan_mean(p, ctl, 10_000, variant="kinematic")
    assert np.all(np.isfinite(kin.mean))
    with pytest.raises(ValueError):
        robot.robot_plan_mean(p, ctl, 10_000, variant="other")
    with pytest.raises(ValueError):
        robot.robot_plan_mean(p, ctl, 10_001)
    with pytest.raises(ValueError):
        robot.robot_plan_mean(p, ctl, 2)
    with pytest.raises(ValueError):
        robot.robot_plan_mean(p, ctl, 100, t_final=0.5)


def test_plan_truncated_horizon_and_t1_node():
    ctl = robot.RobotControl(1.0)
    res = robot.robot_plan_mean(robot.RobotParams(), ctl, 100, t_final=1.5)
    assert res.t[-1] == 1.5 and res.t.shape == (101,)
    full = robot.robot_plan_mean(robot.RobotParams(), ctl, 1000)
    assert np.any(full.t == ctl.t1)


def test_controlled_drift_tracks_nominal_heading():
    # deterministic controlled kinematics: theta' = lambda(t)
    p = robot.RobotParams()
    ctl = robot.RobotControl(1.0)
    q = np.array([0.0, 0.0, 1.0, 0.0, np.pi / 2])
    v = robot.controlled_drift(p, ctl, 0.5, q)
    assert v[robot.TH] == pytest.approx(ctl.lam(0.5), rel=1e-12)
    speed = np.hypot(v[robot.X], v[robot.Y])
    assert speed == pytest.approx(ctl.lam(0.5) * ctl.rho, rel=1e-12)
    D = robot.controlled_diffusion(robot.RobotParams(D1=4.0, D2=0.0), q)
    assert np.allclose(D[:, 0], 2 * robot.xi_fields(p, q)[:, 0])
    assert np.allclose(D[:, 1], 0.0)


def test_monte_carlo_matches_exact_mean():
    from nhdiff.sde import SDEProblem, TimeGrid, ensemble_run, ensemble_stats
    prob = SDEProblem(5, lambda t, Q: robot.cbm_drift(RP, Q), lambda t, Q: robot.frame(RP, Q), 2)
    times = [0.5, 1.0]
    ens = ensemble_run(prob, TimeGrid(0.0, 1.0, 500), np.zeros(5), 3, 4000, record_times=times)
    mean, se, _ = ensemble_stats(ens)
    exact = robot.robot_mean_exact(RP, np.zeros(5), np.array(times))
    assert np.all(np.abs(mean[1:] - exact) < 4 * se[1:])
