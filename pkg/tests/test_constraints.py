import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nhdiff.constraints import (MechanicalSystem, adapted_frame, cbm_fields, frame_field,
                                generator_apply, martingale_defect, nh_covariant,
                                nh_generator_apply, projector, unconstrained)
from nhdiff.errors import NotInDistribution, RankDrop
from nhdiff.geometry import MetricField
from nhdiff.systems import robot, snakeboard

RP = robot.RobotParams()
SP = snakeboard.SnakeboardParams()


def random_robot_q(rng, k=None):
    return rng.uniform(-3, 3, size=(5,) if k is None else (k, 5))


def random_snake_q(rng, k=None):
    q = rng.uniform(-3, 3, size=(5,) if k is None else (k, 5))
    q[..., 0] = rng.uniform(-1.2, 1.2, size=q[..., 0].shape)
    return q


def test_adapted_frame_robot_seed_gives_closed_form():
    sys_ = robot.robot_system(RP)
    q = np.array([0.4, -1.0, 0.2, 0.3, 1.1])
    af = adapted_frame(sys_, q, seed_basis=robot.xi_fields(RP, q))
    assert np.allclose(af.tangent_cols, robot.frame(RP, q), atol=1e-12)


def test_robot_frame_normalizers():
    F = robot.frame_coefficients(RP)
    A = RP.J_w + RP.m * RP.R**2 / 4 + RP.J_0 * RP.R**2 / (4 * RP.c**2)
    assert F[0, 0] == pytest.approx(A**-0.5, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2), st.floats(0.05, 2), st.floats(0.05, 2), st.floats(0.05, 2),
       st.floats(0.0, 2), st.floats(0.05, 2), st.floats(0.05, 2))
def test_robot_frame_orthonormal_any_params(m0, mw, Jw, J0, l, c, R):
    p = robot.RobotParams(m0, mw, Jw, J0, l, c, R)
    q = np.array([0.1, 0.2, -0.3, 0.5, 2.0])
    U = robot.frame(p, q)
    g = robot.metric(p, q)
    assert np.max(np.abs(U.T @ g @ U - np.eye(2))) < 1e-10
    assert np.max(np.abs(robot.connection_form(p, q) @ U)) < 1e-10


def test_adapted_frame_trivial_constraints():
    mf = MetricField(3, lambda q: np.broadcast_to(np.eye(3), np.shape(q)[:-1] + (3, 3)))
    af = adapted_frame(unconstrained(mf), np.zeros(3))
    assert np.allclose(af.tangent_cols, np.eye(3))
    assert af.normal_cols.shape == (3, 0)


def test_adapted_frame_snakeboard_seed():
    sys_ = snakeboard.snakeboard_system(SP)
    q = np.array([0.3, 0.1, 0.5, -0.2, 0.9])
    af = adapted_frame(sys_, q, seed_basis=snakeboard.frame_seed(SP, q),
                       order=snakeboard.FRAME_ORDER)
    assert np.allclose(af.tangent_cols, snakeboard.frame(SP, q), atol=1e-12)


def test_adapted_frame_without_seed_spans_distribution():
    sys_ = dataclasses.replace(robot.robot_system(RP), frame_seed=None)
    q = np.array([0.4, -1.0, 0.2, 0.3, 1.1])
    af = adapted_frame(sys_, q)
    g = robot.metric(RP, q)
    assert np.max(np.abs(robot.connection_form(RP, q) @ af.tangent_cols)) < 1e-10
    assert np.max(np.abs(af.tangent_cols.T @ g @ af.normal_cols)) < 1e-10


def test_rank_drop():
    mf = MetricField(3, lambda q: np.broadcast_to(np.eye(3), np.shape(q)[:-1] + (3, 3)))
    forms = lambda q: np.broadcast_to(np.array([[1.0, 0, 0], [2.0, 0, 0]]),
                                      np.shape(q)[:-1] + (2, 3))
    sys_ = MechanicalSystem(3, mf, forms, 1)
    with pytest.raises(RankDrop):
        adapted_frame(sys_, np.zeros(3))


@pytest.mark.parametrize("name", ["robot", "snakeboard"])
def test_frame_adaptedness_many_points(name):
    rng = np.random.default_rng(11)
    if name == "robot":
        sys_, Q = robot.robot_system(RP), random_robot_q(rng, 1000)
    else:
        sys_, Q = snakeboard.snakeboard_system(SP), random_snake_q(rng, 1000)
    U = frame_field(sys_)(Q)
    C = sys_.forms(Q)
    G = sys_.metric(Q)
    assert np.max(np.abs(C @ U)) < 1e-9
    N = np.linalg.solve(G, np.swapaxes(C, -1, -2))
    assert np.max(np.abs(np.swapaxes(N, -1, -2) @ G @ U)) < 1e-9


def test_nh_covariant_examples():
    sys_ = snakeboard.snakeboard_system(SP)
    u2 = lambda q: snakeboard.frame(SP, q)[..., :, 1]
    rng = np.random.default_rng(2)
    for q in random_snake_q(rng, 10):
        assert np.linalg.norm(nh_covariant(sys_, u2, u2, q)) < 1e-8
    mf = MetricField(2, lambda q: np.broadcast_to(np.eye(2), np.shape(q)[:-1] + (2, 2)))
    flat = unconstrained(mf)
    const = lambda q: np.broadcast_to([1.0, -1.0], np.shape(q))
    assert np.allclose(nh_covariant(flat, const, const, [0.2, 0.4]), 0.0, atol=1e-9)


def test_nh_covariant_robot_against_xi_basis():
    sys_ = robot.robot_system(RP)
    q = np.array([0.0, 0.0, 0.3, -0.1, 0.0])
    u1 = lambda s: robot.frame(RP, s)[..., :, 0]
    got = nh_covariant(sys_, u1, u1, q)
    # oracle: analytic nabla_{u1} u1 with the theta-derivative of u1, then normal equations
    from nhdiff.geometry import christoffel
    g = robot.metric(RP, q)
    u = u1(q)
    du = np.zeros(5)
    F = robot.frame_coefficients(RP)
    du[robot.X] = (RP.R / 2) * np.sin(q[robot.TH]) * F[:, 0].sum()
    du[robot.Y] = -(RP.R / 2) * np.cos(q[robot.TH]) * F[:, 0].sum()
    full = du * u[robot.TH] + np.einsum("ijk,j,k->i", christoffel(sys_.metric, q), u, u)
    Xi = robot.xi_fields(RP, q)
    expected = Xi @ np.linalg.solve(Xi.T @ g @ Xi, Xi.T @ g @ full)
    assert np.allclose(got, expected, atol=1e-8)


def test_nh_covariant_rejects_non_distribution_field():
    sys_ = robot.robot_system(RP)
    ex = lambda q: np.broadcast_to(np.eye(5)[robot.X], np.shape(q))
    with pytest.raises(NotInDistribution):
        nh_covariant(sys_, ex, ex, np.zeros(5))


def test_cbm_snakeboard_drift_vanishes():
    f = cbm_fields(snakeboard.snakeboard_system(SP), 0.7)
    Q = random_snake_q(np.random.default_rng(5), 50)
    assert np.max(np.abs(f.drift_field(Q))) < 1e-8


def test_cbm_unconstrained_is_euclidean_bm():
    mf = MetricField(3, lambda q: np.broadcast_to(np.eye(3), np.shape(q)[:-1] + (3, 3)))
    f = cbm_fields(unconstrained(mf), 2.0)
    q = np.array([0.1, 0.2, 0.3])
    assert np.allclose(f.diffusion(q), 2.0 * np.eye(3))
    assert np.allclose(f.drift_field(q), 0.0, atol=1e-9)


def test_cbm_robot_drift_is_half_lifted_b():
    # the robot drift does not vanish: it is sigma^2/2 hl(b)
    sigma = 0.8
    f = cbm_fields(robot.robot_system(RP), sigma)
    Q = random_robot_q(np.random.default_rng(9), 40)
    assert np.max(np.abs(f.drift_field(Q) - robot.cbm_drift(RP, Q, sigma))) < 1e-8
    f0 = cbm_fields(robot.robot_system(robot.RobotParams(l=0.0)), sigma)
    assert np.max(np.abs(f0.drift_field(Q))) < 1e-8


def test_cbm_diffusion_in_distribution():
    sys_ = robot.robot_system(RP)
    f = cbm_fields(sys_, 1.3)
    Q = random_robot_q(np.random.default_rng(4), 100)
    assert np.max(np.abs(sys_.forms(Q) @ f.diffusion(Q))) < 1e-9
    assert len(f.diffusion_fields) == 2


@pytest.mark.parametrize("name", ["robot", "snakeboard"])
def test_martingale_defect_zero(name):
    rng = np.random.default_rng(6)
    if name == "robot":
        sys_, Q = robot.robot_system(RP), random_robot_q(rng, 5)
    else:
        sys_, Q = snakeboard.snakeboard_system(SP), random_snake_q(rng, 5)
    for q in Q:
        assert martingale_defect(sys_, 1.1, q) < 1e-9


def test_martingale_defect_negative_control():
    sys_ = robot.robot_system(RP)
    f = cbm_fields(sys_, 1.0)
    bad = dataclasses.replace(f, drift_field=lambda q: f.drift_field(q) + f.frame(q)[..., :, 0])
    assert martingale_defect(sys_, 1.0, np.zeros(5), bad) > 0.1


def test_projector_properties():
    sys_ = snakeboard.snakeboard_system(SP)
    q = np.array([0.2, 0.0, 1.0, 2.0, 0.3])
    P = projector(sys_, q)
    G = sys_.metric(q)
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.allclose(G @ P, (G @ P).T, atol=1e-12)


def _test_function(q):
    q = np.asarray(q, float)
    return (1 + q[0] ** 2 * q[2]) * np.sin(q[4]) + np.cos(q[1] - q[3])


@pytest.mark.parametrize("name", ["robot", "snakeboard"])
def test_generator_identity(name):
    sigma = 0.9
    if name == "robot":
        sys_, q = robot.robot_system(RP), np.array([0.3, -0.4, 0.5, 0.2, 0.8])
    else:
        sys_, q = snakeboard.snakeboard_system(SP), np.array([0.3, -0.4, 0.5, 0.2, 0.8])
    f = cbm_fields(sys_, sigma)
    lhs = nh_generator_apply(sys_, sigma, _test_function, q, frame=f.frame)
    rhs = generator_apply(f.drift_field, f.diffusion, _test_function, q)
    assert abs(lhs - rhs) < 1e-6


def test_generator_frame_independence():
    sigma = 1.0
    sys_ = robot.robot_system(RP)
    q = np.array([0.3, -0.4, 0.5, 0.2, 0.8])
    rot = np.array([[np.cos(0.7), -np.sin(0.7)], [np.sin(0.7), np.cos(0.7)]])
    other = lambda s: robot.xi_fields(RP, s) @ rot
    f1 = frame_field(sys_)
    f2 = frame_field(sys_, seed=other)
    assert not np.allclose(f1(q), f2(q))
    a = nh_generator_apply(sys_, sigma, _test_function, q, frame=f1)
    b = nh_generator_apply(sys_, sigma, _test_function, q, frame=f2)
    assert abs(a - b) < 1e-6


def test_robot_second_order_part_kills_coordinates():
    # sum_a u_a(u_a q^i) = 0 for every coordinate function
    U = lambda q: robot.frame(RP, q)
    q = np.array([0.3, -0.4, 0.5, 0.2, 0.8])
    h = 1e-5
    for i in range(5):
        total = 0.0
        for a in range(2):
            ua = U(q)[:, a]
            total += (U(q + h * ua)[i, a] - U(q - h * ua)[i, a]) / (2 * h)
        assert abs(total) < 1e-6
