import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nhdiff.sde import (CHUNK, Calculus, SDEProblem, TimeGrid, brownian_increments,
                        ensemble_run, ensemble_stats, integrate, integrate_batch, paths_csv, strat_to_ito_correction,
                        to_ito)
from nhdiff.systems import snakeboard

import oracles


def linear_noise(calculus=Calculus.STRATONOVICH):
    return SDEProblem(1, lambda t, Q: np.zeros(np.shape(Q)), lambda t, Q: np.asarray(Q)[..., None],
                      1, calculus)


def pure_bm(n=2):
    return SDEProblem(n, lambda t, Q: np.zeros(np.shape(Q)),
                      lambda t, Q: np.broadcast_to(np.eye(n), np.shape(Q) + (n,)), n)


def test_time_grid():
    g = TimeGrid(0.0, 2.0, 8)
    assert g.h == 0.25
    assert g.times[-1] == 2.0
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 4)


def test_increments_law_and_determinism():
    g = TimeGrid(0.0, 10_000.0, 1_000_000)
    dW = brownian_increments(42, g, 1)
    assert 0.0099 <= dW.var() <= 0.0101
    assert abs(dW.mean()) < 4 * np.sqrt(g.h / dW.size)
    assert np.array_equal(dW, brownian_increments(42, g, 1))
    assert not np.array_equal(dW[:10], brownian_increments(43, g, 1)[:10])


def test_increments_substreams_differ():
    g = TimeGrid(0.0, 1.0, 16)
    a = brownian_increments(5, g, 2, path=0)
    b = brownian_increments(5, g, 2, path=1)
    assert a.shape == (16, 2)
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        brownian_increments(5, g, 0)


def test_correction_textbook_and_constant():
    prob = linear_noise()
    assert strat_to_ito_correction(prob, 0.0, np.array([3.0]))[0] == pytest.approx(1.5, rel=1e-9)
    assert np.allclose(strat_to_ito_correction(pure_bm(), 0.0, np.array([0.3, 0.4])), 0.0)


def test_correction_snakeboard_closed_form():
    p = snakeboard.SnakeboardParams()
    prob = snakeboard.horizontal_problem(p)
    rng = np.random.default_rng(0)
    Q = rng.uniform(-1, 1, (20, 5))
    got = strat_to_ito_correction(prob, 0.0, Q)
    assert np.allclose(got, snakeboard.ito_correction(p, Q), atol=1e-9)
    assert np.max(np.abs(got[:, [0, 1, 4]])) < 1e-9


def test_integrate_trivial_cases():
    g = TimeGrid(0.0, 1.0, 10)
    zero = SDEProblem(2, lambda t, Q: np.zeros(np.shape(Q)), lambda t, Q: np.zeros(np.shape(Q) + (1,)), 1)
    path = integrate(zero, g, [1.0, 2.0], np.ones((10, 1)))
    assert np.all(path.states == [1.0, 2.0])
    drift = SDEProblem(1, lambda t, Q: np.full(np.shape(Q), 0.5), None, 0, Calculus.ITO)
    path = integrate(drift, g, [1.0])
    assert np.allclose(path.states[:, 0], 1.0 + 0.5 * g.times, atol=1e-15)


def test_integrate_rejects_bad_increments():
    with pytest.raises(ValueError):
        integrate(linear_noise(), TimeGrid(0, 1, 4), [1.0], np.zeros((3, 1)))


def test_explosion_truncates_and_flags():
    blow = SDEProblem(1, lambda t, Q: np.asarray(Q) ** 2, None, 0, Calculus.ITO)
    with np.errstate(over="ignore"):
        path = integrate(blow, TimeGrid(0.0, 2.0, 200), [10.0])
    assert path.exploded
    assert path.states.shape[0] < 201
    assert np.all(np.isfinite(path.states))
    assert path.explosion_time is not None


def _strat_ito_gaps(P, fine_steps, strides, stat):
    fine = TimeGrid(0.0, 1.0, fine_steps)
    dW = np.stack([brownian_increments(3, fine, 1, i) for i in range(P)])
    gaps = []
    for stride in strides:
        g = TimeGrid(0.0, 1.0, fine_steps // stride)
        inc = dW.reshape(P, -1, stride, 1).sum(axis=2)
        a = integrate_batch(linear_noise(), g, [1.0], inc)[0][:, -1, 0]
        b = integrate_batch(to_ito(linear_noise()), g, [1.0], inc)[0][:, -1, 0]
        gaps.append(stat(np.abs(a - b)))
    return gaps


@pytest.mark.xfail(reason="EM on multiplicative noise is strong order 1/2, so the gap "
                          "shrinks like sqrt(h), not h", strict=False)
def test_stratonovich_ito_difference_halves():
    gaps = _strat_ito_gaps(100, 2048, (4, 2, 1), np.max)
    for d0, d1 in zip(gaps, gaps[1:]):
        assert 1.4 <= d0 / d1 <= 2.6


def test_stratonovich_ito_difference_strong_half_order():
    # quartering h halves the rms gap (strong order 1/2 of EM)
    gaps = _strat_ito_gaps(2000, 1024, (16, 4, 1), lambda d: np.sqrt(np.mean(d**2)))
    for d0, d1 in zip(gaps, gaps[1:]):
        assert 1.4 <= d0 / d1 <= 2.6


def test_heun_deterministic_order_two():
    ode = SDEProblem(1, lambda t, Q: -np.asarray(Q) + np.sin(t), None, 0)
    exact = lambda t: 0.5 * (np.sin(t) - np.cos(t)) + 1.5 * np.exp(-t)
    errs = [abs(integrate(ode, TimeGrid(0, 2, n), [1.0]).states[-1, 0] - exact(2.0))
            for n in (50, 100, 200)]
    for e0, e1 in zip(errs, errs[1:]):
        assert 4 * 0.7 <= e0 / e1 <= 4 * 1.3


def test_ensemble_pure_bm_mean():
    ens = ensemble_run(pure_bm(), TimeGrid(0.0, 1.0, 20), np.zeros(2), 9, 10_000, record_stride=20)
    mean, se, count = ensemble_stats(ens)
    assert np.all(np.abs(mean[-1]) < 4 / np.sqrt(10_000))
    assert np.all(np.abs(mean[-1]) < 4 * se[-1])
    assert count[-1] == 10_000


def test_ensemble_single_path_matches_integrate():
    prob = linear_noise()
    g = TimeGrid(0.0, 1.0, 50)
    ens = ensemble_run(prob, g, [1.0], 17, 1)
    path = integrate(prob, g, [1.0], brownian_increments(17, g, 1, path=0))
    assert np.array_equal(ens.states[0], path.states)


def test_ensemble_independent_of_workers_and_chunking():
    prob = linear_noise()
    g = TimeGrid(0.0, 1.0, 10)
    P = CHUNK + 37
    a = ensemble_run(prob, g, [1.0], 5, P, workers=1)
    b = ensemble_run(prob, g, [1.0], 5, P, workers=4)
    assert np.array_equal(a.states, b.states)
    small = ensemble_run(prob, g, [1.0], 5, 10)
    assert np.array_equal(small.states, a.states[:10])


def test_ensemble_stats_constant_observable():
    ens = ensemble_run(linear_noise(), TimeGrid(0.0, 1.0, 10), [1.0], 1, 50)
    mean, se, _ = ensemble_stats(ens, lambda s: np.ones(s.shape[:-1] + (1,)))
    assert np.all(mean == 1.0)
    assert np.all(se == 0.0)


def test_weak_order_gbm_slope():
    mu, sigma, P = 1.0, 0.5, 20_000
    hs, errs = [], []
    for n in (16, 32, 64, 128):
        g = TimeGrid(0.0, 1.0, n)
        prob = SDEProblem(1, lambda t, Q: mu * np.asarray(Q), lambda t, Q: sigma * np.asarray(Q)[..., None],
                          1, Calculus.ITO)
        ens = ensemble_run(prob, g, [1.0], 2024, P, record_stride=n)
        W = np.array([brownian_increments(2024, g, 1, i).sum() for i in range(P)])
        errs.append(np.mean(ens.states[:, -1, 0] - oracles.gbm_exact(mu, sigma, 1.0, W)))
        hs.append(g.h)
    slope = np.polyfit(np.log(hs), np.log(np.abs(errs)), 1)[0]
    assert 0.7 <= slope <= 1.3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 5))
def test_ensemble_deterministic_property(seed, P):
    g = TimeGrid(0.0, 1.0, 5)
    a = ensemble_run(linear_noise(), g, [1.0], seed, P)
    b = ensemble_run(linear_noise(), g, [1.0], seed, P)
    assert np.array_equal(a.states, b.states)


def test_paths_csv_format():
    ens = ensemble_run(linear_noise(), TimeGrid(0.0, 1.0, 2), [1.0], 1, 2)
    text = paths_csv(ens, ["meta"], ["q1"])
    lines = text.splitlines()
    assert lines[0] == "# meta"
    assert lines[1] == "t,q1,path_id,exploded"
    assert len(lines) == 2 + 2 * 3
    assert float(lines[3].split(",")[1]) == ens.states[0, 1, 0]
