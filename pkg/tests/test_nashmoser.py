import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypercurve import spectral
from hypercurve.dynamics import SimConfig
from hypercurve.errors import ConfigurationError
from hypercurve.nashmoser import (IterationTrace, NashMoserConfig, Problem, decomposition_residual, h2_distance,
                                  iterate, linear_correction, remainder, remainder_check, residual, schedule,
                                  verlet_reference)

EPS = 0.05


def small_data_sim(M=32, T=0.25, eps=EPS):
    return SimConfig(M=M, T=T, eps=eps, rescaled=True, rho=math.pi * eps, initial={
        "kind": "perturbed", "radius": 1.01, "modes": [[2, 1e-5, 0.0], [3, 0.0, 5e-6]],
        "velocity_modes": [[2, 0.0, 1e-5]]})


@pytest.fixture(scope="module")
def small_run():
    return iterate(NashMoserConfig(small_data_sim(), l_max=4))


@pytest.mark.parametrize("l, expected", [(0, (1, 4.0)), (1, (2, 3.0)), (3, (8, 2.25)), (5, (32, 2.0625))])
def test_schedule_frozen(l, expected):
    assert schedule(l, 2.0, 4.0) == expected


def test_schedule_rejects_bad_orders():
    with pytest.raises(ConfigurationError):
        schedule(0, 4.0, 4.0)
    with pytest.raises(ConfigurationError):
        schedule(-1, 2.0, 4.0)


@given(st.floats(2, 5), st.floats(0.1, 5), st.integers(0, 30))
def test_schedule_monotone(s_bar, gap, l):
    N0, s0 = schedule(l, s_bar, s_bar + gap)
    N1, s1 = schedule(l + 1, s_bar, s_bar + gap)
    assert N1 == 2 * N0
    assert s_bar <= s1 <= s0
    assert s1 < s0 or s0 - s_bar < 1e-12


@pytest.mark.parametrize("kwargs", [{"s_bar": 1.5}, {"s_bar": 4.0, "s": 3.0}, {"l_max": 0}, {"tol": 0.0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        NashMoserConfig(small_data_sim(), **kwargs)


def test_config_requires_rescaled_equation():
    with pytest.raises(ConfigurationError, match="rescaled"):
        NashMoserConfig(SimConfig(M=32))


def test_level_zero_residual_of_a_circle_in_closed_form():
    R, eps = 1.2, 0.1
    cfg = SimConfig(M=32, T=0.05, dt=0.01, eps=eps, rescaled=True, rho=math.pi * eps,
                    initial={"kind": "circle", "radius": R})
    prob = Problem.from_config(cfg)
    E = residual(prob.zeros(), 0, prob)
    c = -1.0 / (eps * R) + cfg.rho / (eps**2 * math.pi * R * R)
    nu = prob.F0 / R
    for row in E:
        np.testing.assert_allclose(row, -c * nu, atol=1e-12)


def test_verlet_solution_is_a_zero_of_the_untruncated_map():
    prob = Problem.from_config(small_data_sim(T=0.1))
    Fbar = verlet_reference(prob) - prob.positions(prob.zeros())
    E = residual(Fbar, 5, prob)  # N = 32 >= M/2 means no truncation
    assert np.max(np.abs(E)) <= 1e-8 * np.max(np.abs(prob.forces(prob.zeros())))


def test_truncation_difference_is_the_high_mode_content():
    prob = Problem.from_config(SimConfig(M=32, T=0.05, dt=0.01, eps=0.1, rescaled=True,
                                         initial={"kind": "random", "seed": 2}))
    F = prob.zeros()
    diff = residual(F, 5, prob) - residual(F, 1, prob)
    full = prob.forces(F)
    nu = full / np.linalg.norm(full, axis=2, keepdims=True)
    coef = np.einsum("nij,nij->ni", full, nu)
    tail = np.stack([c - spectral.smooth_truncate(c, 2) for c in coef])
    np.testing.assert_allclose(diff, -tail[:, :, None] * nu, atol=1e-12)


def test_equilibrium_data_converge_immediately():
    cfg = SimConfig(M=32, T=0.25, eps=EPS, rescaled=True, rho=math.pi * EPS)
    res = iterate(NashMoserConfig(cfg))
    assert res.trace.converged
    assert len(res.trace.levels) <= 3


def test_small_data_residuals_decrease(small_run):
    r = small_run.trace.residuals()
    assert len(r) == 5
    assert np.all(np.diff(r[:4]) < 0)
    assert all(rec.in_ball for rec in small_run.trace.levels)


def test_iterate_matches_verlet(small_run):
    ref = verlet_reference(small_run.problem)
    assert h2_distance(small_run.problem, small_run.positions, ref) <= 1e-4


def test_telescoping(small_run):
    np.testing.assert_allclose(small_run.fbar, np.sum(small_run.corrections, axis=0), atol=1e-15)
    prob = small_run.problem
    np.testing.assert_array_equal(small_run.positions, prob.positions(small_run.fbar))


def test_level_decomposition_identity():
    prob = Problem.from_config(small_data_sim(T=0.1))
    Fbar = prob.zeros()
    for l in range(3):
        h = linear_correction(prob, Fbar, residual(Fbar, l, prob))
        assert decomposition_residual(prob, Fbar, h, l) <= 1e-8
        Fbar = Fbar + h


def test_remainder_zero_direction():
    prob = Problem.from_config(small_data_sim(T=0.05))
    assert np.all(remainder(prob, prob.zeros(), prob.zeros()) == 0.0)


def test_remainder_is_quadratic_at_equilibrium():
    cfg = SimConfig(M=32, T=0.1, eps=EPS, rescaled=True, rho=math.pi * EPS)
    prob = Problem.from_config(cfg)
    th = spectral.nodes(32)
    shape = 1e-3 * np.stack([np.cos(2 * th), np.sin(3 * th)], axis=1)
    h = prob.times[:, None, None] ** 2 * shape[None]
    rep = remainder_check(prob, prob.zeros(), h)
    assert rep.slope >= 1.9
    assert rep.quadratic_rel_err <= 0.05


def test_eps_too_large_is_diagnosed_without_hanging():
    # same data and pressure as the eps = 0.05 problem, amplitude parameter raised to 1
    sim = SimConfig(**{**vars(small_data_sim(T=0.25)), "eps": 1.0})
    res = iterate(NashMoserConfig(sim, l_max=8))
    assert res.trace.diverged
    assert "eps too large" in res.trace.termination
    assert len(res.trace.levels) <= 2


def test_trace_files(small_run, tmp_path):
    csv_path, json_path = small_run.trace.write(tmp_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0].split(",") == list(IterationTrace.COLUMNS)
    assert len(lines) == 1 + len(small_run.trace.levels)
    summary = json.loads(json_path.read_text())
    assert summary["termination"] == small_run.trace.termination
    # N_l and s_l recorded exactly
    for rec in small_run.trace.levels:
        assert (rec.N, rec.s_l) == schedule(rec.l, 2.0, 4.0)
