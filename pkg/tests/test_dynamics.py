import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypercurve import spectral
from hypercurve.dynamics import (PhaseState, SimConfig, Trajectory, acceleration, cfl_dt, initial_data,
                                 initial_state, rescale_solution, simulate)
from hypercurve.errors import ConfigurationError
from hypercurve.geometry import GridImmersion
from hypercurve.oracles import fd_gradient_acceleration, radial_energy, radial_solution
from hypercurve.potential import PotentialSpec

GAUSS = PotentialSpec("gaussian", gamma=0.3)


def test_equilibrium_circle_stays_put():
    traj = simulate(SimConfig(M=64, T=1.0))
    assert traj.completed
    assert traj.max_displacement() <= 1e-10


def test_breathing_circle_matches_radial_ode():
    cfg = SimConfig(M=32, T=1.0, dt=1e-3, initial={"kind": "circle", "radius": 1.1})
    traj = simulate(cfg)
    r_num = np.linalg.norm(traj.positions[-1], axis=1)
    r_ex, _ = radial_solution(1.1, 0.0, 1.1, cfg.potential, cfg.rho, [0.0, 1.0], rtol=1e-12, atol=1e-14)
    assert np.max(np.abs(r_num - r_ex[-1])) / r_ex[-1] <= 1e-5
    # the circle stays round to round-off
    assert np.ptp(r_num) < 1e-12


def test_breathing_circle_energy_matches_closed_form():
    r0, rdot0 = 1.2, 0.1
    cfg = SimConfig(M=32, T=0.5, dt=1e-3, potential=GAUSS,
                    initial={"kind": "circle", "radius": r0, "radial_speed": rdot0})
    traj = simulate(cfg)
    r, rdot = radial_solution(r0, rdot0, r0, GAUSS, cfg.rho, [0.0, 0.5])
    e0 = radial_energy(r[0], rdot[0], r0, GAUSS, cfg.rho, traj.vol0)
    e1 = radial_energy(r[-1], rdot[-1], r0, GAUSS, cfg.rho, traj.vol0)
    assert e1 == pytest.approx(e0, rel=1e-9)
    assert np.linalg.norm(traj.positions[-1], axis=1).mean() == pytest.approx(r[-1], rel=1e-5)


@pytest.mark.parametrize("seed", range(3))
def test_acceleration_is_mass_weighted_energy_gradient(seed):
    F0, _ = initial_data({"kind": "random", "seed": seed, "amplitude": 0.05}, 32)
    m = np.linalg.norm(spectral.derivative(F0), axis=1) * (1 + 0.1 * np.cos(spectral.nodes(32)))
    cfg = SimConfig(M=32, potential=GAUSS, rho=2.0)
    a = acceleration(GridImmersion(F0, m), cfg)
    fd = fd_gradient_acceleration(F0, m, GAUSS, 2.0, delta=1e-6)
    assert np.max(np.abs(a - fd)) / np.max(np.abs(a)) <= 1e-5


def test_verlet_is_time_reversible():
    cfg = SimConfig(M=32, T=0.3, dt=1e-3, initial={"kind": "random", "seed": 3})
    fwd = simulate(cfg)
    end = fwd.state(-1)
    back = simulate(cfg, PhaseState(end.t, end.F, end.V, end.A), dt=-1e-3)
    np.testing.assert_allclose(back.positions[-1], fwd.positions[0], atol=1e-10)
    assert back.times[-1] == pytest.approx(0.0, abs=1e-12)


def test_step_count_lands_on_T():
    traj = simulate(SimConfig(M=16, T=0.1, dt=0.03))
    assert traj.times[-1] == pytest.approx(0.1, rel=1e-14)
    assert traj.dt == pytest.approx(0.025)


def test_cfl_step_frozen_value_for_unit_circle():
    # 0.25 * (2 pi / 64) * sqrt(1 * 1 / (1 * 1))
    F0, _ = initial_data({"kind": "circle"}, 64)
    assert cfl_dt(F0, np.ones(64), SimConfig()) == pytest.approx(0.25 * 2 * math.pi / 64, rel=1e-12)


def test_rescaled_run_equals_mapped_original_run():
    eps = 0.1
    G = SimConfig(M=32, T=0.5, dt=1e-3, eps=eps, rescaled=True, initial={"kind": "random", "seed": 5})
    direct = rescale_solution(simulate(G), eps, "forward")
    G0 = initial_state(G)
    F0 = GridImmersion(eps * G0.F.positions, eps * G0.F.reference_density)
    orig = replace(G, rescaled=False, T=math.sqrt(eps) * G.T, dt=math.sqrt(eps) * G.dt)
    state = PhaseState(0.0, F0, math.sqrt(eps) * G0.V, acceleration(F0, orig))
    mapped = simulate(orig, state)
    np.testing.assert_allclose(mapped.times, direct.times, rtol=1e-13)
    assert np.max(np.abs(mapped.positions - direct.positions)) <= 1e-6


def test_rescale_roundtrip():
    traj = simulate(SimConfig(M=16, T=0.05, dt=0.01, eps=0.2, rescaled=True))
    back = rescale_solution(rescale_solution(traj, 0.2), 0.2, "inverse")
    np.testing.assert_allclose(back.positions, traj.positions, rtol=1e-14)
    np.testing.assert_allclose(back.times, traj.times, rtol=1e-14)


def test_trajectory_roundtrip(tmp_path):
    cfg = SimConfig(M=16, T=0.05, dt=0.01, initial={"kind": "random", "seed": 1})
    traj = simulate(cfg)
    traj.write(tmp_path)
    back = Trajectory.read(tmp_path, cfg=cfg)
    np.testing.assert_array_equal(back.positions, traj.positions)
    np.testing.assert_array_equal(back.velocities, traj.velocities)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_allclose(back.accelerations, traj.accelerations, atol=1e-12)
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,j,x,y,vx,vy"


def test_degenerate_run_stops_with_reason():
    cfg = SimConfig(M=16, T=2.0, dt=1e-3, initial={"kind": "perturbed", "velocity_modes": [[3, 4.0, 0.0]]})
    traj = simulate(cfg)
    assert not traj.completed
    assert traj.abort_reason
    assert traj.times[-1] < 2.0


def test_subsample_keeps_last_sample():
    traj = simulate(SimConfig(M=16, T=0.1, dt=0.01, sample_every=3))
    assert traj.times[-1] == pytest.approx(0.1)


@pytest.mark.parametrize("kwargs, field", [
    ({"rho": 0.0}, "rho"), ({"T": -1.0}, "T"), ({"eps": 1.5}, "eps"), ({"dt": 0.0}, "dt"),
    ({"cfl_safety": 2.0}, "cfl_safety"), ({"vol0": -1.0}, "vol0"), ({"M": 20}, "M"),
])
def test_invalid_config_names_field(kwargs, field):
    with pytest.raises(ConfigurationError, match=field):
        SimConfig(**kwargs)


def test_initial_data_rejects_unknown_keys():
    with pytest.raises(ConfigurationError, match="radus"):
        initial_data({"kind": "circle", "radus": 2.0}, 16)


def test_initial_data_scale_and_center():
    F, V = initial_data({"kind": "circle", "radius": 2.0, "radial_speed": 1.0, "scale": 0.5, "center": [1, 0]}, 16)
    np.testing.assert_allclose(np.linalg.norm(F - [0.5, 0], axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.linalg.norm(V, axis=1), 0.5, atol=1e-14)


# ---------------------------------------------------------------- properties


@given(st.integers(0, 50), st.floats(0, 2 * math.pi))
def test_acceleration_rotation_equivariant(seed, angle):
    F0, _ = initial_data({"kind": "random", "seed": seed}, 32)
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    m = np.linalg.norm(spectral.derivative(F0), axis=1)
    cfg = SimConfig(M=32, potential=GAUSS)
    a0 = acceleration(GridImmersion(F0, m), cfg)
    a1 = acceleration(GridImmersion(F0 @ R.T, m), cfg)
    np.testing.assert_allclose(a1, a0 @ R.T, atol=1e-10 * np.max(np.abs(a0)))


@given(st.integers(0, 50), st.integers(1, 31))
def test_acceleration_shift_equivariant(seed, k):
    F0, _ = initial_data({"kind": "random", "seed": seed}, 32)
    m = np.linalg.norm(spectral.derivative(F0), axis=1)
    cfg = SimConfig(M=32)
    a0 = acceleration(GridImmersion(F0, m), cfg)
    a1 = acceleration(GridImmersion(np.roll(F0, k, axis=0), np.roll(m, k)), cfg)
    np.testing.assert_allclose(a1, np.roll(a0, k, axis=0), atol=1e-10 * np.max(np.abs(a0)))


@given(st.floats(0.8, 1.3))
def test_circles_stay_circles(r):
    traj = simulate(SimConfig(M=16, T=0.2, dt=2e-3, initial={"kind": "circle", "radius": r}))
    radii = np.linalg.norm(traj.positions, axis=2)
    assert np.max(np.ptp(radii, axis=1)) < 1e-12
