import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypercurve import harness, spectral
from hypercurve.dynamics import SimConfig, simulate
from hypercurve.errors import ConfigurationError
from hypercurve.harness import ExperimentPlan, ExperimentReport

BREATHING = {"kind": "circle", "radius": 1.1}


def small_sim(**kw):
    base = dict(M=32, T=0.2, dt=2e-3, initial=BREATHING)
    base.update(kw)
    return SimConfig(**base)


@pytest.mark.parametrize("kwargs", [
    {"kind": "stability", "dt_list": [1e-3]},                       # eps_list missing
    {"kind": "stability", "eps_list": [1e-2, 1e-3, 1e-2], "dt_list": [1e-3]},
    {"kind": "lifespan", "eps_list": [0.0]},
    {"kind": "convergence", "dt_list": [1e-3], "M_list": [32], "workers": 0},
    {"kind": "wave"},
    {"kind": "cross-solver", "s_bar": 1.0},
])
def test_plan_validation(kwargs):
    with pytest.raises(ConfigurationError):
        ExperimentPlan(**kwargs)


def test_sharp_constants_frozen():
    # bound: max(S(2)*1, S(1)*2) / 2^2 = 0.5; remainder: (1 - S(0)) / 5 / 2^-2 = 0.8
    assert harness.sharp_constant(128, 2, 3, 1) == pytest.approx(0.5, rel=1e-14)
    assert harness.sharp_constant(128, 2, 1, 3) == pytest.approx(0.8, rel=1e-14)


def test_broadband_field_has_no_nyquist_content():
    u = harness.broadband_field(64, 1.0, np.random.default_rng(0))
    assert abs(np.fft.fft(u)[32]) < 1e-10


def test_smoothing_estimates_hold_for_every_field():
    rows = harness.smoothing_constants([(2, 0), (0, 2)], [2, 4], [64], fields=5, seed=1)
    assert all(r["worst"] <= r["sharp"] * (1 + 1e-12) for r in rows)
    assert all(r["constant"] > 0 for r in rows)


@given(st.integers(0, 10_000), st.floats(1e-6, 1e-1), st.sampled_from([2.0, 3.0]))
def test_normal_perturbation_size_and_direction(seed, size, s):
    th = spectral.nodes(32)
    F = np.stack([1.3 * np.cos(th), np.sin(th)], axis=1)
    h = harness.normal_perturbation(F, seed, size, s)
    assert spectral.sobolev_norm(h, s) == pytest.approx(size, rel=1e-12)
    tau = spectral.derivative(F)
    assert np.max(np.abs(np.einsum("ij,ij->i", h, tau))) < 1e-12 * size * 10


def test_difference_norm_of_identical_runs_is_zero():
    a = simulate(small_sim())
    assert harness.difference_norm(a, a, 2.0) == 0.0
    with pytest.raises(ConfigurationError):
        harness.difference_norm(a, simulate(small_sim(dt=1e-3)), 2.0)


def test_stability_small_sweep():
    plan = ExperimentPlan("stability", small_sim(T=0.3, dt=None), eps_list=[1e-2, 1e-3, 1e-4],
                          dt_list=[4e-3, 2e-3, 1e-3])
    rep = harness.run(plan)
    assert rep.passed, rep.summary
    assert rep.summary["identical_data_difference"] == 0.0
    assert rep.summary["ratio_spread"] <= 10.0


def test_lifespan_near_equilibrium_survives():
    sim = SimConfig(M=16, T=0.5, initial={"kind": "perturbed", "modes": [[2, 1e-4, 0.0]]})
    rep = harness.run(ExperimentPlan("lifespan", sim, eps_list=[0.04, 0.01]))
    assert rep.passed
    assert all(r["survived"] and r["t_reached"] == pytest.approx(r["horizon"]) for r in rep.rows)


def test_lifespan_negative_control_is_recorded_not_raised():
    sim = SimConfig(M=16, T=3.0, initial={"kind": "perturbed", "velocity_modes": [[3, 4.0, 0.0]]})
    rep = harness.run(ExperimentPlan("lifespan", sim, eps_list=[1.0]))
    (row,) = rep.rows
    assert row["passed"] == (row["survived"] and row["h2_ratio_max"] <= 2.0)
    assert rep.passed == row["passed"]
    # violent data either degenerate (with a reason) or blow up the norm
    assert not rep.passed
    assert row["note"] or row["h2_ratio_max"] > 2.0


def test_convergence_small_study():
    plan = ExperimentPlan("convergence", small_sim(T=0.5, dt=None), dt_list=[4e-3, 2e-3, 1e-3],
                          M_list=[16, 32, 64])
    rep = harness.run(plan)
    assert rep.passed, rep.summary
    assert all(abs(o - 2) <= 0.2 for o in rep.summary["time_orders"])


def test_convergence_needs_breathing_circle():
    plan = ExperimentPlan("convergence", small_sim(initial={"kind": "ellipse"}), dt_list=[1e-3], M_list=[16])
    with pytest.raises(ConfigurationError):
        harness.run(plan)


def test_cross_solver_small():
    eps = 0.05
    sim = SimConfig(M=32, T=0.25, eps=eps, rescaled=True, rho=math.pi * eps, initial={
        "kind": "perturbed", "radius": 1.01, "modes": [[2, 1e-5, 0.0]], "velocity_modes": [[2, 0.0, 1e-5]]})
    rep = harness.run(ExperimentPlan("cross-solver", sim, nash_moser={"l_max": 4}))
    assert rep.passed
    assert rep.summary["h2_distance"] <= 1e-4
    assert rep.summary["residual_decreasing_first_levels"]


def test_conservation_suite_small():
    rep = harness.run(ExperimentPlan("conservation-suite", small_sim(dt=None), dt_list=[2e-3, 1e-3]))
    assert rep.passed
    assert rep.summary["runs"] == 2 * len(harness.STANDARD_SUITE)
    assert rep.summary["volume_bound_violations"] == 0


def test_report_cells_and_determinism(tmp_path):
    plan = ExperimentPlan("stability", small_sim(T=0.1, dt=None), eps_list=[1e-2, 1e-3], dt_list=[2e-3, 1e-3],
                          seed=3)
    a = harness.run(plan).write(tmp_path / "a")
    b = harness.run(plan).write(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    with a[0].open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["completed"] == "1"
    assert float(rows[0]["ratio"]) > 0
    assert json.loads(a[1].read_text())["kind"] == "stability"


def test_workers_do_not_change_results():
    base = dict(sim=small_sim(T=0.1, dt=None), eps_list=[1e-2, 1e-3], dt_list=[2e-3, 1e-3])
    serial = harness.run(ExperimentPlan("stability", **base))
    parallel = harness.run(ExperimentPlan("stability", workers=2, **base))
    assert serial.rows == parallel.rows


def test_report_json_handles_numpy(tmp_path):
    rep = ExperimentReport("x", True, [{"a": np.float64(0.1), "b": np.bool_(True)}], {"arr": np.arange(3)})
    csv_path, json_path = rep.write(tmp_path)
    assert csv_path.read_text().splitlines()[1] == "0.1,1"
    assert json.loads(json_path.read_text())["arr"] == [0, 1, 2]
