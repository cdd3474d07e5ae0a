import math

import numpy as np
import pytest

from hypercurve import spectral
from hypercurve.oracles import (discrete_potential_energy, ellipse_curvature, radial_energy, radial_rhs,
                                radial_solution, shoelace_area)
from hypercurve.potential import PotentialSpec


def test_unit_circle_is_a_radial_equilibrium():
    assert radial_rhs(1.0, 1.0, PotentialSpec(), math.pi) == pytest.approx(0.0, abs=1e-15)
    r, rdot = radial_solution(1.0, 0.0, 1.0, PotentialSpec(), math.pi, [0.0, 2.0])
    assert r[-1] == pytest.approx(1.0, abs=1e-12) and rdot[-1] == pytest.approx(0.0, abs=1e-12)


def test_radial_rhs_frozen():
    # (1.1/1.1) * (-1/1.1 + pi/(pi * 1.21))
    assert radial_rhs(1.1, 1.1, PotentialSpec(), math.pi) == pytest.approx(-1 / 1.1 + 1 / 1.21, rel=1e-14)


def test_radial_energy_conserved_along_oracle():
    P = PotentialSpec("power", kappa=0.5, p=1.0)
    t = np.linspace(0, 3, 7)
    r, rdot = radial_solution(1.3, -0.2, 1.3, P, 2.0, t)
    E = [radial_energy(a, b, 1.3, P, 2.0, math.pi) for a, b in zip(r, rdot)]
    assert np.ptp(E) < 1e-9


def test_shoelace_square_and_ellipse_vertices():
    sq = np.array([[0, 0], [2, 0], [2, 1], [0, 1]], dtype=float)
    assert shoelace_area(sq) == 2.0
    np.testing.assert_allclose(ellipse_curvature(2.0, 1.0, [0.0, math.pi / 2]), [2.0, 0.25])


def test_discrete_energy_of_unit_circle():
    th = spectral.nodes(32)
    F = np.stack([np.cos(th), np.sin(th)], axis=1)
    assert discrete_potential_energy(F, PotentialSpec(), math.pi, math.pi) == pytest.approx(2 * math.pi, rel=1e-14)
