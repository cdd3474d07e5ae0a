"""
Conserved quantities and the volume bounds along a trajectory.

Two energy conventions are tracked:

    E_paper = K - int v d(mu_t) + rho log(Vol/Vol0)
    E_ham   = K + int v d(mu_t) - rho log(Vol/Vol0)

with K = (1/2) int |dF/dt|^2 d(mu). Which one the dynamics conserves is
decided from the data (see :func:`conserved_energy`), not assumed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hypercurve import spectral
from hypercurve.dynamics import PhaseState, SimConfig, Trajectory

KILLING_FIELDS = ("e1", "e2", "rotation")


def killing_field(X: str, positions: np.ndarray) -> np.ndarray:
    P = np.asarray(positions, dtype=float)
    if X == "e1":
        return np.broadcast_to([1.0, 0.0], P.shape)
    if X == "e2":
        return np.broadcast_to([0.0, 1.0], P.shape)
    if X == "rotation":
        return np.stack([-P[:, 1], P[:, 0]], axis=1)
    raise ValueError(f"unknown Killing field {X!r}; expected one of {KILLING_FIELDS}")


def kinetic_energy(state: PhaseState) -> float:
    m = state.F.reference_density
    return float(0.5 * spectral.integrate(m * np.einsum("ij,ij->i", state.V, state.V)))


def energy_terms(state: PhaseState, cfg: SimConfig, vol0: float | None = None) -> dict:
    """K, int v d(mu_t) and the pressure term rho log(Vol/Vol0).

    For rescaled runs the potential part is eps^-2 times its value at eps*F,
    which is the energy whose gradient drives the rescaled equation.
    """
    eps = cfg.force_eps
    F = state.F.positions
    tau = spectral.derivative(F)
    speed = np.hypot(tau[:, 0], tau[:, 1])
    vol = float(0.5 * spectral.integrate(F[:, 0] * tau[:, 1] - F[:, 1] * tau[:, 0]))
    if vol0 is None:
        vol0 = cfg.vol0 if cfg.vol0 is not None else vol
    s = 0.5 * eps * eps * np.einsum("ij,ij->i", F, F)
    potential = float(spectral.integrate(cfg.potential.v(s) * speed)) / eps
    pressure = cfg.rho * math.log(vol / vol0) / (eps * eps)
    return {"K": kinetic_energy(state), "V": potential, "P": pressure, "Vol": vol}


def total_energy(state: PhaseState, cfg: SimConfig, vol0: float | None = None) -> tuple[float, float]:
    """(E_paper, E_ham)."""
    t = energy_terms(state, cfg, vol0)
    return t["K"] - t["V"] + t["P"], t["K"] + t["V"] - t["P"]


def momentum(state: PhaseState, X: str) -> float:
    """M_X = int <dF/dt, X(F)> d(mu)."""
    m = state.F.reference_density
    XF = killing_field(X, state.F.positions)
    return float(spectral.integrate(m * np.einsum("ij,ij->i", state.V, XF)))


def interior_momentum(state: PhaseState, c: float = 1.0) -> float:
    """Q_Y for Y = (c/m) d/dtheta, the divergence-free fields of d(mu) = m d(theta)."""
    tau = spectral.derivative(state.F.positions)
    return float(c * spectral.integrate(np.einsum("ij,ij->i", state.V, tau)))


@dataclass
class ConservationReport:
    times: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    pressure: np.ndarray
    E_paper: np.ndarray
    E_ham: np.ndarray
    momenta: dict[str, np.ndarray]
    Q: np.ndarray
    volume: np.ndarray
    vol0: float
    rho: float
    lower_bound: np.ndarray = field(default=None)
    conserved: str = "E_ham"

    def drift(self, name: str, relative: bool = False) -> float:
        series = {"E_paper": self.E_paper, "E_ham": self.E_ham, "Q": self.Q, **self.momenta}[name]
        d = float(np.max(np.abs(series - series[0])))
        if relative:
            d /= max(abs(float(series[0])), 1e-300)
        return d

    @property
    def E0(self) -> float:
        return float(getattr(self, self.conserved)[0])

    def summary(self) -> dict:
        return {
            "conserved_energy": self.conserved,
            "E0": self.E0,
            "drift_E_ham_rel": self.drift("E_ham", relative=True),
            "drift_E_paper_rel": self.drift("E_paper", relative=True),
            **{f"drift_M_{k}": self.drift(k) for k in self.momenta},
            "drift_Q": self.drift("Q"),
            "min_volume": float(np.min(self.volume)),
            "max_volume": float(np.max(self.volume)),
            "volume_lower_bound": float(self.lower_bound[0]),
        }

    def write(self, directory, stem: str = "conservation") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = ["t", "K", "int_v_dmu", "rho_log_vol_ratio", "E_paper", "E_ham",
                 *(f"M_{k}" for k in self.momenta), "Q", "Vol", "Vol_lower_bound"]
        cols = [self.times, self.kinetic, self.potential, self.pressure, self.E_paper, self.E_ham,
                *self.momenta.values(), self.Q, self.volume, self.lower_bound]
        csv_path = directory / f"{stem}.csv"
        np.savetxt(csv_path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")
        json_path = directory / f"{stem}_summary.json"
        json_path.write_text(json.dumps(self.summary(), indent=2))
        return [csv_path, json_path]


def conserved_energy(E_paper: np.ndarray, E_ham: np.ndarray) -> str:
    """Name of the energy series with the smaller relative drift."""
    def rel(e):
        return np.max(np.abs(e - e[0])) / max(abs(e[0]), 1e-300)
    return "E_ham" if rel(E_ham) <= rel(E_paper) else "E_paper"


def conservation_report(traj: Trajectory, cfg: SimConfig, c: float = 1.0) -> ConservationReport:
    K, V, P, Vol, Ep, Eh, Q = ([] for _ in range(7))
    moms = {X: [] for X in KILLING_FIELDS}
    for i in range(len(traj)):
        st = traj.state(i)
        t = energy_terms(st, cfg, traj.vol0)
        K.append(t["K"])
        V.append(t["V"])
        P.append(t["P"])
        Vol.append(t["Vol"])
        Ep.append(t["K"] - t["V"] + t["P"])
        Eh.append(t["K"] + t["V"] - t["P"])
        Q.append(interior_momentum(st, c))
        for X in KILLING_FIELDS:
            moms[X].append(momentum(st, X))
    Ep, Eh = np.asarray(Ep), np.asarray(Eh)
    which = conserved_energy(Ep, Eh) if len(traj) > 1 else "E_ham"
    E0 = (Eh if which == "E_ham" else Ep)[0]
    rho_eff = cfg.rho / cfg.force_eps**2
    bound = traj.vol0 * math.exp(-E0 / rho_eff)
    return ConservationReport(
        traj.times.copy(), np.asarray(K), np.asarray(V), np.asarray(P), Ep, Eh,
        {k: np.asarray(v) for k, v in moms.items()}, np.asarray(Q), np.asarray(Vol),
        traj.vol0, cfg.rho, np.full(len(traj), bound), which,
    )


@dataclass
class VolumeBoundReport:
    passed: bool
    violations: int
    min_margin: float
    lower_bound: float
    upper_envelope: float
    E0: float
    energy_convention: str
    hypothesis_constant: float  # empirical min of int v d(mu_t) / Vol^(1/2)


def volume_bounds(report: ConservationReport) -> VolumeBoundReport:
    """Check Vol(t) >= Vol0 exp(-E0/rho) at every sample; the upper bound is only reported."""
    margins = report.volume - report.lower_bound
    c_emp = float(np.min(report.potential / np.sqrt(report.volume)))
    return VolumeBoundReport(
        passed=bool(np.all(margins >= 0)),
        violations=int(np.sum(margins < 0)),
        min_margin=float(np.min(margins)),
        lower_bound=float(report.lower_bound[0]),
        upper_envelope=float(np.max(report.volume)),
        E0=report.E0,
        energy_convention=report.conserved,
        hypothesis_constant=c_emp,
    )
