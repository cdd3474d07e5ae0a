"""
Second-order evolution of a closed plane curve in a central force field.

The acceleration of node j is

    a = (d mu_t / d mu) * [ v(s) * (-H + phi(s) <F, nu>) + rho / Vol(F) ] * nu,   s = |F|^2 / 2,

which is minus the reference-mass-weighted gradient of int v d(mu_t) - rho*log(Vol/Vol0).
Rescaled runs (amplitude parameter eps) evaluate the same force at eps*F:
a_eps(F) = a(eps*F), i.e. H -> H/eps, <F,nu> -> eps<F,nu>, Vol -> eps^2 Vol and
s = eps^2 |F|^2 / 2, with the measure ratio unchanged.

Time stepping is velocity Verlet with a CFL-limited step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from hypercurve import spectral
from hypercurve.errors import ConfigurationError, DegeneracyError, NumericalError
from hypercurve.geometry import GridImmersion, frame, volume_of
from hypercurve.potential import PotentialSpec


@dataclass
class SimConfig:
    rho: float = math.pi
    vol0: float | None = None  # None: enclosed volume of the initial curve
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    M: int = 64
    T: float = 1.0
    dt: float | None = None  # None: CFL step
    cfl_safety: float = 0.25
    eps: float = 1.0
    rescaled: bool = False
    initial: dict = field(default_factory=lambda: {"kind": "circle", "radius": 1.0})
    sample_every: int = 1
    volume_rtol: float = 1e-6

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError(f"sim.rho must be positive, got {self.rho}")
        if self.vol0 is not None and not self.vol0 > 0:
            raise ConfigurationError(f"sim.vol0 must be positive, got {self.vol0}")
        if not self.T > 0:
            raise ConfigurationError(f"sim.T must be positive, got {self.T}")
        if not 0 < self.eps <= 1:
            raise ConfigurationError(f"sim.eps must lie in (0, 1], got {self.eps}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError(f"sim.dt must be positive, got {self.dt}")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError(f"sim.cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.sample_every < 1:
            raise ConfigurationError("sim.sample_every must be >= 1")
        spectral.check_grid(self.M)

    @property
    def force_eps(self) -> float:
        return self.eps if self.rescaled else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["potential"] = self.potential.to_dict()
        return d


# ---------------------------------------------------------------- initial data


def _modes(theta: np.ndarray, modes) -> np.ndarray:
    out = np.zeros_like(theta)
    for k, a, b in modes or ():
        out += a * np.cos(k * theta) + b * np.sin(k * theta)
    return out


def initial_data(spec: dict, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Build (F0, V0) on an M-point grid from a generator description.

    kinds
        ``circle``: radius, center
        ``ellipse``: a, b, center
        ``perturbed``: radius, center, modes=[[k, cos_amp, sin_amp], ...] of the
            relative normal displacement, velocity_modes likewise (normal speed),
            translation=[vx, vy]
        ``random``: radius, seed, kmax, amplitude, velocity_amplitude, decay;
            band-limited random normal displacement/velocity with
            |coefficient_k| ~ amplitude * decay**k, k = 0..kmax
    Every kind accepts ``scale`` which multiplies both F0 and V0.
    """
    spec = dict(spec)
    kind = spec.pop("kind", "circle")
    scale = float(spec.pop("scale", 1.0))
    center = np.asarray(spec.pop("center", (0.0, 0.0)), dtype=float)
    theta = spectral.nodes(M)
    radial = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    V = np.zeros((M, 2))
    if kind == "circle":
        r = float(spec.pop("radius", 1.0))
        F = r * radial
        speed = float(spec.pop("radial_speed", 0.0))
        V = speed * radial
    elif kind == "ellipse":
        a, b = float(spec.pop("a", 2.0)), float(spec.pop("b", 1.0))
        F = np.stack([a * np.cos(theta), b * np.sin(theta)], axis=1)
    elif kind == "perturbed":
        r = float(spec.pop("radius", 1.0))
        F = (r * (1.0 + _modes(theta, spec.pop("modes", ()))))[:, None] * radial
        V = (r * _modes(theta, spec.pop("velocity_modes", ())))[:, None] * radial
        V = V + np.asarray(spec.pop("translation", (0.0, 0.0)), dtype=float)
    elif kind == "random":
        r = float(spec.pop("radius", 1.0))
        rng = np.random.default_rng(int(spec.pop("seed", 0)))
        kmax = int(spec.pop("kmax", 4))
        amp = float(spec.pop("amplitude", 0.02))
        vamp = float(spec.pop("velocity_amplitude", 0.02))
        decay = float(spec.pop("decay", 0.5))
        k = np.arange(kmax + 1)
        env = decay**k
        coeffs = rng.standard_normal((4, kmax + 1)) * env
        pos_modes = [(kk, amp * c, amp * s) for kk, c, s in zip(k, coeffs[0], coeffs[1])]
        vel_modes = [(kk, vamp * c, vamp * s) for kk, c, s in zip(k, coeffs[2], coeffs[3])]
        F = (r * (1.0 + _modes(theta, pos_modes)))[:, None] * radial
        V = (r * _modes(theta, vel_modes))[:, None] * radial
    else:
        raise ConfigurationError(f"unknown initial data kind {kind!r}")
    if spec:
        raise ConfigurationError(f"unknown keys for initial data kind {kind!r}: {sorted(spec)}")
    return scale * (F + center), scale * V


# ---------------------------------------------------------------- force


@dataclass
class ForceTerms:
    """Pieces of the force at one configuration (reused by the linearization)."""

    coefficient: np.ndarray  # scalar multiplying nu
    normal: np.ndarray
    tangent: np.ndarray
    speed: np.ndarray
    mean_curvature: np.ndarray
    measure_ratio: np.ndarray
    volume: float
    v: np.ndarray
    phi: np.ndarray
    support: np.ndarray  # <F, nu>
    bracket: np.ndarray  # v(-H/eps + eps*phi*<F,nu>) + rho/(eps^2 Vol)

    @property
    def acceleration(self) -> np.ndarray:
        return self.coefficient[:, None] * self.normal


def force_terms(positions, reference_density, potential: PotentialSpec, rho: float,
                eps: float = 1.0, threshold: float | None = None) -> ForceTerms:
    F = np.asarray(positions, dtype=float)
    m = np.asarray(reference_density, dtype=float)
    if threshold is None:
        threshold = 1e-6 * float(np.mean(m))
    tau, tau2, speed, T, nu = frame(F, threshold)
    H = -np.einsum("ij,ij->i", tau2, nu) / speed**2
    vol = float(0.5 * spectral.integrate(F[:, 0] * tau[:, 1] - F[:, 1] * tau[:, 0]))
    if not vol > 0:
        raise NumericalError(f"enclosed volume is not positive ({vol:.3e})")
    s = 0.5 * eps * eps * np.einsum("ij,ij->i", F, F)
    v = potential.v(s)
    phi = potential.phi(s)
    support = np.einsum("ij,ij->i", F, nu)
    # n = 1: the eps^(n-1) prefactor of the rescaled equation is 1
    bracket = v * (-H / eps + eps * phi * support) + rho / (eps * eps * vol)
    ratio = speed / m
    coef = ratio * bracket
    if not np.all(np.isfinite(coef)):
        raise NumericalError("force evaluation produced NaN/Inf")
    return ForceTerms(coef, nu, T, speed, H, ratio, vol, v, phi, support, bracket)


def acceleration(F: GridImmersion, cfg: SimConfig) -> np.ndarray:
    """Acceleration field of the configured equation at the immersion F."""
    return force_terms(F.positions, F.reference_density, cfg.potential, cfg.rho,
                       cfg.force_eps, F.immersion_threshold).acceleration


def cfl_dt(positions, reference_density, cfg: SimConfig) -> float:
    """safety * (2 pi / M) * min sqrt(eps * g / (ratio * v)) from the principal symbol."""
    eps = cfg.force_eps
    t = force_terms(positions, reference_density, cfg.potential, cfg.rho, eps)
    speed2 = t.speed**2
    return float(cfg.cfl_safety * (2.0 * np.pi / len(t.speed)) * np.sqrt(np.min(eps * speed2 / (t.measure_ratio * t.v))))


# ---------------------------------------------------------------- states and trajectories


@dataclass(frozen=True)
class PhaseState:
    t: float
    F: GridImmersion
    V: np.ndarray
    A: np.ndarray


def initial_state(cfg: SimConfig) -> PhaseState:
    F0, V0 = initial_data(cfg.initial, cfg.M)
    F = GridImmersion.from_positions(F0)
    return PhaseState(0.0, F, V0, acceleration(F, cfg))


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (K, M, 2)
    velocities: np.ndarray
    accelerations: np.ndarray
    reference_density: np.ndarray
    volumes: np.ndarray
    volumes_integrated: np.ndarray
    vol0: float
    dt: float
    completed: bool = True
    abort_reason: str = ""
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> PhaseState:
        return PhaseState(float(self.times[i]), GridImmersion(self.positions[i], self.reference_density),
                          self.velocities[i], self.accelerations[i])

    def subsample(self, every: int) -> "Trajectory":
        idx = np.arange(0, len(self.times), every)
        if idx[-1] != len(self.times) - 1:
            idx = np.append(idx, len(self.times) - 1)
        return replace(self, times=self.times[idx], positions=self.positions[idx],
                       velocities=self.velocities[idx], accelerations=self.accelerations[idx],
                       volumes=self.volumes[idx], volumes_integrated=self.volumes_integrated[idx])

    def max_displacement(self) -> float:
        return float(np.max(np.linalg.norm(self.positions - self.positions[0], axis=2)))

    # ---- serialization: CSV node dump + JSON manifest

    def write(self, directory, stem: str = "trajectory") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        K, M, _ = self.positions.shape
        t = np.repeat(self.times, M)
        j = np.tile(np.arange(M), K)
        table = np.column_stack([t, j, self.positions.reshape(-1, 2), self.velocities.reshape(-1, 2)])
        csv_path = directory / f"{stem}.csv"
        np.savetxt(csv_path, table, delimiter=",", header="t,j,x,y,vx,vy", comments="", fmt="%.17g")
        manifest = {
            "columns": ["t", "j", "x", "y", "vx", "vy"],
            "M": M,
            "samples": K,
            "dt": self.dt,
            "vol0": self.vol0,
            "completed": self.completed,
            "abort_reason": self.abort_reason,
            "reference_density": self.reference_density.tolist(),
            "config": self.config,
        }
        man_path = directory / f"{stem}.json"
        man_path.write_text(json.dumps(manifest, indent=2))
        return [csv_path, man_path]

    @classmethod
    def read(cls, directory, stem: str = "trajectory", cfg: SimConfig | None = None) -> "Trajectory":
        """Load a dump; accelerations are recomputed from positions when ``cfg`` is given."""
        directory = Path(directory)
        manifest = json.loads((directory / f"{stem}.json").read_text())
        table = np.loadtxt(directory / f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
        M, K = manifest["M"], manifest["samples"]
        times = table[::M, 0]
        pos = table[:, 2:4].reshape(K, M, 2)
        vel = table[:, 4:6].reshape(K, M, 2)
        m = np.asarray(manifest["reference_density"])
        acc = np.zeros_like(pos)
        if cfg is not None:
            acc = np.stack([acceleration(GridImmersion(p, m), cfg) for p in pos])
        vols = np.array([volume_of(p) for p in pos])
        return cls(times, pos, vel, acc, m, vols, vols.copy(), manifest["vol0"], manifest["dt"],
                   manifest["completed"], manifest["abort_reason"], manifest.get("config", {}))


# ---------------------------------------------------------------- time stepping


def _volume_increment(F: np.ndarray, F_new: np.ndarray) -> float:
    """int <F_new - F, nu> d(mu_t) at the midpoint curve; exact for the quadratic area functional."""
    mid = 0.5 * (F + F_new)
    dmid = spectral.derivative(mid)
    d = F_new - F
    return float(spectral.integrate(d[:, 0] * dmid[:, 1] - d[:, 1] * dmid[:, 0]))


def step(state: PhaseState, dt: float, cfg: SimConfig) -> PhaseState:
    """One velocity-Verlet step."""
    F = state.F
    F_new = F.positions + dt * state.V + 0.5 * dt * dt * state.A
    G = F.with_positions(F_new)
    A_new = acceleration(G, cfg)
    V_new = state.V + 0.5 * dt * (state.A + A_new)
    return PhaseState(state.t + dt, G, V_new, A_new)


def simulate(cfg: SimConfig, state: PhaseState | None = None, dt: float | None = None) -> Trajectory:
    """Integrate from ``state`` (default: the configured initial data) up to cfg.T.

    The step is ``dt`` / cfg.dt / the CFL step at t = 0, shrunk so that an
    integer number of steps lands on T. A degeneracy or NaN stops the run;
    the partial trajectory is returned with ``completed=False``.
    """
    if state is None:
        state = initial_state(cfg)
    m = state.F.reference_density
    threshold = state.F.immersion_threshold
    eps = cfg.force_eps
    dt = dt if dt is not None else cfg.dt
    if dt is None:
        dt = cfl_dt(state.F.positions, m, cfg)
    sign = 1.0 if dt > 0 else -1.0
    span = cfg.T - state.t if sign > 0 else state.t
    nsteps = max(1, int(math.ceil(abs(span) / abs(dt) - 1e-9)))
    dt = sign * abs(span) / nsteps

    F = state.F.positions.copy()
    V = np.asarray(state.V, dtype=float).copy()
    A = np.asarray(state.A, dtype=float).copy()
    vol = volume_of(F)
    vol0 = cfg.vol0 if cfg.vol0 is not None else vol
    vol_int = vol
    t0 = state.t
    times, Fs, Vs, As, vols, vints = [t0], [F], [V], [A], [vol], [vol_int]
    completed, reason = True, ""
    t_last = t0
    for n in range(1, nsteps + 1):
        F_new = F + dt * V + 0.5 * dt * dt * A
        try:
            terms = force_terms(F_new, m, cfg.potential, cfg.rho, eps, threshold)
        except DegeneracyError as exc:
            completed, reason = False, f"degeneracy at t={t0 + n * dt:.6g}: {exc}"
            break
        except NumericalError as exc:
            completed, reason = False, f"numerical failure at t={t0 + n * dt:.6g}: {exc}"
            break
        vol_next = vol_int + _volume_increment(F, F_new)
        if abs(terms.volume - vol_next) > cfg.volume_rtol * abs(terms.volume):
            completed, reason = False, (
                f"volume consistency check failed at t={t0 + n * dt:.6g}: "
                f"divergence-theorem {terms.volume:.12g} vs integrated {vol_next:.12g}"
            )
            break
        A_new = terms.acceleration
        V = V + 0.5 * dt * (A + A_new)
        F, A, vol, vol_int = F_new, A_new, terms.volume, vol_next
        t_last = t0 + n * dt
        if n % cfg.sample_every == 0 or n == nsteps:
            times.append(t_last)
            Fs.append(F)
            Vs.append(V)
            As.append(A)
            vols.append(vol)
            vints.append(vol_int)
    if not completed and times[-1] != t_last:
        # keep the last good state for post-mortem
        times.append(t_last)
        Fs.append(F)
        Vs.append(V)
        As.append(A)
        vols.append(vol)
        vints.append(vol_int)
    return Trajectory(
        np.asarray(times), np.asarray(Fs), np.asarray(Vs), np.asarray(As), m.copy(),
        np.asarray(vols), np.asarray(vints), float(vol0), float(dt), completed, reason, cfg.to_dict(),
    )


# ---------------------------------------------------------------- rescaling


def rescale_solution(traj: Trajectory, eps: float, direction: str = "forward") -> Trajectory:
    """Map between solutions of the original and the rescaled (amplitude eps) equations.

    If G solves the rescaled equation G'' = a(eps*G), then F(t) = eps*G(t/sqrt(eps))
    solves the original one. ``forward`` maps a rescaled-equation trajectory G to
    the original variables F (positions x eps, times x sqrt(eps), velocities
    x sqrt(eps), accelerations / 1); ``inverse`` undoes it.
    """
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    if direction == "forward":
        a, c = eps, math.sqrt(eps)
    elif direction == "inverse":
        a, c = 1.0 / eps, 1.0 / math.sqrt(eps)
    else:
        raise ConfigurationError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    # positions scale by a, time by c: velocity by a/c, acceleration by a/c^2
    return replace(
        traj,
        times=traj.times * c,
        positions=traj.positions * a,
        velocities=traj.velocities * (a / c),
        accelerations=traj.accelerations * (a / (c * c)),
        reference_density=traj.reference_density * a,
        volumes=traj.volumes * a * a,
        volumes_integrated=traj.volumes_integrated * a * a,
        vol0=traj.vol0 * a * a,
        dt=traj.dt * c,
    )
