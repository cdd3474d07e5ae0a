"""
Nash-Moser style iteration for the rescaled equation with dyadic truncation.

Unknown: Fbar = F - F0 - t F1 on a uniform grid t_n = n dt, n = 0..K, with
Fbar(0) = dFbar/dt(0) = 0. The time derivative is the Stormer operator

    (D2 X)_0 = 2 (X_1 - X_0) / dt^2,    (D2 X)_n = (X_{n+1} - 2 X_n + X_{n-1}) / dt^2,

for n = 0..K-1, which is exactly what velocity Verlet realizes. Hence the
velocity-Verlet trajectory is an exact zero of the untruncated discrete map,
and each linear correction (solved by linear Verlet) is an exact Newton step.

Level l uses the truncation Pi_{N_l}, N_l = 2^l, applied to the scalar normal
coefficient of the force, and reports norms at s_l = sbar + (s - sbar)/2^l.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hypercurve import spectral
from hypercurve.dynamics import SimConfig, cfl_dt, initial_state, simulate
from hypercurve.errors import ConfigurationError
from hypercurve.linearized import LinearizedOperator, apply_linearized, base_frame, solve_linearized


def schedule(l: int, s_bar: float, s: float) -> tuple[int, float]:
    """(N_l, s_l) = (2^l, s_bar + (s - s_bar)/2^l)."""
    if not s_bar < s:
        raise ConfigurationError(f"need s_bar < s, got s_bar={s_bar}, s={s}")
    if l < 0 or int(l) != l:
        raise ConfigurationError(f"level must be a nonnegative integer, got {l}")
    return 2**l, s_bar + (s - s_bar) / 2**l


@dataclass
class NashMoserConfig:
    sim: SimConfig
    s_bar: float = 2.0
    s: float = 4.0
    l_max: int = 8
    tol: float = 1e-8
    ball_radius: float = 1.0

    def __post_init__(self):
        if not self.s_bar >= 2:
            raise ConfigurationError(f"experiment.s_bar must be >= 2, got {self.s_bar}")
        if not self.s_bar < self.s:
            raise ConfigurationError(f"experiment.s_bar must be < experiment.s ({self.s_bar} >= {self.s})")
        if self.l_max < 1:
            raise ConfigurationError("experiment.l_max must be >= 1")
        if not self.tol > 0:
            raise ConfigurationError("experiment.tol must be positive")
        if not self.sim.rescaled:
            raise ConfigurationError("the iteration solves the rescaled equation; set sim.rescaled = true")


@dataclass
class Problem:
    """Data (F0, F1), reference density and time grid of one iteration run."""

    times: np.ndarray
    F0: np.ndarray
    F1: np.ndarray
    reference_density: np.ndarray
    cfg: SimConfig

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Problem":
        st = initial_state(cfg)
        dt = cfg.dt if cfg.dt is not None else cfl_dt(st.F.positions, st.F.reference_density, cfg)
        K = max(2, int(math.ceil(cfg.T / dt - 1e-9)))
        times = np.linspace(0.0, cfg.T, K + 1)
        return cls(times, st.F.positions.copy(), np.asarray(st.V, dtype=float).copy(),
                   st.F.reference_density.copy(), cfg)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def K(self) -> int:
        """Number of residual rows (all samples but the last)."""
        return len(self.times) - 1

    def zeros(self) -> np.ndarray:
        return np.zeros((len(self.times),) + self.F0.shape)

    def operator(self, Fbar) -> LinearizedOperator:
        c = self.cfg
        return LinearizedOperator(self.times, Fbar, self.F0, self.F1, self.reference_density,
                                  c.potential, c.rho, c.force_eps)

    def forces(self, Fbar, N: int | None = None) -> np.ndarray:
        """f(Fbar + F0 + t F1) on rows 0..K-1, the scalar coefficient truncated at N."""
        c = self.cfg
        out = np.empty((self.K,) + self.F0.shape)
        thr = 1e-6 * float(np.mean(self.reference_density))
        for n in range(self.K):
            t = self.times[n]
            fr = base_frame(Fbar[n] + self.F0 + t * self.F1, self.reference_density, c.potential,
                            c.rho, c.force_eps, thr)
            coef = fr.coefficient if N is None else spectral.smooth_truncate(fr.coefficient, N)
            out[n] = coef[:, None] * fr.nu
        return out

    def d2(self, X) -> np.ndarray:
        """Stormer second difference on rows 0..K-1 (zero initial velocity)."""
        X = np.asarray(X, dtype=float)
        dt2 = self.dt**2
        out = np.empty((self.K,) + X.shape[1:])
        out[0] = 2.0 * (X[1] - X[0]) / dt2
        out[1:] = (X[2:] - 2.0 * X[1:-1] + X[:-2]) / dt2
        return out

    def nonlinear(self, Fbar) -> np.ndarray:
        """N(Fbar) = D2 Fbar - f(Fbar + F0 + t F1), untruncated."""
        return self.d2(Fbar) - self.forces(Fbar)

    def norm(self, field_rows, s: float) -> float:
        X = np.asarray(field_rows, dtype=float)
        return spectral.field_spacetime_norm(self.times[: X.shape[0]], X, s)

    def positions(self, Fbar) -> np.ndarray:
        return Fbar + self.F0[None] + self.times[:, None, None] * self.F1[None]


def residual(Fbar, l: int, problem: Problem) -> np.ndarray:
    """E^l = D2 Fbar - Pi_{N_l} f(Fbar + F0 + t F1), N_l = 2^l."""
    return problem.d2(Fbar) - problem.forces(Fbar, 2**l)


def linear_correction(problem: Problem, Fbar, E) -> np.ndarray:
    """h with D2 h - L(Fbar) h = -E, h(0) = dh/dt(0) = 0."""
    op = problem.operator(Fbar)
    return solve_linearized(op, -np.asarray(E)).h


@dataclass
class LevelRecord:
    l: int
    N: int
    s_l: float
    residual: float        # |||E^l|||_{s_l,T}
    residual_sbar: float   # |||E^l|||_{sbar,T}
    h_norm: float          # |||h^l|||_{s_l,T}
    fbar_norm: float       # |||Fbar^l|||_{s_l,T}
    in_ball: bool
    wall_time: float


@dataclass
class IterationTrace:
    s_bar: float
    s: float
    levels: list[LevelRecord] = field(default_factory=list)
    termination: str = ""
    converged: bool = False
    diverged: bool = False

    COLUMNS = ("l", "N_l", "s_l", "residual", "residual_sbar", "h_norm", "fbar_norm", "in_ball", "wall_time")

    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.levels])

    def rows(self) -> list[tuple]:
        return [(r.l, r.N, r.s_l, r.residual, r.residual_sbar, r.h_norm, r.fbar_norm, int(r.in_ball), r.wall_time)
                for r in self.levels]

    def summary(self) -> dict:
        return {
            "s_bar": self.s_bar, "s": self.s, "levels": len(self.levels),
            "termination": self.termination, "converged": self.converged, "diverged": self.diverged,
            "final_residual": self.levels[-1].residual if self.levels else None,
            "max_fbar_norm": max((r.fbar_norm for r in self.levels), default=None),
        }

    def write(self, directory, stem: str = "nash_moser") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}_trace.csv"
        with csv_path.open("w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows():
                fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")
        json_path = directory / f"{stem}_summary.json"
        json_path.write_text(json.dumps(self.summary(), indent=2))
        return [csv_path, json_path]


@dataclass
class NashMoserResult:
    times: np.ndarray
    positions: np.ndarray  # F = Fbar^L + F0 + t F1
    fbar: np.ndarray
    corrections: list[np.ndarray]
    trace: IterationTrace
    problem: Problem


def iterate(cfg: NashMoserConfig) -> NashMoserResult:
    """Run levels l = 0, 1, ... until a termination rule fires.

    Rules, checked after evaluating E^l: |||E^l|||_{sbar,T} < tol (converged);
    l = l_max; E^1 >= E^0 or a level-0 residual >= 1 (diagnosed as eps too
    large); two consecutive increases of |||E^l|||_{s_l,T}.
    """
    problem = Problem.from_config(cfg.sim)
    trace = IterationTrace(cfg.s_bar, cfg.s)
    Fbar = problem.zeros()
    h = problem.zeros()
    corrections: list[np.ndarray] = []
    increases = 0
    l = 0
    while True:
        t0 = time.perf_counter()
        N, s_l = schedule(l, cfg.s_bar, cfg.s)
        E = residual(Fbar, l, problem)
        rec = LevelRecord(
            l, N, s_l, problem.norm(E, s_l), problem.norm(E, cfg.s_bar), problem.norm(h, s_l),
            problem.norm(Fbar, s_l), False, 0.0,
        )
        rec.in_ball = rec.fbar_norm <= cfg.ball_radius
        prev = trace.levels[-1].residual if trace.levels else None
        trace.levels.append(rec)
        if l == 0 and not rec.residual < 1.0:
            trace.termination = (f"eps too large: level-0 residual {rec.residual:.3e} >= 1 "
                                 "(smallness of the data forcing fails)")
            trace.diverged = True
        elif rec.residual_sbar < cfg.tol:
            trace.termination = f"converged: residual {rec.residual_sbar:.3e} < tol {cfg.tol:.1e}"
            trace.converged = True
        elif prev is not None and not rec.residual < prev:
            increases += 1
            if l == 1:
                trace.termination = ("eps too large: residual non-decreasing at l = 0 "
                                     f"({prev:.3e} -> {rec.residual:.3e})")
                trace.diverged = True
            elif increases >= 2:
                trace.termination = "residual increased twice consecutively"
        else:
            increases = 0
        if not trace.termination and l >= cfg.l_max:
            trace.termination = f"l_max = {cfg.l_max} reached"
        if trace.termination:
            rec.wall_time = time.perf_counter() - t0
            break
        h = linear_correction(problem, Fbar, E)
        corrections.append(h)
        Fbar = Fbar + h
        rec.wall_time = time.perf_counter() - t0
        l += 1
    return NashMoserResult(problem.times, problem.positions(Fbar), Fbar, corrections, trace, problem)


def verlet_reference(problem: Problem) -> np.ndarray:
    """Direct velocity-Verlet positions of the rescaled equation on the same grid."""
    traj = simulate(problem.cfg, dt=problem.dt)
    if not traj.completed or len(traj.times) != len(problem.times):
        raise RuntimeError(f"reference run failed: {traj.abort_reason or 'grid mismatch'}")
    return traj.positions


def h2_distance(problem: Problem, A, B, s: float = 2.0) -> float:
    """max over grid times of ||A(t) - B(t)||_{H^s}."""
    D = np.asarray(A) - np.asarray(B)
    return float(max(spectral.sobolev_norm(D[n], s) for n in range(D.shape[0])))


def decomposition_residual(problem: Problem, Fbar, h, l: int) -> float:
    """Sup-norm defect of E^{l+1} = R(h) + (I - Pi_{N_{l+1}}) f(P^{l+1}) - (I - Pi_{N_l}) f(P^l),
    relative to sup |E^l|; zero when h solves the level-l linear problem exactly."""
    E_l = residual(Fbar, l, problem)
    Fn = Fbar + h
    E_next = residual(Fn, l + 1, problem)
    op = problem.operator(Fbar)
    Lh = np.array([apply_linearized(op, problem.times[n], h[n]) for n in range(problem.K)])
    R = problem.nonlinear(Fn) - problem.nonlinear(Fbar) - (problem.d2(h) - Lh)
    f_next, f_cur = problem.forces(Fn), problem.forces(Fbar)
    tail_next = f_next - problem.forces(Fn, 2 ** (l + 1))
    tail_cur = f_cur - problem.forces(Fbar, 2**l)
    defect = E_next - (R + tail_next - tail_cur)
    return float(np.max(np.abs(defect)) / max(np.max(np.abs(E_l)), 1e-300))


@dataclass
class RemainderReport:
    sigmas: np.ndarray
    norms: np.ndarray
    slope: float
    quadratic_rel_err: float  # R(sigma h)/sigma^2 against half the second directional difference


def remainder(problem: Problem, Fbar, h) -> np.ndarray:
    """R(h) = N(Fbar + h) - N(Fbar) - dN(Fbar) h; the linear D2 parts cancel identically,
    so R(h) = -(f(P + h) - f(P) - L h) row by row."""
    op = problem.operator(Fbar)
    out = np.empty((problem.K,) + problem.F0.shape)
    f_plus = problem.forces(Fbar + h)
    for n in range(problem.K):
        t = problem.times[n]
        out[n] = -(f_plus[n] - op.force(t) - apply_linearized(op, t, h[n]))
    return out


def remainder_check(problem: Problem, Fbar, h, s: float = 2.0,
                    sigmas=(1.0, 0.5, 0.25, 0.125), delta: float = 1e-3) -> RemainderReport:
    """Scaling sweep of |||R(sigma h)|||_{s,T} and the quadratic-coefficient oracle.

    The oracle's second difference steps by +-(delta / max|h|) h, so ``delta``
    is the largest nodal displacement whatever the size of h.
    """
    Fbar = np.asarray(Fbar, dtype=float)
    h = np.asarray(h, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    Rs = [remainder(problem, Fbar, x * h) for x in sig]
    norms = np.array([problem.norm(R, s) for R in Rs])
    if np.all(norms == 0):
        return RemainderReport(sig, norms, float("inf"), 0.0)
    slope = float(np.polyfit(np.log(sig), np.log(norms), 1)[0])
    step = delta / max(float(np.max(np.abs(h))), 1e-300)
    second = (problem.forces(Fbar + step * h) - 2.0 * problem.forces(Fbar)
              + problem.forces(Fbar - step * h)) / step**2
    lead = -0.5 * second
    smallest = Rs[int(np.argmin(sig))] / sig.min() ** 2
    rel = float(np.linalg.norm(smallest - lead) / max(np.linalg.norm(lead), 1e-300))
    return RemainderReport(sig, norms, slope, rel)
