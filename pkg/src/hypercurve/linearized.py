"""
Linearization of the (rescaled) equation of motion about a base trajectory.

Write the equation as d^2F/dt^2 = f(F) with f = c(F) nu and

    c = (|dF/dtheta| / m) * B,
    B = v(s) (-H/eps + eps phi(s) <F, nu>) + rho / (eps^2 Vol),   s = eps^2 |F|^2 / 2.

In the shifted variable Fbar = F - F0 - t F1 the nonlinear map is
N(Fbar) = d^2 Fbar/dt^2 - f(Fbar + F0 + t F1), so the linearized operator is
d^2 h/dt^2 - L(t) h with L = Df at the base point. :func:`apply_linearized`
evaluates L h; :func:`assemble_coefficients` rewrites it for h = u nu + r tau as
a wave equation in u coupled to an ODE in r.

Variations used (per node, spectral derivatives, q = <h', nu>, p = <h', T>):

    d|tau|  = p                              (= (div h_T + u H) |tau|)
    d nu    = -(q / |tau|) T
    dH      = -<h'', nu>/g + q <tau', T>/(g |tau|) - 2 H p / |tau|
    dv      = -phi v eps^2 <F, h>
    dVol    = integral of <h, nu> |tau| dtheta
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from hypercurve import spectral
from hypercurve.errors import ConfigurationError, NumericalError
from hypercurve.geometry import frame as _raw_frame
from hypercurve.potential import PotentialSpec


def _dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def _cross(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


@dataclass(frozen=True)
class BaseFrame:
    """Geometric and force quantities of the base curve at one instant."""

    P: np.ndarray
    tau: np.ndarray
    tau2: np.ndarray
    speed: np.ndarray
    T: np.ndarray
    nu: np.ndarray
    H: np.ndarray
    hsff: np.ndarray
    ratio: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    sigma: np.ndarray  # <P, nu>
    bracket: np.ndarray
    coefficient: np.ndarray
    volume: float

    @property
    def force(self) -> np.ndarray:
        return self.coefficient[:, None] * self.nu


def base_frame(P, m, potential: PotentialSpec, rho: float, eps: float = 1.0,
               threshold: float | None = None) -> BaseFrame:
    P = np.asarray(P, dtype=float)
    m = np.asarray(m, dtype=float)
    if threshold is None:
        threshold = 1e-6 * float(np.mean(m))
    tau, tau2, speed, T, nu = _raw_frame(P, threshold)
    hsff = -_dot(tau2, nu)
    H = hsff / speed**2
    vol = float(0.5 * spectral.integrate(_cross(P, tau)))
    if not vol > 0:
        raise NumericalError(f"enclosed volume of the base curve is not positive ({vol:.3e})")
    s = 0.5 * eps * eps * _dot(P, P)
    v = potential.v(s)
    phi = potential.phi(s)
    dphi = potential.dphi(s)
    sigma = _dot(P, nu)
    B = v * (-H / eps + eps * phi * sigma) + rho / (eps * eps * vol)
    ratio = speed / m
    return BaseFrame(P, tau, tau2, speed, T, nu, H, hsff, ratio, v, phi, dphi, sigma, B, ratio * B, vol)


@dataclass
class LinearizedOperator:
    """Linearization about P(t) = Fbar(t) + F0 + t F1.

    ``times``/``base`` sample Fbar; off-grid times use a cubic spline in t.
    A single sample means a time-independent base.
    """

    times: np.ndarray
    base: np.ndarray
    F0: np.ndarray
    F1: np.ndarray
    reference_density: np.ndarray
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    rho: float = math.pi
    eps: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)
    _spline: object = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.base = np.asarray(self.base, dtype=float).reshape(len(self.times), -1, 2)
        self.F0 = np.asarray(self.F0, dtype=float)
        self.F1 = np.asarray(self.F1, dtype=float)
        self.reference_density = np.asarray(self.reference_density, dtype=float)
        M = self.F0.shape[0]
        if self.base.shape[1] != M or self.F1.shape != self.F0.shape or self.reference_density.shape != (M,):
            raise ConfigurationError("base, F0, F1 and reference density must share the grid size")
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be positive, got {self.rho}")

    @classmethod
    def static(cls, positions, reference_density=None, potential: PotentialSpec | None = None,
               rho: float = math.pi, eps: float = 1.0) -> "LinearizedOperator":
        P = np.asarray(positions, dtype=float)
        if reference_density is None:
            reference_density = np.linalg.norm(spectral.derivative(P), axis=1)
        return cls(np.zeros(1), np.zeros((1,) + P.shape), P, np.zeros_like(P), reference_density,
                   potential or PotentialSpec(), rho, eps)

    @classmethod
    def from_trajectory(cls, traj, cfg) -> "LinearizedOperator":
        """Base = a computed trajectory G(t); F0 = G(0), F1 = dG/dt(0)."""
        F0 = traj.positions[0]
        F1 = traj.velocities[0]
        base = traj.positions - F0[None] - traj.times[:, None, None] * F1[None]
        return cls(traj.times, base, F0, F1, traj.reference_density, cfg.potential, cfg.rho, cfg.force_eps)

    @property
    def M(self) -> int:
        return self.F0.shape[0]

    @property
    def threshold(self) -> float:
        return 1e-6 * float(np.mean(self.reference_density))

    def _index(self, t: float) -> int | None:
        if len(self.times) == 1:
            return 0
        i = int(np.searchsorted(self.times, t))
        for j in (i - 1, i):
            if 0 <= j < len(self.times) and abs(self.times[j] - t) <= 1e-12 * max(1.0, abs(t)):
                return j
        return None

    def fbar(self, t: float) -> np.ndarray:
        i = self._index(t)
        if i is not None:
            return self.base[i]
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise ConfigurationError(f"t = {t} lies outside the base trajectory [{self.times[0]}, {self.times[-1]}]")
        if self._spline is None:
            self._spline = CubicSpline(self.times, self.base, axis=0)
        return self._spline(t)

    def point(self, t: float) -> np.ndarray:
        return self.fbar(t) + self.F0 + t * self.F1

    def frame(self, t: float) -> BaseFrame:
        i = self._index(t)
        key = i if i is not None else float(t)
        fr = self._cache.get(key)
        if fr is None:
            fr = base_frame(self.point(t), self.reference_density, self.potential, self.rho, self.eps, self.threshold)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = fr
        return fr

    def force(self, t: float, Fbar=None) -> np.ndarray:
        """f(Fbar + F0 + t F1); default Fbar is the base."""
        if Fbar is None:
            return self.frame(t).force
        P = np.asarray(Fbar, dtype=float) + self.F0 + t * self.F1
        return base_frame(P, self.reference_density, self.potential, self.rho, self.eps, self.threshold).force


def apply_linearized(op: LinearizedOperator, t: float, h) -> np.ndarray:
    """L(t) h, the derivative of the force at the base point in the direction h."""
    h = np.asarray(h, dtype=float)
    fr = op.frame(t)
    eps = op.eps
    dh, d2h = spectral.derivatives12(h)
    q = _dot(dh, fr.nu)
    p = _dot(dh, fr.T)
    g = fr.speed**2
    dnu = -(q / fr.speed)[:, None] * fr.T
    dH = -_dot(d2h, fr.nu) / g + q * _dot(fr.tau2, fr.T) / (g * fr.speed) - 2.0 * fr.H * p / fr.speed
    ds = eps * eps * _dot(fr.P, h)
    dv = -fr.phi * fr.v * ds
    dsigma = _dot(h, fr.nu) + _dot(fr.P, dnu)
    dvol = float(spectral.integrate(_cross(h, fr.tau)))
    dB = (dv * (-fr.H / eps + eps * fr.phi * fr.sigma)
          + fr.v * (-dH / eps + eps * fr.dphi * ds * fr.sigma + eps * fr.phi * dsigma)
          - op.rho / (eps * eps * fr.volume**2) * dvol)
    dc = (p / op.reference_density) * fr.bracket + fr.ratio * dB
    return dc[:, None] * fr.nu + fr.coefficient[:, None] * dnu


def operator_matrix(op: LinearizedOperator, t: float = 0.0) -> np.ndarray:
    """Dense (2M, 2M) matrix of L(t) acting on h flattened node-major (x0, y0, x1, ...)."""
    n = 2 * op.M
    A = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        A[:, k] = apply_linearized(op, t, e.reshape(op.M, 2)).ravel()
    return A


def normal_block(op: LinearizedOperator, t: float = 0.0) -> np.ndarray:
    """(M, M) matrix of u -> <L(u nu), nu>."""
    nu = op.frame(t).nu
    A = np.empty((op.M, op.M))
    for k in range(op.M):
        u = np.zeros(op.M)
        u[k] = 1.0
        A[:, k] = _dot(apply_linearized(op, t, u[:, None] * nu), nu)
    return A


def mode_frequency(op: LinearizedOperator, k: int, t: float = 0.0) -> tuple[float, float]:
    """Rayleigh quotient omega^2 = -<L h, h>/<h, h> for h = cos(k theta) nu, and the
    relative eigen-residual |L h + omega^2 h| / |h| (zero for an exact eigenfield)."""
    theta = spectral.nodes(op.M)
    h = np.cos(k * theta)[:, None] * op.frame(t).nu
    Lh = apply_linearized(op, t, h)
    hh = float(np.sum(h * h))
    w2 = -float(np.sum(Lh * h)) / hh
    res = float(np.linalg.norm(Lh + w2 * h) / math.sqrt(hh))
    return w2, res


# ---------------------------------------------------------------- weakly hyperbolic form


@dataclass
class WeaklyHyperbolicCoefficients:
    """L(u nu + r tau) = N nu + Q tau with

        N = a u'' + a1 u' + a0 u + b1 r' + b0 r + kernel * integral(u |tau| dtheta)
        Q = m1 u' + p0 r

    The u-equation is a wave equation with principal coefficient
    a = (|tau|/m) v / (eps g); the r-equation has no derivative of r (an ODE
    in time at each node).
    """

    a: np.ndarray
    a1: np.ndarray
    a0: np.ndarray
    b1: np.ndarray
    b0: np.ndarray
    kernel: np.ndarray
    weight: np.ndarray  # |tau|, the density of d(mu_t)
    m1: np.ndarray
    p0: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    rho0: float
    rho1: float

    def decompose(self, h) -> tuple[np.ndarray, np.ndarray]:
        h = np.asarray(h, dtype=float)
        return _dot(h, self.normal), _dot(h, self.tangent) / _dot(self.tangent, self.tangent)

    def apply(self, u, r) -> np.ndarray:
        du, d2u = spectral.derivatives12(np.asarray(u, dtype=float))
        dr = spectral.derivative(np.asarray(r, dtype=float))
        nonlocal_term = self.kernel * float(spectral.integrate(u * self.weight))
        N = self.a * d2u + self.a1 * du + self.a0 * u + self.b1 * dr + self.b0 * r + nonlocal_term
        Q = self.m1 * du + self.p0 * r
        return N[:, None] * self.normal + Q[:, None] * self.tangent


def assemble_coefficients(op: LinearizedOperator, t: float = 0.0, gram_floor: float = 1e-12) -> WeaklyHyperbolicCoefficients:
    """Coefficients of L(t) in the (u, r) variables of h = u nu + r tau."""
    fr = op.frame(t)
    eps = op.eps
    g = fr.speed**2
    if np.min(g) <= gram_floor:
        raise NumericalError(f"frame Gram determinant {np.min(g):.3e} below {gram_floor:.1e}")
    m = op.reference_density
    R = fr.ratio
    v, phi, dphi, sig, B, c = fr.v, fr.phi, fr.dphi, fr.sigma, fr.bracket, fr.coefficient
    dspeed = _dot(fr.tau2, fr.T)  # d|tau|/dtheta
    PT = _dot(fr.P, fr.T)
    Ptau = _dot(fr.P, fr.tau)
    dH = spectral.derivative(fr.H)
    pot = -fr.H / eps + eps * phi * sig
    a = R * v / (eps * g)
    a1 = -R * v / eps * dspeed / fr.speed**3 - R * v * eps * phi * PT / fr.speed
    a0 = (B * fr.hsff / (fr.speed * m)
          + R * (-phi * v * eps**2 * sig * pot + v * fr.hsff**2 / (eps * g * g)
                 + v * eps**3 * dphi * sig * sig + v * eps * phi))
    b1 = B * R
    b0 = (B * dspeed / m
          + R * (-phi * v * eps**2 * Ptau * pot - v * dH / eps
                 + v * eps**3 * dphi * Ptau * sig + v * eps * phi * PT * fr.hsff / fr.speed))
    kernel = -R * op.rho / (eps * eps * fr.volume**2)
    m1 = -c / g
    p0 = c * fr.hsff / g
    return WeaklyHyperbolicCoefficients(a, a1, a0, b1, b0, kernel, fr.speed.copy(), m1, p0,
                                        fr.nu, fr.tau, float(np.min(a)), float(np.max(a)))


# ---------------------------------------------------------------- linear evolution


@dataclass
class LinearSolution:
    times: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    ddh: np.ndarray


def cfl_limit(op: LinearizedOperator, t: float) -> float:
    """Largest stable Verlet step for the frozen principal symbol a k^2, k <= M/2."""
    fr = op.frame(t)
    a_max = float(np.max(fr.ratio * fr.v / (op.eps * fr.speed**2)))
    return 4.0 / (op.M * math.sqrt(a_max))


def solve_linearized(op: LinearizedOperator, W, h0=None, h1=None, times=None) -> LinearSolution:
    """Integrate d^2h/dt^2 = L(t) h + W(t) with h(0) = h0, dh/dt(0) = h1 by velocity Verlet.

    ``W`` is either an array sampled on ``times`` (default: the base grid) or a
    callable ``W(t)``. The grid must be uniform. The positions obey
    h[n+1] - 2 h[n] + h[n-1] = dt^2 (L h + W)[n] exactly in exact arithmetic.
    """
    times = op.times if times is None else np.asarray(times, dtype=float)
    K = len(times)
    if K < 2:
        raise ConfigurationError("solve_linearized needs at least two time samples")
    dt = float(times[1] - times[0])
    if not dt > 0 or np.max(np.abs(np.diff(times) - dt)) > 1e-9 * max(dt, abs(times[-1])):
        raise ConfigurationError("solve_linearized needs a uniform, increasing time grid")
    shape = (op.M, 2)
    h = np.zeros(shape) if h0 is None else np.asarray(h0, dtype=float).copy()
    v = np.zeros(shape) if h1 is None else np.asarray(h1, dtype=float).copy()
    if not callable(W):
        W = np.asarray(W, dtype=float)
        if W.shape[0] < K - 1:
            raise ConfigurationError(f"forcing has {W.shape[0]} samples, need at least {K - 1}")

    def forcing(n):
        if callable(W):
            return W(times[n])
        return W[n] if n < W.shape[0] else np.zeros(shape)

    def accel(n, hn):
        lim = cfl_limit(op, times[n])
        if dt > lim:
            raise ConfigurationError(f"time step {dt:.3e} violates the CFL limit {lim:.3e} at t = {times[n]:.4g}")
        return apply_linearized(op, times[n], hn) + forcing(n)

    H = np.empty((K,) + shape)
    V = np.empty_like(H)
    A = np.empty_like(H)
    a = accel(0, h)
    H[0], V[0], A[0] = h, v, a
    for n in range(K - 1):
        h = h + dt * v + 0.5 * dt * dt * a
        a_new = accel(n + 1, h)
        v = v + 0.5 * dt * (a + a_new)
        a = a_new
        H[n + 1], V[n + 1], A[n + 1] = h, v, a
    return LinearSolution(times.copy(), H, V, A)


def stability_ratio(sol: LinearSolution, W, h0, h1, s: float = 2.0) -> float:
    """|||h|||_{s,T} / (||h0||_{s+1} + ||h1||_{s+1} + |||W|||_{s,T})."""
    num = spectral.field_spacetime_norm(sol.times, sol.h, s)
    Wv = np.asarray(W, dtype=float)
    den = (spectral.sobolev_norm(np.asarray(h0, dtype=float), s + 1)
           + spectral.sobolev_norm(np.asarray(h1, dtype=float), s + 1)
           + spectral.field_spacetime_norm(sol.times[: len(Wv)], Wv, s))
    return float(num / den)
