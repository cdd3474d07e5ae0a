"""Independent reference computations used to check the PDE solver."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

from hypercurve import spectral
from hypercurve.potential import PotentialSpec


def radial_rhs(r: float, r_ref: float, potential: PotentialSpec, rho: float) -> float:
    """r'' for a circle of radius r whose reference circle has radius r_ref."""
    s = 0.5 * r * r
    v = float(potential.v(s))
    phi = float(potential.phi(s))
    return (r / r_ref) * (v * (-1.0 / r + phi * r) + rho / (math.pi * r * r))


def radial_solution(r0: float, rdot0: float, r_ref: float, potential: PotentialSpec, rho: float,
                    times, rtol: float = 1e-12, atol: float = 1e-13):
    """Radius and radial speed of a breathing circle at ``times`` (DOP853)."""
    times = np.asarray(times, dtype=float)

    def rhs(_t, y):
        return [y[1], radial_rhs(y[0], r_ref, potential, rho)]

    sol = solve_ivp(rhs, (0.0, float(times[-1])), [r0, rdot0], method="DOP853",
                    t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[0], sol.y[1]


def radial_energy(r: float, rdot: float, r_ref: float, potential: PotentialSpec, rho: float, vol0: float) -> float:
    """Hamiltonian of the breathing circle: K + int v d(mu_t) - rho log(Vol/Vol0)."""
    K = 0.5 * rdot * rdot * 2.0 * math.pi * r_ref
    return K + 2.0 * math.pi * r * float(potential.v(0.5 * r * r)) - rho * math.log(math.pi * r * r / vol0)


def discrete_potential_energy(positions, potential: PotentialSpec, rho: float, vol0: float, eps: float = 1.0) -> float:
    """V_disc = sum_j v(s_j) |dF/dtheta|_j dtheta - rho*log(Vol/Vol0), spectral derivatives.

    With eps != 1 this is the energy of the rescaled equation, eps^-2 times the
    original energy evaluated at eps*F.
    """
    F = np.asarray(positions, dtype=float) * eps
    tau = spectral.derivative(F)
    speed = np.hypot(tau[:, 0], tau[:, 1])
    s = 0.5 * np.einsum("ij,ij->i", F, F)
    vol = 0.5 * spectral.integrate(F[:, 0] * tau[:, 1] - F[:, 1] * tau[:, 0])
    return float((spectral.integrate(potential.v(s) * speed) - rho * math.log(vol / (vol0 * eps * eps))) / eps**2)


def fd_gradient_acceleration(positions, reference_density, potential: PotentialSpec, rho: float,
                             vol0: float = 1.0, delta: float = 1e-6, eps: float = 1.0) -> np.ndarray:
    """-(1/(m_j dtheta)) dV_disc/dF_j by central differences over every node coordinate."""
    F = np.asarray(positions, dtype=float)
    M = F.shape[0]
    dtheta = 2.0 * np.pi / M
    grad = np.zeros_like(F)
    for j in range(M):
        for c in range(2):
            Fp = F.copy()
            Fm = F.copy()
            Fp[j, c] += delta
            Fm[j, c] -= delta
            grad[j, c] = (discrete_potential_energy(Fp, potential, rho, vol0, eps)
                          - discrete_potential_energy(Fm, potential, rho, vol0, eps)) / (2 * delta)
    return -grad / (np.asarray(reference_density)[:, None] * dtheta)


def shoelace_area(positions) -> float:
    P = np.asarray(positions, dtype=float)
    Q = np.roll(P, -1, axis=0)
    return float(0.5 * np.sum(P[:, 0] * Q[:, 1] - P[:, 1] * Q[:, 0]))


def ellipse_curvature(a: float, b: float, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return a * b / (a * a * np.sin(theta) ** 2 + b * b * np.cos(theta) ** 2) ** 1.5


# ---------------------------------------------------------------- extended-precision force


def _mp_potential(potential: PotentialSpec):
    """(v, phi) as mpmath callables for the closed-form potential kinds."""
    import mpmath as mp

    n = mp.mpf(potential.n)
    if potential.kind == "zero-eta":
        return (lambda s: mp.mpf(1)), (lambda s: mp.mpf(0))
    if potential.kind == "gaussian":
        gam = mp.mpf(potential.gamma)
        return (lambda s: mp.exp(-gam * (s - 1))), (lambda s: gam)
    if potential.kind == "power":
        kap, q = mp.mpf(potential.kappa), mp.mpf(potential.p) + 1

        def v(s):
            return mp.exp(-n / 2 * kap * (s**q - 1) / q)

        return v, (lambda s: n / 2 * kap * s ** (q - 1))
    raise ValueError(f"no extended-precision form for potential kind {potential.kind!r}")


class MPForce:
    """The grid force c(F) nu evaluated in mpmath at ``dps`` digits.

    Derivatives use dense trigonometric differentiation matrices with the
    Nyquist mode dropped, the same discrete operator as the FFT path, so the
    result agrees with the double-precision force to round-off while
    finite differences of it stay clean down to very small steps.
    """

    def __init__(self, M: int, reference_density, potential: PotentialSpec, rho: float,
                 eps: float = 1.0, dps: int = 40):
        import mpmath as mp

        self.mp = mp
        mp.mp.dps = dps
        self.M = M
        theta = [2 * mp.pi * j / M for j in range(M)]
        ks = range(1, M // 2)
        self.D1 = [[sum(-2 * k * mp.sin(k * (theta[i] - theta[j])) for k in ks) / M for j in range(M)] for i in range(M)]
        self.D2 = [[sum(-2 * k * k * mp.cos(k * (theta[i] - theta[j])) for k in ks) / M for j in range(M)] for i in range(M)]
        self.m = [mp.mpf(float(x)) for x in np.asarray(reference_density)]
        self.v, self.phi = _mp_potential(potential)
        self.rho = mp.mpf(rho)
        self.eps = mp.mpf(eps)
        self.dtheta = 2 * mp.pi / M

    def _apply(self, D, u):
        return [self.mp.fsum(D[i][j] * u[j] for j in range(self.M)) for i in range(self.M)]

    def __call__(self, X, Y):
        """Force at nodes (X[j], Y[j]) given as lists of mpf; returns two lists."""
        mp, eps = self.mp, self.eps
        X1, Y1 = self._apply(self.D1, X), self._apply(self.D1, Y)
        X2, Y2 = self._apply(self.D2, X), self._apply(self.D2, Y)
        vol = mp.fsum(X[j] * Y1[j] - Y[j] * X1[j] for j in range(self.M)) * self.dtheta / 2
        fx, fy = [], []
        for j in range(self.M):
            sp = mp.sqrt(X1[j] ** 2 + Y1[j] ** 2)
            nx, ny = Y1[j] / sp, -X1[j] / sp
            H = -(X2[j] * nx + Y2[j] * ny) / sp**2
            s = eps * eps * (X[j] ** 2 + Y[j] ** 2) / 2
            B = self.v(s) * (-H / eps + eps * self.phi(s) * (X[j] * nx + Y[j] * ny)) + self.rho / (eps * eps * vol)
            c = sp / self.m[j] * B
            fx.append(c * nx)
            fy.append(c * ny)
        return fx, fy

    def central_difference(self, P, h, delta: float) -> np.ndarray:
        """(f(P + delta h) - f(P - delta h)) / (2 delta), computed at extended precision."""
        mp = self.mp
        P = np.asarray(P, dtype=float)
        h = np.asarray(h, dtype=float)
        d = mp.mpf(delta)
        Xp = [mp.mpf(float(P[j, 0])) + d * mp.mpf(float(h[j, 0])) for j in range(self.M)]
        Yp = [mp.mpf(float(P[j, 1])) + d * mp.mpf(float(h[j, 1])) for j in range(self.M)]
        Xm = [mp.mpf(float(P[j, 0])) - d * mp.mpf(float(h[j, 0])) for j in range(self.M)]
        Ym = [mp.mpf(float(P[j, 1])) - d * mp.mpf(float(h[j, 1])) for j in range(self.M)]
        fpx, fpy = self(Xp, Yp)
        fmx, fmy = self(Xm, Ym)
        return np.array([[float((fpx[j] - fmx[j]) / (2 * d)), float((fpy[j] - fmy[j]) / (2 * d))]
                         for j in range(self.M)])

    def force(self, P) -> np.ndarray:
        mp = self.mp
        P = np.asarray(P, dtype=float)
        fx, fy = self([mp.mpf(float(x)) for x in P[:, 0]], [mp.mpf(float(y)) for y in P[:, 1]])
        return np.array([[float(a), float(b)] for a, b in zip(fx, fy)])
