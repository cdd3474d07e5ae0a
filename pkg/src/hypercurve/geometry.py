"""
Differential geometry of a sampled closed plane curve F: S^1 -> R^2.

Conventions: tangent tau = dF/dtheta, metric g = |tau|^2, outward normal
nu = (T_2, -T_1) with T = tau/|tau| for a counterclockwise curve, second
fundamental form h = -<F_thth, nu>, mean curvature H = h/g (unit circle:
H = +1). Derivatives are spectral.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from hypercurve import spectral
from hypercurve.errors import ConfigurationError, DegeneracyError

IMMERSION_RTOL = 1e-6


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


@dataclass(frozen=True)
class GridImmersion:
    """Node positions F_j (shape (M, 2)) and the frozen reference density m_j.

    The reference measure is d(mu) = m(theta) d(theta); by default m is the
    speed |dF/dtheta| of the initial immersion.
    """

    positions: np.ndarray
    reference_density: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.positions, dtype=float)
        m = np.asarray(self.reference_density, dtype=float)
        if F.ndim != 2 or F.shape[1] != 2:
            raise ConfigurationError(f"positions must have shape (M, 2), got {F.shape}")
        spectral.check_grid(F.shape[0])
        if m.shape != (F.shape[0],):
            raise ConfigurationError("reference_density must have one entry per node")
        if not np.all(np.isfinite(F)):
            raise ConfigurationError("positions contain NaN or Inf")
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ConfigurationError("reference_density must be positive and finite")
        object.__setattr__(self, "positions", F)
        object.__setattr__(self, "reference_density", m)

    @classmethod
    def from_positions(cls, positions) -> "GridImmersion":
        """Use the curve itself as the reference immersion."""
        F = np.asarray(positions, dtype=float)
        return cls(F, np.linalg.norm(spectral.derivative(F), axis=1))

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def immersion_threshold(self) -> float:
        return IMMERSION_RTOL * float(np.mean(self.reference_density))

    def with_positions(self, positions) -> "GridImmersion":
        return GridImmersion(positions, self.reference_density)


@dataclass(frozen=True)
class GeometryBundle:
    tangent: np.ndarray
    speed: np.ndarray  # |tau| = sqrt(g) = d(mu_t)/d(theta)
    unit_tangent: np.ndarray
    normal: np.ndarray
    second_fundamental_form: np.ndarray
    mean_curvature: np.ndarray
    measure_ratio: np.ndarray
    volume: float

    @property
    def metric(self) -> np.ndarray:
        return self.speed**2

    @property
    def inverse_metric(self) -> np.ndarray:
        return 1.0 / self.speed**2


def frame(positions, threshold: float = 0.0):
    """Tangent, speed, unit tangent and outward normal of raw node positions."""
    F = np.asarray(positions, dtype=float)
    tau, tau2 = spectral.derivatives12(F)
    speed = np.hypot(tau[:, 0], tau[:, 1])
    j = int(np.argmin(speed))
    if not speed[j] > threshold:
        raise DegeneracyError(
            f"immersion condition violated: |dF/dtheta| = {speed[j]:.3e} <= {threshold:.3e} at node {j}",
            node=j, speed=float(speed[j]),
        )
    T = tau / speed[:, None]
    nu = np.stack([T[:, 1], -T[:, 0]], axis=1)
    return tau, tau2, speed, T, nu


def volume_of(positions) -> float:
    """Enclosed area (1/2) * integral of (x y' - y x') d(theta); positive for counterclockwise curves."""
    F = np.asarray(positions, dtype=float)
    tau = spectral.derivative(F)
    return float(0.5 * spectral.integrate(_cross(F, tau)))


def bundle(F: GridImmersion, threshold: float | None = None) -> GeometryBundle:
    if threshold is None:
        threshold = F.immersion_threshold
    tau, tau2, speed, T, nu = frame(F.positions, threshold)
    hsff = -_dot(tau2, nu)
    H = hsff / speed**2
    vol = float(0.5 * spectral.integrate(_cross(F.positions, tau)))
    return GeometryBundle(
        tangent=tau, speed=speed, unit_tangent=T, normal=nu,
        second_fundamental_form=hsff, mean_curvature=H,
        measure_ratio=speed / F.reference_density, volume=vol,
    )


def outward_normal(F: GridImmersion) -> np.ndarray:
    return frame(F.positions, F.immersion_threshold)[4]


def mean_curvature(F: GridImmersion) -> np.ndarray:
    return bundle(F).mean_curvature


def measure_ratio(F: GridImmersion) -> np.ndarray:
    """d(mu_t)/d(mu) = |dF/dtheta| / m."""
    return frame(F.positions, F.immersion_threshold)[2] / F.reference_density


def turning_number(positions) -> int:
    """Winding number of the tangent direction."""
    tau = spectral.derivative(np.asarray(positions, dtype=float))
    ang = np.arctan2(tau[:, 1], tau[:, 0])
    steps = np.angle(np.exp(1j * np.diff(np.append(ang, ang[0]))))
    return int(np.rint(np.sum(steps) / (2.0 * np.pi)))


def _segments_cross(P: np.ndarray) -> bool:
    """True if two non-adjacent edges of the closed node polygon intersect."""
    A = P
    B = np.roll(P, -1, axis=0)
    M = len(P)
    d = B - A
    for i in range(M):
        j = np.arange(i + 2, M)
        if i == 0:
            j = j[j != M - 1]
        if j.size == 0:
            continue
        r = d[i]
        s = d[j]
        qp = A[j] - A[i]
        den = r[0] * s[:, 1] - r[1] * s[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
            u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
        if np.any((den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)):
            return True
    return False


def is_simple(positions) -> bool:
    """Turning number +-1 and no crossing edges of the node polygon."""
    return abs(turning_number(positions)) == 1 and not _segments_cross(np.asarray(positions, dtype=float))


def enclosed_volume(F: GridImmersion, check: bool = True) -> float:
    """Enclosed area by the divergence theorem, (1/2) * integral <F, nu> d(mu_t).

    With ``check`` a self-intersection test runs first and only warns;
    the signed value is returned either way.
    """
    if check and not is_simple(F.positions):
        warnings.warn("curve is not simple; enclosed volume is a signed winding-weighted area", RuntimeWarning)
    return volume_of(F.positions)


def surface_gradient(F: GridImmersion, f) -> np.ndarray:
    """grad f = g^{-1} (df/dtheta) dF/dtheta."""
    tau, _, speed, _, _ = frame(F.positions, F.immersion_threshold)
    df = spectral.derivative(np.asarray(f, dtype=float))
    return (df / speed**2)[:, None] * tau


def laplace_beltrami(F: GridImmersion, f) -> np.ndarray:
    """Delta_g f = (1/sqrt g) d/dtheta (sqrt g * g^{-1} df/dtheta)."""
    speed = frame(F.positions, F.immersion_threshold)[2]
    df = spectral.derivative(np.asarray(f, dtype=float))
    return spectral.derivative(df / speed) / speed


def decompose(F: GridImmersion, h) -> tuple[np.ndarray, np.ndarray]:
    """Split h = u nu + h_T; returns (u, h_T)."""
    nu = outward_normal(F)
    h = np.asarray(h, dtype=float)
    u = _dot(h, nu)
    return u, h - u[:, None] * nu
