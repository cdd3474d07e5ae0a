"""
Periodic spectral calculus on the circle.

Samples live at theta_j = 2*pi*j/M, j = 0..M-1, with M a power of two.
Mode coefficients use the normalization

    u_hat[k] = (1/M) * sum_j u_j exp(-i k theta_j),   k = -M/2 .. M/2-1

and Sobolev norms use ||u||_s^2 = sum_k (1 + k^2)^s |u_hat[k]|^2, so that
||u||_0 is the mean-square (1/2pi) L2 norm. Vector-valued samples (shape
(M, d)) are treated componentwise and their norms combined in root-sum-square.
"""

from __future__ import annotations

import numpy as np

from hypercurve.errors import ConfigurationError

MIN_POINTS = 16


def check_grid(M: int) -> int:
    """Validate a grid size: power of two, at least 16."""
    M = int(M)
    if M < MIN_POINTS or M & (M - 1):
        raise ConfigurationError(f"grid size M={M} must be a power of two >= {MIN_POINTS}")
    return M


def _validate(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim not in (1, 2):
        raise ConfigurationError(f"samples must have shape (M,) or (M, d), got {u.shape}")
    check_grid(u.shape[0])
    if not np.all(np.isfinite(u)):
        raise ConfigurationError("samples contain NaN or Inf")
    return u


def nodes(M: int) -> np.ndarray:
    M = check_grid(M)
    return 2.0 * np.pi * np.arange(M) / M


def wavenumbers(M: int) -> np.ndarray:
    """Integer wavenumbers in FFT order (0, 1, ..., M/2-1, -M/2, ..., -1)."""
    return np.fft.fftfreq(M, d=1.0 / M)


def to_modes(u) -> np.ndarray:
    """Mode coefficients ordered k = -M/2 .. M/2-1 (along axis 0)."""
    u = _validate(u)
    return np.fft.fftshift(np.fft.fft(u, axis=0) / u.shape[0], axes=0)


def from_modes(coeffs) -> np.ndarray:
    """Inverse of :func:`to_modes`; returns real samples (imaginary round-off dropped)."""
    coeffs = np.asarray(coeffs)
    M = check_grid(coeffs.shape[0])
    return np.real(np.fft.ifft(np.fft.ifftshift(coeffs, axes=0) * M, axis=0))


def _multiplier(M: int, order: int) -> np.ndarray:
    k = np.fft.rfftfreq(M, d=1.0 / M)
    mult = (1j * k) ** order
    # Nyquist mode has no real derivative
    mult[-1] = 0.0
    return mult


def derivative(u, order: int = 1) -> np.ndarray:
    """Spectral derivative d^order/dtheta^order along axis 0 (Nyquist mode dropped)."""
    u = np.asarray(u, dtype=float)
    M = u.shape[0]
    mult = _multiplier(M, order)
    if u.ndim == 2:
        mult = mult[:, None]
    return np.fft.irfft(np.fft.rfft(u, axis=0) * mult, n=M, axis=0)


def derivatives12(u) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative sharing one forward transform."""
    u = np.asarray(u, dtype=float)
    M = u.shape[0]
    uh = np.fft.rfft(u, axis=0)
    m1, m2 = _multiplier(M, 1), _multiplier(M, 2)
    if u.ndim == 2:
        m1, m2 = m1[:, None], m2[:, None]
    return np.fft.irfft(uh * m1, n=M, axis=0), np.fft.irfft(uh * m2, n=M, axis=0)


def mean(u) -> np.ndarray:
    """(1/2pi) * integral over the circle; exact for band-limited samples."""
    return np.mean(np.asarray(u, dtype=float), axis=0)


def integrate(u) -> np.ndarray:
    """Integral over [0, 2pi) by the trapezoid rule (spectrally accurate)."""
    return 2.0 * np.pi * mean(u)


def sobolev_weights(M: int, s: float) -> np.ndarray:
    k = wavenumbers(M)
    return (1.0 + k * k) ** s


def sobolev_norm(u, s: float) -> float:
    """||u||_{H^s} with the (1 + k^2)^s weight convention."""
    if s < 0:
        raise ConfigurationError(f"Sobolev order must be nonnegative, got {s}")
    u = _validate(u)
    M = u.shape[0]
    uh = np.fft.fft(u, axis=0) / M
    w = sobolev_weights(M, s)
    if u.ndim == 2:
        w = w[:, None]
    return float(np.sqrt(np.sum(w * np.abs(uh) ** 2)))


def smoothstep(x) -> np.ndarray:
    """Quintic smoothstep 6x^5 - 15x^4 + 10x^3, clamped to [0, 1] outside the unit interval."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


def truncation_symbol(M: int, N: float) -> np.ndarray:
    """Per-mode factor S(N - |k|) in FFT order."""
    return smoothstep(N - np.abs(wavenumbers(M)))


def smooth_truncate(u, N: float) -> np.ndarray:
    """Smoothing operator Pi_N: scale mode k by S(N - |k|).

    Modes with |k| >= N vanish and modes with |k| <= N - 1 pass unchanged.
    For N >= M/2 the grid holds no frequency above the cutoff and the input
    is returned as is (this includes the Nyquist mode at N == M/2).
    """
    if not N > 0:
        raise ConfigurationError(f"truncation level must be positive, got N={N}")
    u = _validate(u)
    M = u.shape[0]
    if N >= M // 2:
        return u.copy()
    sym = truncation_symbol(M, N)
    if u.ndim == 2:
        sym = sym[:, None]
    return np.real(np.fft.ifft(np.fft.fft(u, axis=0) * sym, axis=0))


def time_derivatives(times, values) -> tuple[np.ndarray, np.ndarray]:
    """Second-order finite-difference d/dt and d^2/dt^2 along axis 0 of a sampled field."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 3:
        raise ConfigurationError("need at least three time samples for time derivatives")
    d1 = np.gradient(values, times, axis=0, edge_order=2)
    d2 = np.gradient(d1, times, axis=0, edge_order=2)
    return d1, d2


def _sup_norm(times, u, ut, utt, s: float, T: float | None) -> float:
    if s < 2:
        raise ConfigurationError(f"spacetime norm needs s >= 2 (got s={s}) for the H^(s-2) term")
    times = np.asarray(times, dtype=float)
    if T is None:
        T = float(times[-1])
    if T <= 0:
        raise ConfigurationError(f"time horizon must be positive, got T={T}")
    tol = 1e-9 * max(1.0, abs(T))
    if times[0] > tol or times[-1] < T - tol:
        raise ConfigurationError(f"samples cover [{times[0]}, {times[-1]}], not [0, {T}]")
    best = 0.0
    for n in np.flatnonzero(times <= T + tol):
        total = sobolev_norm(u[n], s) + sobolev_norm(ut[n], s - 1) + sobolev_norm(utt[n], s - 2)
        best = max(best, total)
    return best


def spacetime_norm(traj, s: float, T: float | None = None) -> float:
    """|||u|||_{s,T} = sup_{t<=T} sum_{i=0..2} ||d_t^i u(t)||_{H^(s-i)} of a trajectory.

    ``traj`` needs ``times``, ``positions``, ``velocities`` and ``accelerations``
    arrays; the stored velocity and acceleration are used as the time derivatives.
    """
    return _sup_norm(traj.times, traj.positions, traj.velocities, traj.accelerations, s, T)


def field_spacetime_norm(times, values, s: float, T: float | None = None) -> float:
    """Same norm for a field sampled on a time grid without stored derivatives.

    Time derivatives come from second-order finite differences.
    """
    values = np.asarray(values, dtype=float)
    d1, d2 = time_derivatives(times, values)
    return _sup_norm(times, values, d1, d2, s, T)
