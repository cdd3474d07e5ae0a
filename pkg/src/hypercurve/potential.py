"""
Radially symmetric potential.

The density is v(s) = exp(-(n/2) * int_1^s eta(w)/w dw) with s = |F|^2/2,
and the force coefficient is phi(s) = (n/(2s)) eta(s) = -v'(s)/v(s).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from hypercurve.errors import ConfigurationError, NumericalError

KINDS = ("zero-eta", "gaussian", "power", "tabulated")


@dataclass(frozen=True)
class PotentialSpec:
    """Choice of eta.

    kind
        ``zero-eta`` (v = 1), ``gaussian`` (eta = 2*gamma*w/n),
        ``power`` (eta = kappa * w**(p+1)) or ``tabulated``.
    """

    kind: str = "zero-eta"
    n: int = 1
    gamma: float = 0.0
    kappa: float = 0.0
    p: float = 0.0
    table_w: tuple[float, ...] = ()
    table_eta: tuple[float, ...] = ()
    _spline: CubicSpline | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"potential.kind must be one of {KINDS}, got {self.kind!r}")
        if self.n < 1:
            raise ConfigurationError(f"potential.n must be >= 1, got {self.n}")
        if self.kind == "power" and self.p < 0:
            raise ConfigurationError(f"potential.p must be nonnegative, got {self.p}")
        if self.kind == "tabulated":
            w = np.asarray(self.table_w, dtype=float)
            eta = np.asarray(self.table_eta, dtype=float)
            if w.size < 4 or w.size != eta.size:
                raise ConfigurationError("tabulated eta needs >= 4 (w, eta) rows of equal length")
            if np.any(np.diff(w) <= 0) or w[0] <= 0:
                raise ConfigurationError("tabulated w must be positive and strictly increasing")
            if not (w[0] <= 1.0 <= w[-1]):
                raise ConfigurationError("tabulated range must contain w = 1 (lower limit of the integral)")
            object.__setattr__(self, "_spline", CubicSpline(w, eta))

    @classmethod
    def from_csv(cls, path, n: int = 1) -> "PotentialSpec":
        """Read a two-column (w, eta) CSV; a non-numeric header row is skipped."""
        rows = []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise ConfigurationError(f"bad row in {path}: {row}") from None
        w, eta = zip(*rows) if rows else ((), ())
        return cls(kind="tabulated", n=n, table_w=tuple(w), table_eta=tuple(eta))

    @property
    def working_range(self) -> tuple[float, float]:
        if self.kind == "tabulated":
            return float(self.table_w[0]), float(self.table_w[-1])
        return 0.0, np.inf

    def _check_range(self, s: np.ndarray):
        if np.any(s <= 0):
            raise ConfigurationError("s = |F|^2/2 must be positive")
        lo, hi = self.working_range
        if np.any(s < lo) or np.any(s > hi):
            raise NumericalError(f"s outside the tabulated working range [{lo}, {hi}]")

    def eta(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "zero-eta":
            return np.zeros_like(w)
        if self.kind == "gaussian":
            return 2.0 * self.gamma * w / self.n
        if self.kind == "power":
            return self.kappa * w ** (self.p + 1.0)
        return self._spline(w)

    def log_v(self, s):
        """log v(s) = -(n/2) * int_1^s eta(w)/w dw."""
        s = np.asarray(s, dtype=float)
        self._check_range(s)
        half_n = 0.5 * self.n
        if self.kind == "zero-eta":
            return np.zeros_like(s)
        if self.kind == "gaussian":
            return -half_n * (2.0 * self.gamma / self.n) * (s - 1.0)
        if self.kind == "power":
            q = self.p + 1.0
            return -half_n * self.kappa * (s**q - 1.0) / q
        return -half_n * np.vectorize(self._quad, otypes=[float])(s)

    def _quad(self, s: float) -> float:
        knots = [w for w in self.table_w if min(1.0, s) < w < max(1.0, s)]
        val, err = integrate.quad(
            lambda w: float(self._spline(w)) / w, 1.0, s,
            epsabs=1e-13, epsrel=1e-10, points=knots or None, limit=200,
        )
        if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
            raise NumericalError(f"quadrature of eta(w)/w failed at s={s} (err={err})")
        return val

    def v(self, s):
        return np.exp(self.log_v(s))

    def phi(self, s):
        s = np.asarray(s, dtype=float)
        self._check_range(s)
        return 0.5 * self.n * self.eta(s) / s

    def dphi(self, s):
        """d phi / ds."""
        s = np.asarray(s, dtype=float)
        self._check_range(s)
        if self.kind in ("zero-eta", "gaussian"):
            return np.zeros_like(s)
        if self.kind == "power":
            return 0.5 * self.n * self.kappa * self.p * s ** (self.p - 1.0) if self.p else np.zeros_like(s)
        return 0.5 * self.n * (self._spline(s, 1) / s - self._spline(s) / s**2)

    @property
    def is_constant(self) -> bool:
        return self.kind == "zero-eta" or (self.kind == "gaussian" and self.gamma == 0.0) or (
            self.kind == "power" and self.kappa == 0.0
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.kind == "gaussian":
            d["gamma"] = self.gamma
        elif self.kind == "power":
            d.update(kappa=self.kappa, p=self.p)
        elif self.kind == "tabulated":
            d.update(table_w=list(self.table_w), table_eta=list(self.table_eta))
        return d


def v_of_s(spec: PotentialSpec, s):
    return spec.v(s)


def phi_of_s(spec: PotentialSpec, s):
    return spec.phi(s)


@dataclass
class GrowthReport:
    passed: bool
    worst_margin: float
    min_abs_ratio: float
    p: float
    interval: tuple[float, float]
    note: str = ""


def check_growth(spec: PotentialSpec, p: float, interval: tuple[float, float], samples: int = 2001) -> GrowthReport:
    """Check 0 < |eta(w)/w| <= |w|^p on ``interval`` by dense sampling.

    ``worst_margin`` is min(|w|^p - |eta/w|); negative means the upper bound fails.
    v = 1 (eta = 0) violates the strict lower bound but is the classical
    comparison case, so it is reported as a boundary pass.
    """
    lo, hi = map(float, interval)
    if not (0 < lo < hi):
        raise ConfigurationError(f"growth interval must satisfy 0 < lo < hi, got {interval}")
    w = np.linspace(lo, hi, samples)
    ratio = np.abs(spec.eta(w) / w)
    margin = float(np.min(np.abs(w) ** p - ratio))
    min_ratio = float(np.min(ratio))
    if spec.kind == "zero-eta":
        return GrowthReport(True, margin, min_ratio, p, (lo, hi), note="boundary case: eta == 0 (v == 1)")
    # relative slack for the equality case |eta/w| == w^p
    passed = min_ratio > 0 and margin >= -1e-12 * max(1.0, hi**p)
    return GrowthReport(passed, margin, min_ratio, p, (lo, hi))
