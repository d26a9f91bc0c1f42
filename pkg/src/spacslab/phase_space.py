"""Wigner functions, quadrature marginals and their moments.

Points of phase space are z = x + i y with x the in-phase quadrature; the
vacuum Wigner function is (2/pi) exp(-2|z|^2) and its marginals have variance 1/4.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.interpolate import RectBivariateSpline
from scipy.special import eval_genlaguerre, gammaln

from spacslab.errors import MassOutsideGrid
from spacslab.fock import DensityMatrix, oscillator_wavefunctions

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 301
DEFAULT_GRID_HALF_WIDTH = 4.0
GRID_MASS_TOLERANCE = 1e-6

PROVENANCE_IDEAL = "analytic-ideal"
PROVENANCE_LOSSY = "analytic-lossy"
PROVENANCE_MATRIX = "matrix-derived"


@dataclass(frozen=True)
class EfficiencyModel:
    """Overall detection efficiency eta in (0, 1]."""

    eta: float = 1.0

    def __post_init__(self):
        eta = float(self.eta)
        if not (0.0 < eta <= 1.0):
            raise ValueError(f"efficiency must lie in (0, 1], got {self.eta!r}")
        object.__setattr__(self, "eta", eta)


def as_efficiency(eff) -> EfficiencyModel:
    return eff if isinstance(eff, EfficiencyModel) else EfficiencyModel(float(eff))


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int = DEFAULT_GRID_POINTS
    ny: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        bounds = (self.x_min, self.x_max, self.y_min, self.y_max)
        if not np.all(np.isfinite(bounds)):
            raise ValueError(f"grid bounds must be finite, got {bounds}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError(f"grid bounds are empty: {bounds}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 points, got {self.nx}x{self.ny}")

    @classmethod
    def around(cls, alpha: complex = 0.0, points: int = DEFAULT_GRID_POINTS) -> "GridSpec":
        """Square grid [-4-|alpha|, 4+|alpha|]^2, enough for the mass of every state built here."""
        half = DEFAULT_GRID_HALF_WIDTH + abs(complex(alpha))
        return cls(-half, half, -half, half, points, points)

    def axes(self):
        return np.linspace(self.x_min, self.x_max, self.nx), np.linspace(self.y_min, self.y_max, self.ny)

    def mesh(self) -> np.ndarray:
        """Complex z = x + i y with shape (nx, ny), 'ij' indexing."""
        xs, ys = self.axes()
        x, y = np.meshgrid(xs, ys, indexing="ij")
        return x + 1j * y


@dataclass(frozen=True, eq=False)
class WignerGrid:
    """Quasi-probability values on a rectangular grid; ``values[i, j]`` sits at (xs[i], ys[j])."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.spec.nx, self.spec.ny):
            raise ValueError(f"values shape {values.shape} does not match grid {self.spec.nx}x{self.spec.ny}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def xs(self) -> np.ndarray:
        return self.spec.axes()[0]

    @property
    def ys(self) -> np.ndarray:
        return self.spec.axes()[1]

    @property
    def dx(self) -> float:
        return (self.spec.x_max - self.spec.x_min) / (self.spec.nx - 1)

    @property
    def dy(self) -> float:
        return (self.spec.y_max - self.spec.y_min) / (self.spec.ny - 1)

    def integral(self) -> float:
        return float(trapezoid(trapezoid(self.values, self.ys, axis=1), self.xs))

    def edge_mass_estimate(self) -> float:
        """Upper estimate of mass beyond the bounds from the boundary values.

        Beyond the edge the tails fall off at least like exp(-2 r^2), whose
        integral past a boundary value is below half the value per unit length.
        """
        v = np.abs(self.values)
        edges = (v[0, :].sum() + v[-1, :].sum()) * self.dy + (v[:, 0].sum() + v[:, -1].sum()) * self.dx
        return 0.5 * float(edges)

    def header(self) -> Dict[str, Any]:
        s = self.spec
        return {
            "x_min": s.x_min, "x_max": s.x_max, "y_min": s.y_min, "y_max": s.y_max,
            "nx": s.nx, "ny": s.ny, "dx": self.dx, "dy": self.dy,
            "integral": self.integral(),
        }

    def to_frame(self) -> pd.DataFrame:
        x, y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return pd.DataFrame({"x": x.ravel(), "y": y.ravel(), "W": self.values.ravel()})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "WignerGrid":
        xs = np.unique(frame["x"].to_numpy())
        ys = np.unique(frame["y"].to_numpy())
        ordered = frame.sort_values(["x", "y"])
        spec = GridSpec(float(xs[0]), float(xs[-1]), float(ys[0]), float(ys[-1]), xs.size, ys.size)
        return cls(spec, ordered["W"].to_numpy().reshape(xs.size, ys.size))


@dataclass(frozen=True)
class MarginalDistribution:
    """Quadrature density p(x, theta) with the model it came from."""

    evaluator: Callable[[np.ndarray, float], np.ndarray]
    provenance: str

    def __call__(self, x, theta: float) -> np.ndarray:
        return self.evaluator(np.asarray(x, dtype=float), float(theta))

    def normalization(self, theta: float, half_width: float = 12.0, points: int = 8001) -> float:
        x = np.linspace(-half_width, half_width, points)
        return float(trapezoid(self(x, theta), x))

    def tabulate(self, theta: float, x=None) -> pd.DataFrame:
        if x is None:
            x = np.linspace(-5.0, 5.0, 501)
        x = np.asarray(x, dtype=float)
        return pd.DataFrame({"x": x, "p": self(x, theta)})


@dataclass(frozen=True, eq=False)
class TabulatedMarginal:
    theta: float
    x: np.ndarray
    p: np.ndarray
    normalization_error: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "p": self.p})


@dataclass(frozen=True)
class NegativityReport:
    min_value: float
    x: float
    y: float

    @property
    def is_negative(self) -> bool:
        return self.min_value < 0.0


# --- analytic Wigner functions ---

def wigner_spacs(alpha: complex, grid: GridSpec) -> WignerGrid:
    alpha = complex(alpha)
    z = grid.mesh()
    d = 2.0 * z - alpha
    values = -2.0 * (1.0 - np.abs(d) ** 2) / (np.pi * (1.0 + abs(alpha) ** 2)) * np.exp(-2.0 * np.abs(z - alpha) ** 2)
    return WignerGrid(grid, values)


def wigner_spacs_lossy(alpha: complex, eff, grid: GridSpec) -> WignerGrid:
    """SPACS seen through a detector of efficiency eta; negative only for eta > 1/2."""
    alpha = complex(alpha)
    eta = as_efficiency(eff).eta
    z = grid.mesh()
    c = 2.0 * eta - 1.0
    bracket = c - np.abs(2.0 * np.sqrt(eta) * z - alpha * c) ** 2
    values = -2.0 * bracket / (np.pi * (1.0 + abs(alpha) ** 2)) * np.exp(-2.0 * np.abs(z - np.sqrt(eta) * alpha) ** 2)
    return WignerGrid(grid, values)


def wigner_coherent(alpha: complex, eff, grid: GridSpec) -> WignerGrid:
    eta = as_efficiency(eff).eta
    z = grid.mesh()
    return WignerGrid(grid, 2.0 / np.pi * np.exp(-2.0 * np.abs(z - np.sqrt(eta) * complex(alpha)) ** 2))


# --- number-basis Wigner functions ---

def _basis_wigner_lower(n: int, m: int, z: np.ndarray) -> np.ndarray:
    """Wigner function of |n><m| for n >= m."""
    d = n - m
    r2 = 4.0 * np.abs(z) ** 2
    coef = (-1) ** m * np.exp(0.5 * (gammaln(m + 1) - gammaln(n + 1)))
    return (2.0 / np.pi) * coef * (2.0 * np.conj(z)) ** d * eval_genlaguerre(m, d, r2) * np.exp(-0.5 * r2)


def basis_wigner(n: int, m: int, z) -> np.ndarray:
    """Wigner function of the operator |n><m| at the complex points ``z``."""
    z = np.asarray(z, dtype=complex)
    if n >= m:
        return _basis_wigner_lower(n, m, z)
    return np.conj(_basis_wigner_lower(m, n, z))


def wigner_from_density(rho: DensityMatrix, grid: GridSpec) -> WignerGrid:
    """W = sum_nm rho_nm W_nm, folded to the lower triangle by Hermiticity."""
    z = grid.mesh()
    elems = rho.elems
    values = np.zeros(z.shape)
    r2 = 4.0 * np.abs(z) ** 2
    gauss = (2.0 / np.pi) * np.exp(-0.5 * r2)
    zc2 = 2.0 * np.conj(z)
    power = np.ones_like(z)
    for d in range(rho.dim):
        for m in range(rho.dim - d):
            n = m + d
            weight = elems[n, m]
            if weight == 0:
                continue
            coef = (-1) ** m * np.exp(0.5 * (gammaln(m + 1) - gammaln(n + 1)))
            term = coef * power * eval_genlaguerre(m, d, r2) * gauss
            values += (weight * term).real if d == 0 else 2.0 * (weight * term).real
        power = power * zc2
    return WignerGrid(grid, values)


# --- marginals ---

def marginal_radon(grid: WignerGrid, theta: float, x=None, tolerance: float = GRID_MASS_TOLERANCE) -> TabulatedMarginal:
    """Line integrals of a Wigner grid along the direction orthogonal to x_theta.

    The grid is interpolated with a bicubic spline; points off the grid count as zero.
    """
    leaked = grid.edge_mass_estimate()
    if leaked > tolerance:
        raise MassOutsideGrid(leaked, tolerance)
    spline = RectBivariateSpline(grid.xs, grid.ys, grid.values, kx=3, ky=3)
    s = grid.spec
    radius = float(np.hypot(max(abs(s.x_min), abs(s.x_max)), max(abs(s.y_min), abs(s.y_max))))
    if x is None:
        x = np.linspace(-radius, radius, max(s.nx, s.ny))
    x = np.asarray(x, dtype=float)
    step = min(grid.dx, grid.dy)
    t = np.linspace(-radius, radius, 2 * int(np.ceil(radius / step)) + 1)
    c, sn = np.cos(theta), np.sin(theta)
    px = x[:, None] * c - t[None, :] * sn
    py = x[:, None] * sn + t[None, :] * c
    inside = (px >= s.x_min) & (px <= s.x_max) & (py >= s.y_min) & (py <= s.y_max)
    w = np.zeros(px.shape)
    w[inside] = spline.ev(px[inside], py[inside])
    p = trapezoid(w, t, axis=1)
    norm_error = abs(float(trapezoid(p, x)) - 1.0) if x.size > 1 else float("nan")
    logger.debug("radon marginal at theta=%.4f, normalization error %.2e", theta, norm_error)
    return TabulatedMarginal(float(theta), x, p, norm_error)


def marginal_spacs_lossy(alpha: float, eff) -> MarginalDistribution:
    """Lossy SPACS quadrature density for a real amplitude |alpha|.

    For complex alpha, pass abs(alpha) and evaluate at theta - arg(alpha).
    """
    a = float(alpha)
    if a < 0:
        raise ValueError(f"pass |alpha| here; got {alpha!r}")
    eta = as_efficiency(eff).eta
    a2 = a * a
    se = np.sqrt(eta)

    def evaluate(x: np.ndarray, theta: float) -> np.ndarray:
        ct = np.cos(theta)
        bracket = (
            1.0 - eta + 4.0 * eta * x * x
            + a2 * (1.0 + 2.0 * eta * (eta - 1.0))
            - 4.0 * a * x * se * (2.0 * eta - 1.0) * ct
            + 2.0 * a2 * eta * (eta - 1.0) * np.cos(2.0 * theta)
        )
        return np.sqrt(2.0 / np.pi) / (1.0 + a2) * bracket * np.exp(-2.0 * (x - a * se * ct) ** 2)

    return MarginalDistribution(evaluate, PROVENANCE_IDEAL if eta == 1.0 else PROVENANCE_LOSSY)


def marginal_coherent(alpha: complex, eff) -> MarginalDistribution:
    alpha = complex(alpha)
    se = np.sqrt(as_efficiency(eff).eta)

    def evaluate(x: np.ndarray, theta: float) -> np.ndarray:
        mu = se * (alpha * np.exp(-1j * theta)).real
        return np.sqrt(2.0 / np.pi) * np.exp(-2.0 * (x - mu) ** 2)

    return MarginalDistribution(evaluate, PROVENANCE_IDEAL)


def marginal_from_density(rho: DensityMatrix) -> MarginalDistribution:
    """p(x, theta) = sum_nm rho_nm psi_n(x) psi_m(x) exp(-i (n - m) theta)."""
    elems = np.array(rho.elems)
    n = np.arange(rho.dim)

    def evaluate(x: np.ndarray, theta: float) -> np.ndarray:
        shape = x.shape
        psi = oscillator_wavefunctions(rho.dim, x.reshape(-1))
        u = psi * np.exp(-1j * n * theta)[:, None]
        p = np.einsum("ik,ij,jk->k", u, elems, np.conj(u)).real
        return p.reshape(shape)

    return MarginalDistribution(evaluate, PROVENANCE_MATRIX)


# --- moments ---

def quad_mean(alpha: float, theta: float, eff=1.0) -> float:
    a = abs(alpha)
    eta = as_efficiency(eff).eta
    return float(a * (2.0 + a * a) * np.sqrt(eta) * np.cos(theta) / (1.0 + a * a))


def quad_var(alpha: float, theta: float, eff=1.0) -> float:
    a2 = abs(alpha) ** 2
    eta = as_efficiency(eff).eta
    return float(0.25 + eta * (1.0 - a2 * np.cos(2.0 * theta)) / (2.0 * (1.0 + a2) ** 2))


def squeezing_percent(alpha: float, eff=1.0, theta: float = 0.0) -> float:
    """Variance reduction below the vacuum level 1/4, in percent (negative means excess noise)."""
    return float((0.25 - quad_var(alpha, theta, eff)) / 0.25 * 100.0)


def negativity(grid: WignerGrid) -> NegativityReport:
    i, j = np.unravel_index(int(np.argmin(grid.values)), grid.values.shape)
    return NegativityReport(float(grid.values[i, j]), float(grid.xs[i]), float(grid.ys[j]))


__all__ = [
    "EfficiencyModel",
    "GridSpec",
    "MarginalDistribution",
    "NegativityReport",
    "TabulatedMarginal",
    "WignerGrid",
    "basis_wigner",
    "marginal_coherent",
    "marginal_from_density",
    "marginal_radon",
    "marginal_spacs_lossy",
    "negativity",
    "quad_mean",
    "quad_var",
    "squeezing_percent",
    "wigner_coherent",
    "wigner_from_density",
    "wigner_spacs",
    "wigner_spacs_lossy",
]
