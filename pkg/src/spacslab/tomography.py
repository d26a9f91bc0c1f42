"""Pattern-function tomography and state-quality metrics.

Density-matrix elements are estimated as phase-weighted averages of
f_nm(x) exp(i (n - m) theta) over phase-tagged quadrature samples. The kernels
f_nm are real, symmetric in (n, m), and tabulated once per truncation.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh
from scipy.special import eval_genlaguerre, gammaln

from spacslab.errors import GridTooCoarse, InsufficientPhaseCoverage, PhaseAliasingWarning, TheoryNotPSD
from spacslab.fock import DensityMatrix, TruncationPolicy, make_coherent, make_fock, quadrature_matrix
from spacslab.homodyne import ROLE_HERALDED
from spacslab.phase_space import as_efficiency, marginal_from_density, quad_var

logger = logging.getLogger(__name__)

TABLE_SPACING = 1.0 / 512.0
DEFAULT_X_MAX = 8.0
MAX_X_MAX = 20.0
VALIDATION_TOLERANCE = 1e-3
MIN_PHASES = 3
MAX_PHASE_GAP = np.pi / 2
PSD_TOLERANCE = 1e-10

_GAUSS_NODES = 16
_PANEL_WIDTH = 0.25
_ROW_CHUNK = 1024


# --- pattern functions ---

def _kernel_nodes(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0, s_max], past which every kernel integrand is below 1e-17."""
    s_max = np.sqrt(4.0 * dim + 2.0) + 10.0
    panels = int(np.ceil(s_max / _PANEL_WIDTH))
    t, w = np.polynomial.legendre.leggauss(_GAUSS_NODES)
    edges = np.linspace(0.0, s_max, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    ws = (half[:, None] * w[None, :]).ravel()
    return s, ws


def _pairs(dim: int) -> List[Tuple[int, int]]:
    return [(n, m) for n in range(dim) for m in range(n + 1)]


@lru_cache(maxsize=8)
def _tabulate(dim: int, x_max: float, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    """f_nm on a symmetric grid, one column per lower-triangle pair (n >= m).

    f_nm(x) = 2 sqrt(m!/n!) int_0^inf s^(d+1) exp(-s^2/2) L_m^(d)(s^2) cos(2 s x - d pi/2) ds,
    d = n - m, is the Fourier form of d/dx[psi_m(x) phi_n(x)] with phi the
    irregular oscillator solution. It stays accurate in the classically
    forbidden region where the two-solution recurrence does not.
    """
    pairs = _pairs(dim)
    s, ws = _kernel_nodes(dim)
    s2 = s * s
    g_cos = np.zeros((s.size, len(pairs)))
    g_sin = np.zeros((s.size, len(pairs)))
    for k, (n, m) in enumerate(pairs):
        d = n - m
        log_c = np.log(2.0) + 0.5 * (gammaln(m + 1) - gammaln(n + 1))
        g = np.exp(log_c) * ws * s ** (d + 1) * np.exp(-0.5 * s2) * eval_genlaguerre(m, d, s2)
        # cos(a - d pi/2) cycles through cos, sin, -cos, -sin
        sign = -1.0 if (d // 2) % 2 else 1.0
        (g_sin if d % 2 else g_cos)[:, k] = sign * g
    half = np.arange(0.0, x_max + 0.5 * spacing, spacing)
    values_half = np.empty((half.size, len(pairs)))
    for start in range(0, half.size, _ROW_CHUNK):
        arg = 2.0 * np.outer(half[start:start + _ROW_CHUNK], s)
        values_half[start:start + _ROW_CHUNK] = np.cos(arg) @ g_cos + np.sin(arg) @ g_sin
    parity = np.array([(-1.0) ** (n - m) for n, m in pairs])
    x = np.concatenate([-half[:0:-1], half])
    values = np.concatenate([values_half[:0:-1] * parity, values_half])
    x.setflags(write=False)
    values.setflags(write=False)
    return x, values


@dataclass(frozen=True, eq=False)
class PatternFunctionTable:
    """Tabulated kernels f_nm(x) for 0 <= m <= n < dim.

    The phase factor exp(i (n - m) theta) is applied at evaluation; f_mn = f_nm.
    """

    dim: int
    x: np.ndarray
    values: np.ndarray
    spacing: float

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return _pairs(self.dim)

    def column(self, n: int, m: int) -> int:
        n, m = max(n, m), min(n, m)
        return n * (n + 1) // 2 + m

    def kernel(self, n: int, m: int) -> np.ndarray:
        return self.values[:, self.column(n, m)]

    def in_range(self, x: np.ndarray) -> np.ndarray:
        return np.abs(x) <= self.x_max

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """All kernels at the points ``x`` (which must lie in range), shape (len(x), n_pairs)."""
        return _spline(self.dim, self.x_max, self.spacing)(np.asarray(x, dtype=float))


@lru_cache(maxsize=8)
def _spline(dim: int, x_max: float, spacing: float) -> CubicSpline:
    x, values = _tabulate(dim, x_max, spacing)
    return CubicSpline(x, values, axis=0)


def build_pattern_functions(
    dim: int, x_max: float = DEFAULT_X_MAX, spacing: float = TABLE_SPACING, validate: bool = True
) -> PatternFunctionTable:
    """Tabulate the unit-efficiency kernels for truncation ``dim``.

    With ``validate`` the table must reproduce known density matrices from
    exact marginals (GridTooCoarse otherwise) before it is handed out.
    """
    if dim < 1:
        raise ValueError(f"dim must be at least 1, got {dim}")
    x_max = float(min(x_max, MAX_X_MAX))
    x, values = _tabulate(int(dim), x_max, float(spacing))
    table = PatternFunctionTable(int(dim), x, values, float(spacing))
    logger.debug("pattern functions tabulated: dim=%d, |x|<=%.1f, %d points", dim, x_max, x.size)
    if validate:
        validate_pattern_functions(table)
    return table


def _validation_states(dim: int) -> Dict[str, DensityMatrix]:
    policy = TruncationPolicy(dim + 30)
    return {
        "vacuum": make_fock(0, policy).density(),
        "single photon": make_fock(1, policy).density(),
        "coherent 0.5": make_coherent(0.5, policy).density(),
        "coherent 0.7": make_coherent(0.7, policy).density(),
    }


def _exact_estimate(table: PatternFunctionTable, rho: DensityMatrix, n_phases: int) -> np.ndarray:
    marginal = marginal_from_density(rho)
    thetas = np.arange(n_phases) * np.pi / n_phases
    est = np.zeros((table.dim, table.dim), dtype=complex)
    diff = np.subtract.outer(np.arange(table.dim), np.arange(table.dim))
    for theta in thetas:
        p = marginal(table.x, theta)
        averages = trapezoid(p[:, None] * table.values, table.x, axis=0)
        full = np.empty((table.dim, table.dim))
        for k, (n, m) in enumerate(table.pairs):
            full[n, m] = full[m, n] = averages[k]
        est += full * np.exp(1j * diff * theta) / n_phases
    return est


def validate_pattern_functions(table: PatternFunctionTable, tolerance: float = VALIDATION_TOLERANCE) -> float:
    """Reconstruct reference states from exact marginals; returns the worst element error."""
    worst = 0.0
    n_phases = 2 * table.dim + 8
    for name, rho in _validation_states(table.dim).items():
        est = _exact_estimate(table, rho, n_phases)
        err = np.abs(est - rho.elems[: table.dim, : table.dim])
        i, j = np.unravel_index(int(np.argmax(err)), err.shape)
        if err[i, j] > tolerance:
            raise GridTooCoarse(float(err[i, j]), name, (i, j))
        worst = max(worst, float(err[i, j]))
    logger.info("pattern functions validated for dim=%d (worst error %.2e)", table.dim, worst)
    return worst


# --- reconstruction ---

@dataclass
class KernelAccumulator:
    """Per-phase running sums of every kernel and its square; merge is associative."""

    n_pairs: int
    counts: Dict[float, int] = field(default_factory=dict)
    sums: Dict[float, np.ndarray] = field(default_factory=dict)
    squares: Dict[float, np.ndarray] = field(default_factory=dict)

    def add(self, theta: float, kernels: np.ndarray) -> None:
        if theta not in self.counts:
            self.counts[theta] = 0
            self.sums[theta] = np.zeros(self.n_pairs)
            self.squares[theta] = np.zeros(self.n_pairs)
        self.counts[theta] += kernels.shape[0]
        self.sums[theta] += kernels.sum(axis=0)
        self.squares[theta] += (kernels * kernels).sum(axis=0)

    def merge(self, other: "KernelAccumulator") -> "KernelAccumulator":
        out = KernelAccumulator(self.n_pairs)
        for part in (self, other):
            for theta, count in part.counts.items():
                if theta not in out.counts:
                    out.counts[theta] = 0
                    out.sums[theta] = np.zeros(self.n_pairs)
                    out.squares[theta] = np.zeros(self.n_pairs)
                out.counts[theta] += count
                out.sums[theta] = out.sums[theta] + part.sums[theta]
                out.squares[theta] = out.squares[theta] + part.squares[theta]
        return out


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    rho_e: DensityMatrix
    sigma: np.ndarray
    n_samples: int
    n_phases: int
    n_rejected: int = 0
    phases: Tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return self.rho_e.dim

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "rho": self.rho_e.to_json_dict(),
            "sigma": np.asarray(self.sigma).tolist(),
            "n_samples": self.n_samples,
            "n_phases": self.n_phases,
            "n_rejected": self.n_rejected,
            "phases": list(self.phases),
            "error_bars": "empirical standard deviation of the kernel average",
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "ReconstructionResult":
        return cls(
            rho_e=DensityMatrix.from_json_dict(data["rho"]),
            sigma=np.asarray(data["sigma"], dtype=float),
            n_samples=int(data["n_samples"]),
            n_phases=int(data["n_phases"]),
            n_rejected=int(data.get("n_rejected", 0)),
            phases=tuple(data.get("phases", ())),
        )


def _fold_phases(theta: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map theta into [0, pi) using p(x, theta + pi) = p(-x, theta)."""
    turns = np.floor(theta / np.pi)
    folded = theta - turns * np.pi
    flip = (turns.astype(int) % 2) == 1
    folded = np.where(np.isclose(folded, np.pi), 0.0, folded)
    flip = np.where(np.isclose(theta - turns * np.pi, np.pi), ~flip, flip)
    return folded, np.where(flip, -x, x)


def phase_weights(phases: Sequence[float]) -> np.ndarray:
    """Bin-width weights on the circle of period pi; uniform schedules get 1/K each."""
    phases = np.asarray(phases, dtype=float)
    if phases.size < MIN_PHASES:
        raise InsufficientPhaseCoverage(f"need at least {MIN_PHASES} distinct phases, got {phases.size}")
    gaps = np.diff(np.concatenate([phases, [phases[0] + np.pi]]))
    if gaps.max() > MAX_PHASE_GAP + 1e-12:
        raise InsufficientPhaseCoverage(
            f"largest phase gap {gaps.max():.3f} rad exceeds {MAX_PHASE_GAP:.3f}; phases do not cover [0, pi)"
        )
    return 0.5 * (gaps + np.roll(gaps, 1)) / np.pi


def reconstruct(
    samples: pd.DataFrame,
    dim: int,
    table: Optional[PatternFunctionTable] = None,
    role: Optional[str] = ROLE_HERALDED,
    workers: int = 1,
    chunk_size: int = 1 << 16,
) -> ReconstructionResult:
    """Pattern-function estimate of the detected state on ``dim`` levels.

    Samples beyond the tabulated range are rejected and counted. The returned
    matrix is Hermitian by construction and is not projected onto states.
    """
    if role is not None and "role" in samples:
        samples = samples[samples["role"] == role]
    if len(samples) == 0:
        raise InsufficientPhaseCoverage("no samples to reconstruct from")
    if table is None:
        table = build_pattern_functions(dim)
    if table.dim < dim:
        raise ValueError(f"pattern-function table has dim {table.dim} < requested {dim}")

    theta, x = _fold_phases(samples["theta_rad"].to_numpy(float), samples["x"].to_numpy(float))
    keep = table.in_range(x)
    n_rejected = int(np.count_nonzero(~keep))
    if n_rejected:
        logger.warning("%d samples outside |x| <= %.1f rejected", n_rejected, table.x_max)
    theta, x = theta[keep], x[keep]
    phases = np.unique(theta)
    weights = phase_weights(phases)
    if phases.size < dim:
        message = f"{phases.size} phases cannot resolve all coherences of a {dim}-level reconstruction"
        logger.warning(message)
        warnings.warn(message, PhaseAliasingWarning, stacklevel=2)

    pairs = _pairs(table.dim)
    n_pairs = len(pairs)

    def accumulate(start: int) -> KernelAccumulator:
        acc = KernelAccumulator(n_pairs)
        th, xx = theta[start:start + chunk_size], x[start:start + chunk_size]
        kernels = table.evaluate(xx)
        for phase in np.unique(th):
            acc.add(float(phase), kernels[th == phase])
        return acc

    starts = range(0, x.size, chunk_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(accumulate, starts))
    else:
        parts = [accumulate(s) for s in starts]
    total = KernelAccumulator(n_pairs)
    for part in parts:
        total = total.merge(part)

    rho = np.zeros((dim, dim), dtype=complex)
    var = np.zeros((dim, dim))
    for phase, w in zip(phases, weights):
        count = total.counts[float(phase)]
        mean = total.sums[float(phase)] / count
        spread = np.clip(total.squares[float(phase)] / count - mean * mean, 0.0, None)
        for k, (n, m) in enumerate(pairs):
            if n >= dim:
                continue
            value = w * mean[k] * np.exp(1j * (n - m) * phase)
            rho[n, m] += value
            err = w * w * spread[k] / max(count - 1, 1)
            var[n, m] += err
    lower = np.tril_indices(dim, -1)
    rho[lower[1], lower[0]] = np.conj(rho[lower])
    var[lower[1], lower[0]] = var[lower]
    np.fill_diagonal(rho, rho.diagonal().real)
    logger.info("reconstructed dim=%d from %d samples at %d phases", dim, x.size, phases.size)
    return ReconstructionResult(
        rho_e=DensityMatrix(rho),
        sigma=np.sqrt(var),
        n_samples=int(x.size),
        n_phases=int(phases.size),
        n_rejected=n_rejected,
        phases=tuple(float(p) for p in phases),
    )


# --- metrics ---

Matrix = Union[DensityMatrix, np.ndarray]


def _elems(rho) -> np.ndarray:
    if isinstance(rho, ReconstructionResult):
        return rho.rho_e.elems
    if isinstance(rho, DensityMatrix):
        return rho.elems
    return np.asarray(rho, dtype=complex)


def purity(rho) -> float:
    elems = _elems(rho)
    if elems.ndim != 2 or elems.shape[0] != elems.shape[1]:
        raise ValueError(f"purity needs a square matrix, got shape {elems.shape}")
    value = np.trace(elems @ elems)
    if abs(value.imag) > 1e-10:
        raise ValueError(f"Tr(rho^2) has imaginary part {value.imag:.3e}; matrix is not Hermitian")
    return float(value.real)


@dataclass(frozen=True)
class FidelityResult:
    value: float
    negative_mass: float
    exceeds_unity: bool

    def to_json_dict(self) -> Dict[str, Any]:
        return {"value": self.value, "negative_mass": self.negative_mass, "exceeds_unity": self.exceeds_unity}


def _psd_sqrt(elems: np.ndarray) -> np.ndarray:
    w, v = eigh(0.5 * (elems + elems.conj().T))
    if w.min() < -PSD_TOLERANCE:
        raise TheoryNotPSD(float(w.min()))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho_c, rho_e) -> FidelityResult:
    """|Tr sqrt(sqrt(rho_c) rho_e sqrt(rho_c))|^2.

    Negative eigenvalues of the inner matrix contribute nothing and their
    total is reported as ``negative_mass``; values above 1 are flagged, not clipped.
    """
    c, e = _elems(rho_c), _elems(rho_e)
    if c.shape != e.shape:
        raise ValueError(f"fidelity needs equal dimensions, got {c.shape} and {e.shape}")
    root = _psd_sqrt(c)
    inner = root @ e @ root
    lam = eigh(0.5 * (inner + inner.conj().T), eigvals_only=True)
    negative = float(-lam[lam < 0].sum())
    value = float(np.sum(np.sqrt(np.clip(lam, 0.0, None))) ** 2)
    return FidelityResult(value, negative, value > 1.0)


def clip_to_psd(rho) -> DensityMatrix:
    """Nearest-eigenvalue projection: negative eigenvalues dropped, trace restored."""
    elems = _elems(rho)
    w, v = eigh(0.5 * (elems + elems.conj().T))
    trace = float(w.sum())
    clipped = np.clip(w, 0.0, None)
    if clipped.sum() > 0:
        clipped *= trace / clipped.sum()
    return DensityMatrix((v * clipped) @ v.conj().T)


@dataclass(frozen=True)
class AgreementReport:
    n_within: int
    n_total: int
    nsigma: float
    max_deviation: float

    @property
    def fraction(self) -> float:
        return self.n_within / self.n_total if self.n_total else 0.0

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "n_within": self.n_within, "n_total": self.n_total, "nsigma": self.nsigma,
            "fraction": self.fraction, "max_deviation": self.max_deviation,
        }


def element_agreement(result: ReconstructionResult, rho_c, nsigma: float = 3.0) -> AgreementReport:
    """Count matrix elements of the reconstruction within ``nsigma`` error bars of the theory."""
    theory = _elems(rho_c)[: result.dim, : result.dim]
    deviation = np.abs(result.rho_e.elems - theory)
    within = deviation <= nsigma * result.sigma
    return AgreementReport(int(within.sum()), int(within.size), float(nsigma), float(deviation.max()))


def photon_number_table(result: ReconstructionResult, rho_c=None) -> pd.DataFrame:
    frame = pd.DataFrame({
        "n": np.arange(result.dim),
        "p_reconstructed": result.rho_e.diagonal(),
        "sigma": np.diag(result.sigma),
    })
    if rho_c is not None:
        frame["p_theory"] = np.real(np.diag(_elems(rho_c)))[: result.dim]
    return frame


@dataclass(frozen=True)
class SqueezingReport:
    var_0: float
    var_90: float
    var_0_err: float = 0.0
    var_90_err: float = 0.0
    theory_var_0: Optional[float] = None
    theory_var_90: Optional[float] = None

    @property
    def percent(self) -> float:
        return (0.25 - self.var_0) / 0.25 * 100.0

    @property
    def percent_err(self) -> float:
        return self.var_0_err / 0.25 * 100.0

    def to_json_dict(self) -> Dict[str, Any]:
        out = {
            "var_0": self.var_0, "var_0_err": self.var_0_err,
            "var_90": self.var_90, "var_90_err": self.var_90_err,
            "percent": self.percent, "percent_err": self.percent_err,
        }
        if self.theory_var_0 is not None:
            out["theory_var_0"] = self.theory_var_0
            out["theory_var_90"] = self.theory_var_90
            out["theory_percent"] = (0.25 - self.theory_var_0) / 0.25 * 100.0
        return out


def _sample_variance(samples: pd.DataFrame, target: float) -> Tuple[float, float]:
    theta, x = _fold_phases(samples["theta_rad"].to_numpy(float), samples["x"].to_numpy(float))
    distance = np.abs(np.angle(np.exp(2j * (theta - target)))) / 2.0
    chosen = theta[np.argmin(distance)]
    values = x[theta == chosen]
    if values.size < 2:
        raise ValueError(f"no phase near {target:.3f} with enough samples")
    var = float(np.var(values, ddof=1))
    return var, var * float(np.sqrt(2.0 / (values.size - 1)))


def _matrix_variance(elems: np.ndarray, theta: float) -> float:
    q = quadrature_matrix(theta, elems.shape[0])
    mean = np.trace(elems @ q).real
    return float(np.trace(elems @ q @ q).real - mean * mean)


def squeezing_report(
    source, eff=None, alpha: Optional[float] = None, role: Optional[str] = ROLE_HERALDED, phase: float = 0.0
) -> SqueezingReport:
    """Quadrature variances in phase with the seed and in quadrature to it, from samples or from a density matrix.

    ``phase`` is the seed phase arg(alpha); with a real seed the two quadratures sit at theta = 0 and pi/2.

    Sample variances carry the standard error var * sqrt(2/(N-1)); matrix variances carry none.
    The variances of the analytic lossy model are attached when ``alpha`` and ``eff`` are given.
    """
    if isinstance(source, pd.DataFrame):
        frame = source[source["role"] == role] if role is not None and "role" in source else source
        (v0, e0), (v90, e90) = _sample_variance(frame, phase), _sample_variance(frame, phase + np.pi / 2)
    else:
        elems = _elems(source)
        v0, v90, e0, e90 = _matrix_variance(elems, phase), _matrix_variance(elems, phase + np.pi / 2), 0.0, 0.0
    t0 = t90 = None
    if alpha is not None and eff is not None:
        eta = as_efficiency(eff).eta
        t0, t90 = quad_var(alpha, 0.0, eta), quad_var(alpha, np.pi / 2, eta)
    return SqueezingReport(v0, v90, e0, e90, t0, t90)


__all__ = [
    "AgreementReport",
    "FidelityResult",
    "KernelAccumulator",
    "PatternFunctionTable",
    "ReconstructionResult",
    "SqueezingReport",
    "build_pattern_functions",
    "clip_to_psd",
    "element_agreement",
    "fidelity",
    "phase_weights",
    "photon_number_table",
    "purity",
    "reconstruct",
    "squeezing_report",
    "validate_pattern_functions",
]
