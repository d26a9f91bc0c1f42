"""Synthetic pulsed balanced-homodyne acquisition.

Each acquisition frame spans two local-oscillator pulses: the first is
synchronized with the idler herald and sees the SPACS, the second sees the
unexcited coherent seed and serves as reference. Sample streams are pandas
DataFrames with columns ``theta_rad``, ``x`` and ``role``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import minimize_scalar

from spacslab.errors import DegenerateFit, DensityNegativeBeyondTolerance
from spacslab.fock import DensityMatrix
from spacslab.phase_space import (
    MarginalDistribution,
    as_efficiency,
    marginal_coherent,
    marginal_from_density,
    marginal_spacs_lossy,
    quad_mean,
)
from spacslab.preparation import AmplifierParams, SeedLike, as_seed_sequence

logger = logging.getLogger(__name__)

ROLE_HERALDED = "heralded"
ROLE_REFERENCE = "reference"
ROLE_CODES = {ROLE_HERALDED: 0, ROLE_REFERENCE: 1}
SAMPLE_COLUMNS = ["theta_rad", "x", "role"]
RECORD_DTYPE = np.dtype([("theta", "<f8"), ("x", "<f8"), ("role", "u1")])

INVERSE_CDF_POINTS = 4096
WINDOW_WIDTHS = 6.0
NEGATIVE_DENSITY_TOLERANCE = 1e-12
DEFAULT_PHASES = 12
DEFAULT_SAMPLES_PER_PHASE = 5000


@dataclass(frozen=True)
class QuadratureSample:
    x: float
    theta: float
    role: str = ROLE_HERALDED

    def __post_init__(self):
        if not np.isfinite(self.x):
            raise ValueError(f"quadrature value must be finite, got {self.x!r}")
        if not (0.0 <= self.theta <= np.pi):
            raise ValueError(f"phase must lie in [0, pi], got {self.theta!r}")
        if self.role not in ROLE_CODES:
            raise ValueError(f"unknown frame role {self.role!r}")


@dataclass(frozen=True)
class PhaseSchedule:
    phases: Tuple[float, ...]
    samples_per_phase: int = DEFAULT_SAMPLES_PER_PHASE

    def __post_init__(self):
        phases = tuple(float(t) for t in self.phases)
        if not phases:
            raise ValueError("a phase schedule needs at least one phase")
        if any(t < 0.0 or t > np.pi for t in phases):
            raise ValueError(f"phases must lie in [0, pi], got {phases}")
        if any(b <= a for a, b in zip(phases, phases[1:])):
            raise ValueError("phases must be strictly increasing")
        if int(self.samples_per_phase) < 1:
            raise ValueError(f"samples_per_phase must be positive, got {self.samples_per_phase!r}")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "samples_per_phase", int(self.samples_per_phase))

    @classmethod
    def uniform(cls, n_phases: int = DEFAULT_PHASES, samples_per_phase: int = DEFAULT_SAMPLES_PER_PHASE) -> "PhaseSchedule":
        """theta_j = j pi / K for j = 0..K-1; theta = pi would repeat theta = 0 with x -> -x."""
        if n_phases < 1:
            raise ValueError(f"n_phases must be positive, got {n_phases}")
        return cls(tuple(np.arange(n_phases) * np.pi / n_phases), samples_per_phase)


@dataclass(frozen=True)
class AcCouplingModel:
    """Multiplicative attenuation of the marginal mean; fluctuations are untouched."""

    mean_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 < float(self.mean_scale) <= 1.0):
            raise ValueError(f"mean_scale must lie in (0, 1], got {self.mean_scale!r}")

    def apply(self, x: np.ndarray, mean: float) -> np.ndarray:
        return x - (1.0 - self.mean_scale) * mean


@dataclass(frozen=True)
class ScaleCalibration:
    scale: float
    stderr: float
    residual: float
    n_phases: int

    def to_json_dict(self) -> Dict[str, float]:
        return {"scale": self.scale, "stderr": self.stderr, "residual": self.residual, "n_phases": self.n_phases}


@dataclass(frozen=True)
class ParameterFit:
    value: float
    stderr: float
    n_samples: int

    def to_json_dict(self) -> Dict[str, float]:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples}


# --- sampling ---

def _moments(dist: MarginalDistribution, theta: float) -> Tuple[float, float]:
    x = np.linspace(-20.0, 20.0, 16001)
    p = np.clip(dist(x, theta), 0.0, None)
    norm = trapezoid(p, x)
    mean = trapezoid(x * p, x) / norm
    var = trapezoid((x - mean) ** 2 * p, x) / norm
    return float(mean), float(np.sqrt(var))


def _inverse_cdf_draws(dist: MarginalDistribution, theta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    mean, width = _moments(dist, theta)
    x = np.linspace(mean - WINDOW_WIDTHS * width, mean + WINDOW_WIDTHS * width, INVERSE_CDF_POINTS)
    p = dist(x, theta)
    lowest = float(p.min())
    if lowest < -NEGATIVE_DENSITY_TOLERANCE:
        raise DensityNegativeBeyondTolerance(lowest, theta)
    cdf = cumulative_trapezoid(np.clip(p, 0.0, None), x, initial=0.0)
    cdf /= cdf[-1]
    return np.interp(rng.random(int(n)), cdf, x)


def _frame(theta: float, x: np.ndarray, role: str) -> pd.DataFrame:
    return pd.DataFrame({"theta_rad": np.full(x.size, float(theta)), "x": x, "role": role})


def sample_marginal(
    dist: MarginalDistribution, theta: float, n: int, seed: SeedLike, role: str = ROLE_HERALDED
) -> pd.DataFrame:
    """``n`` i.i.d. draws from p(., theta) by inverse-CDF on a dense tabulation."""
    rng = np.random.default_rng(as_seed_sequence(seed))
    return _frame(theta, _inverse_cdf_draws(dist, theta, n, rng), role)


def sample_state_marginal(
    rho: DensityMatrix, theta: float, n: int, seed: SeedLike, role: str = ROLE_HERALDED
) -> pd.DataFrame:
    return sample_marginal(marginal_from_density(rho), theta, n, seed, role)


def _heralded_draws(
    params: AmplifierParams, theta: float, n: int, eta: float, dark_fraction: float,
    ac: AcCouplingModel, rng: np.random.Generator,
) -> np.ndarray:
    alpha = params.alpha_seed
    a, phase = abs(alpha), float(np.angle(alpha))
    n_dark = int(rng.binomial(n, dark_fraction)) if dark_fraction > 0 else 0
    spacs = marginal_spacs_lossy(a, eta)
    x = ac.apply(_inverse_cdf_draws(spacs, theta - phase, n - n_dark, rng), quad_mean(a, theta - phase, eta))
    if not n_dark:
        return x
    coherent = marginal_coherent(alpha, eta)
    mu = np.sqrt(eta) * (alpha * np.exp(-1j * theta)).real
    extra = ac.apply(_inverse_cdf_draws(coherent, theta, n_dark, rng), mu)
    # dark-count heralds land at random positions in the stream
    merged = np.concatenate([x, extra])
    return merged[rng.permutation(merged.size)]


def acquire_frames(
    params: AmplifierParams,
    schedule: PhaseSchedule,
    ac: AcCouplingModel,
    eff,
    seed: SeedLike,
    workers: int = 1,
) -> pd.DataFrame:
    """One heralded and one reference sample per frame at every scheduled phase.

    Phase j uses the j-th child of the seed, split again into heralded and
    reference streams; output is ordered by phase, heralded block first.
    """
    eta = as_efficiency(eff).eta
    p_total = params.herald_probability
    dark_fraction = params.dark_probability / p_total if p_total > 0 else 0.0
    children = as_seed_sequence(seed).spawn(len(schedule.phases))
    n = schedule.samples_per_phase
    alpha = params.alpha_seed
    coherent = marginal_coherent(alpha, eta)

    def run(j: int) -> pd.DataFrame:
        theta = schedule.phases[j]
        herald_seed, reference_seed = children[j].spawn(2)
        heralded = _heralded_draws(params, theta, n, eta, dark_fraction, ac, np.random.default_rng(herald_seed))
        mu = np.sqrt(eta) * (alpha * np.exp(-1j * theta)).real
        reference = ac.apply(_inverse_cdf_draws(coherent, theta, n, np.random.default_rng(reference_seed)), mu)
        return pd.concat([_frame(theta, heralded, ROLE_HERALDED), _frame(theta, reference, ROLE_REFERENCE)])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(len(schedule.phases))))
    else:
        blocks = [run(j) for j in range(len(schedule.phases))]
    frame = pd.concat(blocks, ignore_index=True)
    logger.info("acquired %d frames at %d phases", n * len(schedule.phases), len(schedule.phases))
    return frame


def select_role(samples: pd.DataFrame, role: str) -> pd.DataFrame:
    return samples[samples["role"] == role]


# --- calibration and fits ---

def calibrate_mean_scale(samples: pd.DataFrame, alpha: float, eff, phase: float = 0.0) -> ScaleCalibration:
    """Least-squares s in  mean_j = s * sqrt(eta) |alpha| cos(theta_j - phase)  over reference frames.

    ``phase`` is the seed phase arg(alpha); a complex ``alpha`` supplies its own.
    """
    eta = as_efficiency(eff).eta
    if isinstance(alpha, complex) and alpha.imag != 0.0:
        phase = float(np.angle(alpha))
    reference = select_role(samples, ROLE_REFERENCE) if "role" in samples else samples
    groups = reference.groupby("theta_rad")["x"]
    stats = groups.agg(["mean", "var", "count"])
    if len(stats) < 3:
        raise DegenerateFit(f"mean-scale calibration needs at least 3 phases, got {len(stats)}")
    c = np.sqrt(eta) * abs(alpha) * np.cos(stats.index.to_numpy() - phase)
    ss = float(np.sum(c * c))
    if ss < 1e-12 * len(stats):
        raise DegenerateFit("reference means carry no scale information (alpha = 0 or phases orthogonal to the seed)")
    m = stats["mean"].to_numpy()
    scale = float(np.sum(m * c) / ss)
    if not scale > 0:
        raise DegenerateFit(f"reference means give a non-positive scale {scale:.4g}")
    residual = float(np.sqrt(np.mean((m - scale * c) ** 2)))
    stderr = float(np.sqrt(np.sum(c * c * stats["var"].to_numpy() / stats["count"].to_numpy())) / ss)
    logger.info("mean scale %.4f +/- %.4f from %d phases", scale, stderr, len(stats))
    return ScaleCalibration(scale, stderr, residual, len(stats))


def rescale_means(samples: pd.DataFrame, scale: float) -> pd.DataFrame:
    """Divide every (role, phase) mean by ``scale`` leaving the fluctuations in place."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    out = samples.copy()
    keys = ["role", "theta_rad"] if "role" in out else ["theta_rad"]
    means = out.groupby(keys)["x"].transform("mean")
    out["x"] = out["x"] + (1.0 / scale - 1.0) * means
    return out


def fit_efficiency(samples: pd.DataFrame) -> ParameterFit:
    """Maximum-likelihood eta from phase-independent lossy single-photon samples.

    p(x) = sqrt(2/pi) [1 - eta + 4 eta x^2] exp(-2 x^2); the error is the inverse
    square root of the observed information.
    """
    x = np.asarray(samples["x"] if isinstance(samples, pd.DataFrame) else samples, dtype=float)
    if x.size == 0:
        raise DegenerateFit("no samples to fit")
    u = 4.0 * x * x - 1.0

    def nll(eta: float) -> float:
        return -float(np.sum(np.log(np.clip(1.0 + eta * u, 1e-300, None))))

    best = minimize_scalar(nll, bounds=(1e-6, 1.0), method="bounded", options={"xatol": 1e-8})
    eta = float(best.x)
    score = u / (1.0 + eta * u)
    info = float(np.sum(score * score))
    stderr = 1.0 / np.sqrt(info) if info > 0 else float("inf")
    logger.info("fitted efficiency %.4f +/- %.4f from %d samples", eta, stderr, x.size)
    return ParameterFit(eta, float(stderr), int(x.size))


def fit_alpha(samples: pd.DataFrame, eff, alpha_max: float = 6.0, phase: float = 0.0) -> ParameterFit:
    """Maximum-likelihood |alpha| from heralded samples; ``phase`` is the seed phase arg(alpha)."""
    eta = as_efficiency(eff).eta
    heralded = select_role(samples, ROLE_HERALDED) if "role" in samples else samples
    if heralded.empty:
        raise DegenerateFit("no heralded samples to fit")
    x = heralded["x"].to_numpy()
    theta = heralded["theta_rad"].to_numpy() - phase

    def nll(a: float) -> float:
        p = marginal_spacs_lossy(a, eta).evaluator(x, theta)
        return -float(np.sum(np.log(np.clip(p, 1e-300, None))))

    best = minimize_scalar(nll, bounds=(0.0, alpha_max), method="bounded", options={"xatol": 1e-7})
    a = float(best.x)
    h = 1e-3
    curvature = (nll(a + h) - 2.0 * nll(a) + nll(max(a - h, 0.0))) / (h * h)
    stderr = 1.0 / np.sqrt(curvature) if curvature > 0 else float("inf")
    return ParameterFit(a, float(stderr), int(x.size))


def marginal_histograms(
    samples: pd.DataFrame,
    dist: MarginalDistribution,
    phase: float = 0.0,
    bins: int = 60,
    role: str = ROLE_HERALDED,
) -> pd.DataFrame:
    """Per-phase sample histograms beside the model density at the bin centers.

    Columns ``theta_rad, x, count, p_samples, p_theory``; the model is read at
    theta - ``phase`` so a complex seed lines up with its samples.
    """
    selected = select_role(samples, role) if "role" in samples else samples
    if selected.empty:
        raise DegenerateFit(f"no {role} samples to histogram")
    blocks = []
    for theta, group in selected.groupby("theta_rad"):
        counts, edges = np.histogram(group["x"].to_numpy(), bins=bins)
        centers = 0.5 * (edges[1:] + edges[:-1])
        table = dist.tabulate(float(theta) - phase, centers)
        table.insert(0, "theta_rad", float(theta))
        table.insert(2, "count", counts)
        table.insert(3, "p_samples", counts / (counts.sum() * np.diff(edges)))
        blocks.append(table.rename(columns={"p": "p_theory"}))
    return pd.concat(blocks, ignore_index=True)


# --- record formats ---

def to_records(samples: pd.DataFrame) -> np.ndarray:
    out = np.empty(len(samples), dtype=RECORD_DTYPE)
    out["theta"] = samples["theta_rad"].to_numpy()
    out["x"] = samples["x"].to_numpy()
    out["role"] = samples["role"].map(ROLE_CODES).to_numpy()
    return out


def from_records(records: np.ndarray) -> pd.DataFrame:
    names = {code: role for role, code in ROLE_CODES.items()}
    return pd.DataFrame({
        "theta_rad": records["theta"].astype(float),
        "x": records["x"].astype(float),
        "role": [names[int(c)] for c in records["role"]],
    })


def samples_from_list(samples: Sequence[QuadratureSample]) -> pd.DataFrame:
    return pd.DataFrame({
        "theta_rad": [s.theta for s in samples],
        "x": [s.x for s in samples],
        "role": [s.role for s in samples],
    }, columns=SAMPLE_COLUMNS)


def iter_samples(samples: pd.DataFrame) -> List[QuadratureSample]:
    return [QuadratureSample(float(r.x), float(r.theta_rad), r.role) for r in samples.itertuples(index=False)]


__all__ = [
    "AcCouplingModel",
    "ParameterFit",
    "PhaseSchedule",
    "QuadratureSample",
    "RECORD_DTYPE",
    "ROLE_HERALDED",
    "ROLE_REFERENCE",
    "ScaleCalibration",
    "acquire_frames",
    "calibrate_mean_scale",
    "fit_alpha",
    "fit_efficiency",
    "from_records",
    "iter_samples",
    "marginal_histograms",
    "rescale_means",
    "sample_marginal",
    "sample_state_marginal",
    "samples_from_list",
    "select_role",
    "to_records",
]
