"""Truncated Fock-basis states and the special functions they rest on.

Quadrature convention used across the package: x = (a + a^dag)/2, so the
vacuum variance is 1/4 and [x, y] = i/2. Oscillator wavefunctions, Wigner
functions and pattern functions all follow it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Union

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from spacslab.errors import IndexOutOfRange, TruncationTooSmall

logger = logging.getLogger(__name__)

DEFAULT_TAIL_TOLERANCE = 1e-10
HERMITIAN_TOLERANCE = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TruncationPolicy:
    """Basis size M plus the largest tail probability a constructor may drop."""

    dim: int
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if not self.tail_tolerance > 0:
            raise ValueError(f"tail_tolerance must be positive, got {self.tail_tolerance!r}")
        object.__setattr__(self, "dim", int(self.dim))

    def extended(self, extra: int) -> "TruncationPolicy":
        return TruncationPolicy(self.dim + int(extra), self.tail_tolerance)


@dataclass(frozen=True, eq=False)
class FockVector:
    """Pure state c_0..c_{M-1}; ``tail_mass`` is the probability cut off above M-1."""

    amps: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex).reshape(-1)
        if amps.size < 1:
            raise ValueError("a FockVector needs at least one amplitude")
        object.__setattr__(self, "amps", _frozen(amps))
        object.__setattr__(self, "tail_mass", float(self.tail_mass))

    @property
    def dim(self) -> int:
        return int(self.amps.size)

    @property
    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amps, self.amps.conj()), tail_mass=self.tail_mass)

    def overlap(self, other: "FockVector") -> complex:
        n = min(self.dim, other.dim)
        return complex(np.vdot(self.amps[:n], other.amps[:n]))

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "re": self.amps.real.tolist(),
            "im": self.amps.imag.tolist(),
            "tail_mass": self.tail_mass,
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "FockVector":
        amps = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        if amps.size != int(data["dim"]):
            raise ValueError(f"dim={data['dim']} does not match {amps.size} amplitudes")
        return cls(amps, tail_mass=data.get("tail_mass", 0.0))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian M x M matrix in the number basis.

    Constructed states have unit trace up to ``tail_mass``; reconstructed ones may
    have small trace errors and negative eigenvalues.
    """

    elems: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        elems = np.array(self.elems, dtype=complex)
        if elems.ndim != 2 or elems.shape[0] != elems.shape[1] or elems.shape[0] < 1:
            raise ValueError(f"density matrix must be square and non-empty, got shape {elems.shape}")
        scale = max(1.0, float(np.max(np.abs(elems))))
        if np.max(np.abs(elems - elems.conj().T)) > HERMITIAN_TOLERANCE * scale:
            raise ValueError("density matrix is not Hermitian")
        object.__setattr__(self, "elems", _frozen(elems))
        object.__setattr__(self, "tail_mass", float(self.tail_mass))

    @property
    def dim(self) -> int:
        return int(self.elems.shape[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.elems).real)

    def diagonal(self) -> np.ndarray:
        return self.elems.diagonal().real.copy()

    def truncate(self, dim: int) -> "DensityMatrix":
        if dim > self.dim:
            raise ValueError(f"cannot truncate a {self.dim}-dim matrix to {dim}")
        dropped = float(self.elems.diagonal().real[dim:].sum())
        return DensityMatrix(self.elems[:dim, :dim], tail_mass=self.tail_mass + dropped)

    def padded(self, dim: int) -> "DensityMatrix":
        if dim < self.dim:
            return self.truncate(dim)
        out = np.zeros((dim, dim), dtype=complex)
        out[: self.dim, : self.dim] = self.elems
        return DensityMatrix(out, tail_mass=self.tail_mass)

    def expectation(self, operator: np.ndarray) -> complex:
        return complex(np.trace(self.elems @ operator))

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "re": self.elems.real.tolist(),
            "im": self.elems.imag.tolist(),
            "tail_mass": self.tail_mass,
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "DensityMatrix":
        elems = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        if elems.shape != (int(data["dim"]), int(data["dim"])):
            raise ValueError(f"dim={data['dim']} does not match matrix shape {elems.shape}")
        return cls(elems, tail_mass=data.get("tail_mass", 0.0))


State = Union[FockVector, DensityMatrix]


# --- special functions ---

def laguerre(m: int, x):
    """L_m(x) by the three-term recurrence (k+1)L_{k+1} = (2k+1-x)L_k - k L_{k-1}."""
    if m < 0 or int(m) != m:
        raise ValueError(f"Laguerre order must be a non-negative integer, got {m!r}")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if m == 0:
        return prev if prev.ndim else float(prev)
    cur = 1.0 - x
    for k in range(1, int(m)):
        prev, cur = cur, ((2 * k + 1 - x) * cur - k * prev) / (k + 1)
    return cur if cur.ndim else float(cur)


def oscillator_wavefunctions(dim: int, x) -> np.ndarray:
    """Real number-state wavefunctions psi_0..psi_{dim-1} at points ``x``.

    psi_n(x) = (2/pi)^{1/4} (2^n n!)^{-1/2} H_n(sqrt(2) x) exp(-x^2), built from
    psi_{n+1} = (2 x psi_n - sqrt(n) psi_{n-1}) / sqrt(n+1).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((dim,) + x.shape)
    out[0] = (2.0 / np.pi) ** 0.25 * np.exp(-x * x)
    if dim > 1:
        out[1] = 2.0 * x * out[0]
    for n in range(1, dim - 1):
        out[n + 1] = (2.0 * x * out[n] - np.sqrt(n) * out[n - 1]) / np.sqrt(n + 1)
    return out


# --- operators ---

def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def creation(dim: int) -> np.ndarray:
    return annihilation(dim).T.copy()


def number_operator(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def quadrature_matrix(theta: float, dim: int) -> np.ndarray:
    """Matrix of x_theta = (a e^{-i theta} + a^dag e^{i theta}) / 2 in the number basis."""
    if dim < 2:
        raise ValueError(f"quadrature matrix needs dim >= 2, got {dim}")
    a = annihilation(dim)
    return 0.5 * (a * np.exp(-1j * theta) + a.conj().T * np.exp(1j * theta))


# --- constructors ---

def _tail_span(alpha_abs: float, m: int) -> int:
    # number of extra levels that hold the shifted Poisson bulk with margin
    return int(np.ceil(alpha_abs * alpha_abs + 20.0 * alpha_abs + 60.0)) + m


def _pacs_amplitudes(alpha: complex, m: int, length: int) -> np.ndarray:
    """k_{alpha,m} (a^dag)^m |alpha> on levels 0..length-1, all in log space."""
    amps = np.zeros(length, dtype=complex)
    if m >= length:
        return amps
    a = abs(alpha)
    if a == 0.0:
        amps[m] = 1.0
        return amps
    j = np.arange(m, length)
    n = j - m
    log_norm = -0.5 * (gammaln(m + 1) + np.log(laguerre(m, -a * a)))
    log_mag = log_norm - 0.5 * a * a + n * np.log(a) + 0.5 * gammaln(j + 1) - gammaln(n + 1)
    amps[m:] = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return amps


def _checked(amps: np.ndarray, tail: float, policy: TruncationPolicy, label: str) -> FockVector:
    tail = max(float(tail), 0.0)
    if tail > policy.tail_tolerance:
        raise TruncationTooSmall(tail, policy.dim, policy.tail_tolerance)
    logger.debug("%s built with dim=%d, tail mass %.2e", label, policy.dim, tail)
    return FockVector(amps, tail_mass=tail)


def make_coherent(alpha: complex, policy: TruncationPolicy) -> FockVector:
    """|alpha> with c_n = exp(-|alpha|^2/2) alpha^n / sqrt(n!)."""
    alpha = complex(alpha)
    amps = _pacs_amplitudes(alpha, 0, policy.dim)
    tail = float(poisson.sf(policy.dim - 1, abs(alpha) ** 2))
    return _checked(amps, tail, policy, f"coherent({alpha})")


def make_fock(n: int, policy: TruncationPolicy) -> FockVector:
    if n < 0 or n >= policy.dim:
        raise IndexOutOfRange(n, policy.dim)
    amps = np.zeros(policy.dim, dtype=complex)
    amps[n] = 1.0
    return FockVector(amps)


def make_pacs(alpha: complex, m: int, policy: TruncationPolicy) -> FockVector:
    """Photon-added coherent state |alpha, m> (Laguerre-normalized)."""
    if m < 0 or int(m) != m:
        raise ValueError(f"number of added photons must be a non-negative integer, got {m!r}")
    alpha, m = complex(alpha), int(m)
    if m == 0:
        return make_coherent(alpha, policy)
    full = _pacs_amplitudes(alpha, m, policy.dim + _tail_span(abs(alpha), m))
    tail = float(np.sum(np.abs(full[policy.dim:]) ** 2))
    return _checked(full[: policy.dim], tail, policy, f"pacs({alpha}, m={m})")


def _spacs_amplitudes(alpha: complex, length: int) -> np.ndarray:
    amps = np.zeros(length, dtype=complex)
    if length < 2:
        return amps
    a = abs(alpha)
    if a == 0.0:
        amps[1] = 1.0
        return amps
    n = np.arange(length - 1)
    log_mag = (
        -0.5 * a * a
        - 0.5 * np.log1p(a * a)
        + n * np.log(a)
        + 0.5 * np.log(n + 1.0)
        - 0.5 * gammaln(n + 1)
    )
    amps[1:] = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return amps


def make_spacs(alpha: complex, policy: TruncationPolicy) -> FockVector:
    """a^dag|alpha> / sqrt(1 + |alpha|^2); the vacuum amplitude is exactly zero."""
    alpha = complex(alpha)
    full = _spacs_amplitudes(alpha, policy.dim + _tail_span(abs(alpha), 1))
    tail = float(np.sum(np.abs(full[policy.dim:]) ** 2))
    return _checked(full[: policy.dim], tail, policy, f"spacs({alpha})")


def spacs_density(alpha: complex, policy: TruncationPolicy) -> DensityMatrix:
    """rho_ij = i j / sqrt(i! j!) * exp(-|alpha|^2) / (1 + |alpha|^2) * alpha^(i-1) conj(alpha)^(j-1)."""
    alpha = complex(alpha)
    a = abs(alpha)
    length = policy.dim + _tail_span(a, 1)
    v = np.zeros(length, dtype=complex)
    if a == 0.0:
        v[1] = 1.0
        prefactor = 1.0
    else:
        i = np.arange(1, length)
        log_mag = np.log(i) - 0.5 * gammaln(i + 1) + (i - 1) * np.log(a)
        v[1:] = np.exp(log_mag) * np.exp(1j * (i - 1) * np.angle(alpha))
        prefactor = np.exp(-a * a) / (1.0 + a * a)
    weights = prefactor * np.abs(v) ** 2
    tail = max(float(np.sum(weights[policy.dim:])), 0.0)
    if tail > policy.tail_tolerance:
        raise TruncationTooSmall(tail, policy.dim, policy.tail_tolerance)
    head = v[: policy.dim]
    return DensityMatrix(prefactor * np.outer(head, head.conj()), tail_mass=tail)


def truncated_superposition(alpha: complex) -> FockVector:
    """Renormalized |1> + sqrt(2) alpha |2>, the low-amplitude conditional state."""
    amps = np.array([0.0, 1.0, np.sqrt(2.0) * complex(alpha)], dtype=complex)
    return FockVector(amps / np.linalg.norm(amps))


def required_dim(alpha: complex, m: int = 0, tolerance: float = DEFAULT_TAIL_TOLERANCE) -> int:
    """Smallest M whose tail above M-1 for |alpha, m> is within ``tolerance``."""
    a = abs(complex(alpha))
    length = m + 1 + _tail_span(a, m)
    probs = np.abs(_pacs_amplitudes(complex(alpha), int(m), length)) ** 2
    # tails[d] = probability on levels >= d
    tails = np.concatenate([np.cumsum(probs[::-1])[::-1], [0.0]])
    ok = np.nonzero(tails <= tolerance)[0]
    return max(int(ok[0]), m + 1, 1)


# --- expectation values ---

def photon_distribution(state: State) -> np.ndarray:
    if isinstance(state, FockVector):
        return state.probabilities()
    return state.diagonal()


def mean_photon_number(state: State) -> float:
    if isinstance(state, FockVector):
        return float(np.real(np.vdot(state.amps, number_operator(state.dim) @ state.amps)))
    return float(state.expectation(number_operator(state.dim)).real)


def as_density(state: State) -> DensityMatrix:
    return state.density() if isinstance(state, FockVector) else state


__all__ = [
    "DEFAULT_TAIL_TOLERANCE",
    "DensityMatrix",
    "FockVector",
    "TruncationPolicy",
    "annihilation",
    "as_density",
    "creation",
    "laguerre",
    "make_coherent",
    "make_fock",
    "make_pacs",
    "make_spacs",
    "mean_photon_number",
    "number_operator",
    "oscillator_wavefunctions",
    "photon_distribution",
    "quadrature_matrix",
    "required_dim",
    "spacs_density",
    "truncated_superposition",
]
