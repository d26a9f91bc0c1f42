"""Heralded SPACS preparation in a seeded low-gain parametric amplifier.

Only the first-order expansion of the amplifier output is modelled,

    |alpha>_s |0>_i  +  g a^dag |alpha>_s |1>_i,

so an idler click projects the signal onto a^dag|alpha> (normalized), and
clicks happen with probability g^2 (1 + |alpha|^2) per pulse. Dark counts add an
independent rate whose clicks leave the signal in the unexcited |alpha>.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple, Union

import numpy as np

from spacslab.errors import FirstOrderValidityWarning, ProbabilityOutOfRange, RatioBelowUnity
from spacslab.fock import FockVector, TruncationPolicy, creation, make_coherent, make_spacs

logger = logging.getLogger(__name__)

NOMINAL_REP_RATE = 8.2e7
GAIN_SOFT_BOUND = 0.1
FIRST_ORDER_BOUND = 0.01
FRAME_CHUNK = 1 << 20

SeedLike = Union[int, np.random.SeedSequence, None]


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class AmplifierParams:
    gain: float
    alpha_seed: complex = 0.0
    rep_rate: float = NOMINAL_REP_RATE
    dark_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha_seed", complex(self.alpha_seed))
        if not self.gain >= 0:
            raise ValueError(f"gain must be non-negative, got {self.gain!r}")
        if not self.rep_rate > 0:
            raise ValueError(f"rep_rate must be positive, got {self.rep_rate!r}")
        if not self.dark_rate >= 0:
            raise ValueError(f"dark_rate must be non-negative, got {self.dark_rate!r}")
        if self.gain > GAIN_SOFT_BOUND:
            _warn_validity(f"gain g={self.gain:.3g} exceeds the low-gain bound {GAIN_SOFT_BOUND}")
        elif self.signal_probability > FIRST_ORDER_BOUND:
            _warn_validity(
                f"g^2(1+|alpha|^2)={self.signal_probability:.3g} exceeds {FIRST_ORDER_BOUND}; "
                "double-pair terms are no longer negligible"
            )

    @property
    def signal_probability(self) -> float:
        return float(self.gain ** 2 * (1.0 + abs(self.alpha_seed) ** 2))

    @property
    def dark_probability(self) -> float:
        return float(self.dark_rate / self.rep_rate)

    @property
    def herald_probability(self) -> float:
        return self.signal_probability + self.dark_probability

    def unseeded(self) -> "AmplifierParams":
        """Same amplifier with the seed blocked."""
        return AmplifierParams(self.gain, 0.0, self.rep_rate, self.dark_rate)


def _warn_validity(message: str) -> None:
    logger.warning(message)
    warnings.warn(message, FirstOrderValidityWarning, stacklevel=3)


@dataclass(frozen=True, eq=False)
class HeraldRecord:
    """Outcome of a heralding run.

    ``triggers`` holds the sorted indices of heralded frames; ``dark`` flags the
    ones caused by a dark count.
    """

    n_frames: int
    n_heralds: int
    herald_probability_true: float
    rep_rate: float = NOMINAL_REP_RATE
    triggers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))
    dark: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        if self.n_heralds > self.n_frames:
            raise ValueError(f"{self.n_heralds} heralds cannot exceed {self.n_frames} frames")

    @property
    def n_dark(self) -> int:
        return int(np.count_nonzero(self.dark))

    @property
    def exposure(self) -> float:
        """Acquisition time in seconds."""
        return self.n_frames / self.rep_rate

    @property
    def rate(self) -> float:
        return self.n_heralds / self.exposure

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "n_frames": int(self.n_frames),
            "n_heralds": int(self.n_heralds),
            "n_dark": self.n_dark,
            "herald_probability_true": self.herald_probability_true,
            "rep_rate": self.rep_rate,
            "rate": self.rate,
        }

    def trigger_bytes(self) -> bytes:
        """Herald frame indices as little-endian unsigned 64-bit integers."""
        return np.asarray(self.triggers, dtype="<u8").tobytes()


@dataclass(frozen=True)
class KlyshkoEstimate:
    alpha: float
    stderr: float
    ratio: float
    ratio_stderr: float

    def to_json_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "stderr": self.stderr, "ratio": self.ratio, "ratio_stderr": self.ratio_stderr}


def conditional_state(params: AmplifierParams, policy: TruncationPolicy) -> FockVector:
    """Signal state after an idler click; |1> when the seed is blocked."""
    return make_spacs(params.alpha_seed, policy)


def first_order_branches(params: AmplifierParams, policy: TruncationPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalized signal amplitudes for the idler-empty and idler-click branches."""
    coherent = make_coherent(params.alpha_seed, policy).amps
    return coherent.copy(), params.gain * (creation(policy.dim) @ coherent)


def _chunk_heralds(seed: np.random.SeedSequence, size: int, p_signal: float, p_dark: float):
    rng = np.random.default_rng(seed)
    u = rng.random(size)
    idx = np.nonzero(u < p_signal + p_dark)[0]
    return idx.astype(np.uint64), u[idx] >= p_signal


def simulate_heralds(
    params: AmplifierParams, n_frames: int, seed: SeedLike, workers: int = 1
) -> HeraldRecord:
    """Bernoulli-thin ``n_frames`` pulses at the herald probability.

    Frames are cut into fixed chunks of 2^20, chunk c drawing from the c-th
    child of the seed sequence, so the record does not depend on ``workers``.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be at least 1, got {n_frames}")
    p = params.herald_probability
    if p > 1.0:
        raise ProbabilityOutOfRange(p)
    n_chunks = -(-int(n_frames) // FRAME_CHUNK)
    children = as_seed_sequence(seed).spawn(n_chunks)
    sizes = [min(FRAME_CHUNK, n_frames - c * FRAME_CHUNK) for c in range(n_chunks)]

    def run(c: int):
        idx, dark = _chunk_heralds(children[c], sizes[c], params.signal_probability, params.dark_probability)
        return idx + np.uint64(c * FRAME_CHUNK), dark

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(c) for c in range(n_chunks)]
    triggers = np.concatenate([t for t, _ in parts])
    dark = np.concatenate([d for _, d in parts])
    logger.info("%d heralds in %d frames (p=%.3e)", triggers.size, n_frames, p)
    return HeraldRecord(
        n_frames=int(n_frames),
        n_heralds=int(triggers.size),
        herald_probability_true=p,
        rep_rate=params.rep_rate,
        triggers=triggers,
        dark=dark,
    )


def klyshko_alpha(
    rate_seeded: float,
    rate_unseeded: float,
    exposure_seeded: float = 1.0,
    exposure_unseeded: float = 1.0,
) -> KlyshkoEstimate:
    """|alpha| from the seeded/unseeded herald rate ratio 1 + |alpha|^2.

    The standard error treats rate * exposure as Poisson counts on both sides.
    At |alpha| = 0 the linearized error diverges; sqrt(sigma_ratio) is reported.
    """
    if not rate_unseeded > 0:
        raise ValueError(f"unseeded rate must be positive, got {rate_unseeded!r}")
    ratio = float(rate_seeded) / float(rate_unseeded)
    if ratio < 1.0:
        raise RatioBelowUnity(ratio)
    counts_s = max(rate_seeded * exposure_seeded, 1.0)
    counts_u = rate_unseeded * exposure_unseeded
    ratio_err = ratio * float(np.sqrt(1.0 / counts_s + 1.0 / counts_u))
    alpha = float(np.sqrt(ratio - 1.0))
    stderr = ratio_err / (2.0 * alpha) if alpha > 0 else float(np.sqrt(ratio_err))
    return KlyshkoEstimate(alpha, float(stderr), ratio, ratio_err)


def klyshko_from_records(seeded: HeraldRecord, unseeded: HeraldRecord) -> KlyshkoEstimate:
    return klyshko_alpha(seeded.rate, unseeded.rate, seeded.exposure, unseeded.exposure)


__all__ = [
    "AmplifierParams",
    "HeraldRecord",
    "KlyshkoEstimate",
    "as_seed_sequence",
    "conditional_state",
    "first_order_branches",
    "klyshko_alpha",
    "klyshko_from_records",
    "simulate_heralds",
]
