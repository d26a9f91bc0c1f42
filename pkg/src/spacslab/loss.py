"""Photon loss on number-basis density matrices (the Bernoulli/binomial channel)."""
from __future__ import annotations

import logging

import numpy as np
from scipy.special import gammaln

from spacslab.errors import InsufficientHeadroom
from spacslab.fock import DensityMatrix, TruncationPolicy, required_dim, spacs_density
from spacslab.phase_space import EfficiencyModel, as_efficiency

logger = logging.getLogger(__name__)

HEADROOM_TOLERANCE = 1e-12


def _log_binomial(n: np.ndarray, k: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def bernoulli_map(rho: DensityMatrix, eff, headroom: int = 0) -> DensityMatrix:
    """Apply loss of efficiency eta.

    rho'_ij = eta^((i+j)/2) sum_k sqrt(C(i+k, i) C(j+k, j)) (1-eta)^k rho_{i+k, j+k}

    ``headroom`` levels at the top of the basis must be empty (population below
    1e-12), so that no lost photon would have come from above the truncation.
    A lossy map of a state whose recorded ``tail_mass`` exceeds that bound is
    rejected too.
    """
    eta = as_efficiency(eff).eta
    dim = rho.dim
    if headroom < 0 or headroom > dim:
        raise ValueError(f"headroom must lie in [0, {dim}], got {headroom}")
    if headroom:
        top = float(rho.diagonal()[dim - headroom:].sum())
        if top > HEADROOM_TOLERANCE:
            raise InsufficientHeadroom(top, headroom, dim)
    if eta == 1.0:
        return DensityMatrix(rho.elems.copy(), tail_mass=rho.tail_mass)
    if rho.tail_mass > HEADROOM_TOLERANCE:
        raise InsufficientHeadroom(rho.tail_mass, 0, dim)

    elems = rho.elems
    idx = np.arange(dim)
    out = np.zeros((dim, dim), dtype=complex)
    log_eta, log_loss = np.log(eta), np.log1p(-eta)
    for k in range(dim):
        span = dim - k
        i = idx[:span]
        # sqrt(C(i+k, i)) * eta^(i/2) * (1-eta)^(k/2), split symmetrically between rows and columns
        w = np.exp(0.5 * (_log_binomial(i + k, i) + i * log_eta + k * log_loss))
        out[:span, :span] += np.outer(w, w) * elems[k:, k:]
    logger.debug("loss eta=%.4f applied to dim=%d", eta, dim)
    return DensityMatrix(out, tail_mass=rho.tail_mass)


def compose_loss(eta1, eta2) -> EfficiencyModel:
    """Two losses in series are one loss with the product efficiency."""
    return EfficiencyModel(as_efficiency(eta1).eta * as_efficiency(eta2).eta)


def lossy_spacs_density(
    alpha: complex, eff, dim: int, tail_tolerance: float = HEADROOM_TOLERANCE
) -> DensityMatrix:
    """Detected SPACS state rho_c reported on ``dim`` levels.

    The ideal state is built on a basis large enough to hold it, passed through
    the loss channel there, and only then cut to ``dim``; the matrix is not
    renormalized so the trace shows what the cut dropped.
    """
    tolerance = min(tail_tolerance, HEADROOM_TOLERANCE)
    work_dim = max(int(dim), required_dim(alpha, 1, 0.1 * tolerance))
    policy = TruncationPolicy(work_dim, tolerance)
    lossy = bernoulli_map(spacs_density(alpha, policy), eff)
    if work_dim == dim:
        return lossy
    return lossy.truncate(int(dim))


def lossy_spacs_purity(alpha: complex, eff) -> float:
    """Closed-form Tr(rho_c^2) of the untruncated detected SPACS.

    With a = |alpha|^2 and c = a - (2 eta - 1):
    P = [2 eta^2 + 2 eta a + c^2 + 2 eta c] / (1 + a)^2.
    """
    eta = as_efficiency(eff).eta
    a = abs(complex(alpha)) ** 2
    c = a - (2.0 * eta - 1.0)
    return float((2.0 * eta * eta + 2.0 * eta * a + c * c + 2.0 * eta * c) / (1.0 + a) ** 2)


__all__ = ["bernoulli_map", "compose_loss", "lossy_spacs_density", "lossy_spacs_purity"]
