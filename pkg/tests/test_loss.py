import math

import numpy as np
import pytest

from spacslab.errors import InsufficientHeadroom
from spacslab.fock import DensityMatrix, TruncationPolicy, make_fock, spacs_density
from spacslab.loss import bernoulli_map, compose_loss, lossy_spacs_density, lossy_spacs_purity
from spacslab.tomography import purity

# expected purity of the detected SPACS at eta = 0.6
REFERENCE_PURITY = [(0.0, 0.520), (0.387, 0.637), (0.955, 0.869), (2.61, 0.992)]


def loss_by_loops(elems, eta):
    dim = elems.shape[0]
    out = np.zeros_like(elems)
    for i in range(dim):
        for j in range(dim):
            for k in range(dim - max(i, j)):
                out[i, j] += (
                    math.sqrt(math.comb(i + k, i) * math.comb(j + k, j))
                    * eta ** ((i + j) / 2)
                    * (1 - eta) ** k
                    * elems[i + k, j + k]
                )
    return out


def random_state(dim, seed=3):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


class TestBernoulliMap:
    def test_unit_efficiency_is_identity(self):
        rho = random_state(5)
        assert np.array_equal(bernoulli_map(rho, 1.0).elems, rho.elems)

    @pytest.mark.parametrize("eta", [0.3, 0.6, 0.95])
    def test_matches_scalar_loops(self, eta):
        rho = random_state(6)
        assert np.allclose(bernoulli_map(rho, eta).elems, loss_by_loops(rho.elems, eta), atol=1e-13)

    def test_single_photon(self):
        rho = make_fock(1, TruncationPolicy(3)).density()
        assert np.allclose(bernoulli_map(rho, 0.6).diagonal(), [0.4, 0.6, 0.0])

    def test_trace_preserved(self):
        rho = random_state(7)
        assert bernoulli_map(rho, 0.42).trace == pytest.approx(1.0, abs=1e-13)

    def test_losses_compose(self):
        rho = random_state(6)
        twice = bernoulli_map(bernoulli_map(rho, 0.8), 0.7)
        once = bernoulli_map(rho, compose_loss(0.8, 0.7))
        assert compose_loss(0.8, 0.7).eta == pytest.approx(0.56)
        assert np.allclose(twice.elems, once.elems, atol=1e-13)

    def test_headroom_must_be_empty(self):
        rho = DensityMatrix(np.diag([0.5, 0.0, 0.0, 0.5]))
        with pytest.raises(InsufficientHeadroom) as info:
            bernoulli_map(rho, 0.6, headroom=1)
        assert info.value.top_population == pytest.approx(0.5)
        assert bernoulli_map(DensityMatrix(np.diag([0.5, 0.5, 0.0, 0.0])), 0.6, headroom=2).dim == 4

    def test_truncated_input_rejected(self):
        cut = spacs_density(2.61, TruncationPolicy(40)).truncate(8)
        assert cut.tail_mass > 1e-3
        with pytest.raises(InsufficientHeadroom) as info:
            bernoulli_map(cut, 0.6)
        assert info.value.top_population == pytest.approx(cut.tail_mass)
        assert info.value.headroom == 0
        assert "above the 8-level basis" in str(info.value)

    def test_truncated_input_lossless(self):
        cut = spacs_density(2.61, TruncationPolicy(40)).truncate(8)
        assert bernoulli_map(cut, 1.0).tail_mass == pytest.approx(cut.tail_mass)

    def test_invalid_efficiency(self):
        with pytest.raises(ValueError):
            bernoulli_map(random_state(3), 0.0)


class TestLossySpacs:
    @pytest.mark.parametrize("alpha,expected", REFERENCE_PURITY)
    def test_closed_form_purity(self, alpha, expected):
        assert lossy_spacs_purity(alpha, 0.6) == pytest.approx(expected, abs=1e-3)

    @pytest.mark.parametrize("alpha", [0.0, 0.387, 0.955, 2.61, 1.0 + 1.0j])
    def test_closed_form_matches_matrix(self, alpha):
        rho = lossy_spacs_density(alpha, 0.6, 60)
        assert purity(rho) == pytest.approx(lossy_spacs_purity(alpha, 0.6), abs=1e-9)

    def test_ideal_purity_is_one(self):
        assert lossy_spacs_purity(1.3, 1.0) == pytest.approx(1.0)

    def test_truncated_report_keeps_dropped_mass(self):
        rho = lossy_spacs_density(2.61, 0.6, 8)
        assert rho.dim == 8
        assert rho.trace < 1.0
        assert rho.trace + rho.tail_mass == pytest.approx(1.0, abs=1e-10)

    def test_truncation_applied_after_loss(self):
        full = lossy_spacs_density(0.955, 0.6, 40)
        small = lossy_spacs_density(0.955, 0.6, 6)
        assert np.allclose(small.elems, full.elems[:6, :6], atol=1e-11)

    def test_photon_numbers_follow_binomial_thinning(self):
        ideal = spacs_density(0.955, TruncationPolicy(40)).diagonal()
        lossy = lossy_spacs_density(0.955, 0.6, 40).diagonal()
        expected = [
            sum(math.comb(k, n) * 0.6 ** n * 0.4 ** (k - n) * ideal[k] for k in range(n, 40))
            for n in range(10)
        ]
        assert np.allclose(lossy[:10], expected, atol=1e-13)
