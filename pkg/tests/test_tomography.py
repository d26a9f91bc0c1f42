import numpy as np
import pandas as pd
import pytest
from scipy.special import dawsn

from spacslab.errors import GridTooCoarse, InsufficientPhaseCoverage, PhaseAliasingWarning, TheoryNotPSD
from spacslab.fock import DensityMatrix, TruncationPolicy, make_coherent, make_fock
from spacslab.homodyne import sample_marginal, sample_state_marginal
from spacslab.loss import lossy_spacs_density
from spacslab.phase_space import marginal_spacs_lossy
from spacslab.tomography import (
    KernelAccumulator,
    PatternFunctionTable,
    ReconstructionResult,
    build_pattern_functions,
    clip_to_psd,
    element_agreement,
    fidelity,
    phase_weights,
    photon_number_table,
    purity,
    reconstruct,
    squeezing_report,
    validate_pattern_functions,
)


@pytest.fixture(scope="module")
def table6():
    return build_pattern_functions(6)


def phase_scan(draw, n_phases, per_phase, seed):
    children = np.random.SeedSequence(seed).spawn(n_phases)
    blocks = [draw(j * np.pi / n_phases, per_phase, children[j]) for j in range(n_phases)]
    return pd.concat(blocks, ignore_index=True)


@pytest.fixture(scope="module")
def single_photon_samples():
    rho = make_fock(1, TruncationPolicy(4)).density()
    return phase_scan(lambda t, n, s: sample_state_marginal(rho, t, n, s), 8, 4000, seed=5)


@pytest.fixture(scope="module")
def lossy_spacs_samples():
    dist = marginal_spacs_lossy(0.955, 0.6)
    return phase_scan(lambda t, n, s: sample_marginal(dist, t, n, s), 12, 5000, seed=6)


class TestPatternFunctions:
    def test_vacuum_kernel_closed_form(self, table6):
        x = table6.x[::97]
        expected = 2.0 - 4.0 * np.sqrt(2) * x * dawsn(np.sqrt(2) * x)
        assert np.allclose(table6.kernel(0, 0)[::97], expected, atol=1e-9)

    def test_parity_and_symmetry(self, table6):
        for n, m in [(1, 0), (3, 1), (5, 5), (5, 2)]:
            f = table6.kernel(n, m)
            assert np.allclose(f[::-1], (-1) ** (n - m) * f, atol=1e-12)
            assert np.array_equal(table6.kernel(m, n), f)

    def test_table_grid(self, table6):
        assert table6.x_max == pytest.approx(8.0)
        assert table6.spacing == pytest.approx(1 / 512)
        assert table6.values.shape == (table6.x.size, 21)
        assert list(table6.in_range(np.array([-8.0, 7.9, 8.5]))) == [True, True, False]

    def test_spline_reproduces_nodes(self, table6):
        nodes = table6.x[1000:1010]
        assert np.allclose(table6.evaluate(nodes), table6.values[1000:1010], atol=1e-12)

    def test_validation_passes(self, table6):
        assert validate_pattern_functions(table6) < 1e-3

    def test_coarse_table_fails_validation(self):
        coarse = build_pattern_functions(6, spacing=1.0, validate=False)
        with pytest.raises(GridTooCoarse):
            validate_pattern_functions(coarse)

    def test_range_cap(self):
        assert build_pattern_functions(2, x_max=50.0).x_max == pytest.approx(20.0)

    def test_rejects_empty_basis(self):
        with pytest.raises(ValueError):
            build_pattern_functions(0)


class TestPhaseWeights:
    def test_uniform(self):
        assert np.allclose(phase_weights(np.arange(6) * np.pi / 6), 1 / 6)

    def test_non_uniform_sums_to_one(self):
        weights = phase_weights([0.0, 0.3, 1.0, 2.0, 2.5])
        assert weights.sum() == pytest.approx(1.0)
        assert weights[2] > weights[1]

    def test_too_few_phases(self):
        with pytest.raises(InsufficientPhaseCoverage):
            phase_weights([0.0, 1.0])

    def test_gap_too_large(self):
        with pytest.raises(InsufficientPhaseCoverage):
            phase_weights([0.0, 0.1, 0.2])


class TestReconstruction:
    def test_single_photon(self, single_photon_samples, table6):
        result = reconstruct(single_photon_samples, 6, table6)
        expected = np.zeros((6, 6))
        expected[1, 1] = 1.0
        deviation = np.abs(result.rho_e.elems - expected)
        assert np.all(deviation <= 5 * result.sigma + 1e-12)
        assert result.n_samples == 32000
        assert result.n_phases == 8

    def test_hermitian(self, single_photon_samples, table6):
        elems = reconstruct(single_photon_samples, 4, table6).rho_e.elems
        assert np.array_equal(elems, elems.conj().T)

    def test_lossy_spacs_agrees_with_theory(self, lossy_spacs_samples):
        table = build_pattern_functions(8)
        result = reconstruct(lossy_spacs_samples, 8, table)
        rho_c = lossy_spacs_density(0.955, 0.6, 8)
        report = element_agreement(result, rho_c)
        assert report.n_total == 64
        assert report.fraction >= 0.95
        assert fidelity(rho_c, result.rho_e).value >= 0.99
        assert result.rho_e.elems[0, 0].real > 0
        assert abs(result.rho_e.trace - rho_c.trace) < 0.1

    def test_out_of_range_samples_rejected(self, single_photon_samples, table6):
        far = pd.DataFrame({"theta_rad": [0.0, np.pi / 8], "x": [50.0, -9.0], "role": "heralded"})
        result = reconstruct(pd.concat([single_photon_samples, far], ignore_index=True), 4, table6)
        assert result.n_rejected == 2
        assert result.n_samples == 32000

    def test_theta_pi_folds_onto_zero(self, table6):
        rng = np.random.default_rng(0)
        x = rng.normal(0.0, 0.5, size=(3, 500))
        phases = [0.0, np.pi / 3, 2 * np.pi / 3]
        frame = pd.DataFrame({"theta_rad": np.repeat(phases, 500), "x": x.ravel(), "role": "heralded"})
        flipped = frame.copy()
        at_zero = flipped["theta_rad"] == 0.0
        flipped.loc[at_zero, "theta_rad"] = np.pi
        flipped.loc[at_zero, "x"] = -flipped.loc[at_zero, "x"]
        a = reconstruct(frame, 2, table6)
        b = reconstruct(flipped, 2, table6)
        assert np.allclose(a.rho_e.elems, b.rho_e.elems, atol=1e-12)

    def test_worker_count_does_not_change_result(self, single_photon_samples, table6):
        serial = reconstruct(single_photon_samples, 4, table6, workers=1, chunk_size=3000)
        threaded = reconstruct(single_photon_samples, 4, table6, workers=3, chunk_size=3000)
        assert np.allclose(serial.rho_e.elems, threaded.rho_e.elems, atol=1e-14)
        assert np.allclose(serial.sigma, threaded.sigma, atol=1e-14)

    def test_too_few_phases_warns(self, table6):
        frame = phase_scan(
            lambda t, n, s: sample_state_marginal(make_coherent(0.3, TruncationPolicy(20)).density(), t, n, s),
            4, 500, seed=2,
        )
        with pytest.warns(PhaseAliasingWarning):
            reconstruct(frame, 6, table6)

    def test_no_samples(self, table6):
        empty = pd.DataFrame({"theta_rad": [0.1], "x": [0.0], "role": ["reference"]})
        with pytest.raises(InsufficientPhaseCoverage):
            reconstruct(empty, 4, table6)

    def test_table_too_small(self, single_photon_samples):
        with pytest.raises(ValueError):
            reconstruct(single_photon_samples, 4, build_pattern_functions(3))

    def test_result_json(self, single_photon_samples, table6):
        result = reconstruct(single_photon_samples, 3, table6)
        back = ReconstructionResult.from_json_dict(result.to_json_dict())
        assert np.array_equal(back.rho_e.elems, result.rho_e.elems)
        assert np.array_equal(back.sigma, result.sigma)
        assert back.phases == result.phases

    def test_photon_number_table(self, single_photon_samples, table6):
        result = reconstruct(single_photon_samples, 4, table6)
        frame = photon_number_table(result, make_fock(1, TruncationPolicy(4)).density())
        assert list(frame.columns) == ["n", "p_reconstructed", "sigma", "p_theory"]
        assert list(frame["p_theory"]) == [0.0, 1.0, 0.0, 0.0]


class TestKernelAccumulator:
    def test_merge_is_associative(self):
        rng = np.random.default_rng(1)
        parts = []
        for _ in range(3):
            acc = KernelAccumulator(4)
            acc.add(0.0, rng.normal(size=(10, 4)))
            acc.add(0.5, rng.normal(size=(7, 4)))
            parts.append(acc)
        left = parts[0].merge(parts[1]).merge(parts[2])
        right = parts[0].merge(parts[1].merge(parts[2]))
        assert left.counts == right.counts == {0.0: 30, 0.5: 21}
        for theta in (0.0, 0.5):
            assert np.allclose(left.sums[theta], right.sums[theta])
            assert np.allclose(left.squares[theta], right.squares[theta])


class TestMetrics:
    def test_purity(self):
        assert purity(make_coherent(0.5, TruncationPolicy(20)).density()) == pytest.approx(1.0)
        assert purity(np.eye(4) / 4) == pytest.approx(0.25)
        with pytest.raises(ValueError):
            purity(np.ones((2, 3)))

    def test_fidelity_limits(self):
        zero = make_fock(0, TruncationPolicy(3)).density()
        one = make_fock(1, TruncationPolicy(3)).density()
        assert fidelity(zero, zero).value == pytest.approx(1.0)
        assert fidelity(zero, one).value == pytest.approx(0.0, abs=1e-12)

    def test_fidelity_of_mixed_states(self):
        rho = DensityMatrix(np.diag([0.5, 0.5]))
        sigma = DensityMatrix(np.diag([0.9, 0.1]))
        expected = (np.sqrt(0.45) + np.sqrt(0.05)) ** 2
        assert fidelity(rho, sigma).value == pytest.approx(expected)

    def test_fidelity_above_one_is_flagged(self):
        plus = DensityMatrix(np.full((2, 2), 0.5))
        unphysical = DensityMatrix(np.array([[0.5, 0.6], [0.6, 0.5]]))
        result = fidelity(plus, unphysical)
        assert result.value == pytest.approx(1.1)
        assert result.exceeds_unity

    def test_negative_mass_reported(self):
        result = fidelity(DensityMatrix(np.eye(2) / 2), DensityMatrix(np.diag([1.2, -0.2])))
        assert result.negative_mass == pytest.approx(0.1)

    def test_theory_must_be_psd(self):
        with pytest.raises(TheoryNotPSD):
            fidelity(np.diag([1.1, -0.1]), np.eye(2) / 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fidelity(np.eye(2) / 2, np.eye(3) / 3)

    def test_clip_to_psd(self):
        clipped = clip_to_psd(np.array([[0.7, 0.5], [0.5, 0.3]]))
        assert np.linalg.eigvalsh(clipped.elems).min() >= -1e-12
        assert clipped.trace == pytest.approx(1.0)


class TestSqueezingReport:
    def test_from_matrix(self):
        rho = lossy_spacs_density(np.sqrt(3), 0.6, 40)
        report = squeezing_report(rho, 0.6, np.sqrt(3))
        assert report.percent == pytest.approx(15.0, abs=1e-6)
        assert report.var_0_err == 0.0
        assert report.to_json_dict()["theory_percent"] == pytest.approx(15.0)

    def test_rotated_seed_measured_along_its_phase(self):
        rho = lossy_spacs_density(np.sqrt(3) * np.exp(1j * np.pi / 3), 0.6, 40)
        report = squeezing_report(rho, 0.6, np.sqrt(3), phase=np.pi / 3)
        assert report.percent == pytest.approx(15.0, abs=1e-6)
        assert squeezing_report(rho, phase=0.0).percent < 14.0

    def test_from_samples(self):
        dist = marginal_spacs_lossy(np.sqrt(3), 0.6)
        frame = pd.concat(
            [sample_marginal(dist, t, 20000, seed=k) for k, t in enumerate([0.0, np.pi / 4, np.pi / 2])],
            ignore_index=True,
        )
        report = squeezing_report(frame, 0.6, np.sqrt(3))
        assert abs(report.percent - 15.0) < 5 * report.percent_err
        assert report.var_90 > 0.25
        assert report.theory_var_90 == pytest.approx(0.25 + 0.6 * 4 / 32)
