import numpy as np
import pandas as pd
import pytest
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from spacslab.errors import DegenerateFit, DensityNegativeBeyondTolerance
from spacslab.fock import TruncationPolicy, make_fock
from spacslab.homodyne import (
    RECORD_DTYPE,
    ROLE_HERALDED,
    ROLE_REFERENCE,
    AcCouplingModel,
    PhaseSchedule,
    QuadratureSample,
    acquire_frames,
    calibrate_mean_scale,
    fit_alpha,
    fit_efficiency,
    from_records,
    iter_samples,
    marginal_histograms,
    rescale_means,
    sample_marginal,
    sample_state_marginal,
    samples_from_list,
    select_role,
    to_records,
)
from spacslab.phase_space import MarginalDistribution, marginal_coherent, marginal_spacs_lossy, quad_mean
from spacslab.preparation import AmplifierParams


def ks_pvalue(x, dist, theta):
    grid = np.linspace(-8, 8, 32001)
    cdf = cumulative_trapezoid(dist(grid, theta), grid, initial=0.0)
    return stats.kstest(x, lambda v: np.interp(v, grid, cdf / cdf[-1])).pvalue


@pytest.fixture(scope="module")
def frames():
    params = AmplifierParams(0.03, 0.955)
    schedule = PhaseSchedule.uniform(12, 3000)
    return acquire_frames(params, schedule, AcCouplingModel(0.8), 0.6, seed=99)


class TestSchedule:
    def test_uniform_phases(self):
        schedule = PhaseSchedule.uniform(12, 100)
        assert np.allclose(schedule.phases, np.arange(12) * np.pi / 12)
        assert schedule.samples_per_phase == 100

    @pytest.mark.parametrize("phases", [(), (0.0, -0.1), (0.5, 0.2), (0.0, 4.0)])
    def test_invalid_phases(self, phases):
        with pytest.raises(ValueError):
            PhaseSchedule(phases)

    def test_ac_coupling(self):
        with pytest.raises(ValueError):
            AcCouplingModel(0.0)
        assert np.allclose(AcCouplingModel(0.8).apply(np.array([1.0, 2.0]), 1.0), [0.8, 1.8])

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            QuadratureSample(float("nan"), 0.0)
        with pytest.raises(ValueError):
            QuadratureSample(0.1, 3.5)
        with pytest.raises(ValueError):
            QuadratureSample(0.1, 0.0, "idler")


class TestSampling:
    def test_coherent_moments(self):
        frame = sample_marginal(marginal_coherent(1.0, 1.0), 0.0, 20000, seed=4)
        assert abs(frame["x"].mean() - 1.0) < 5 * 0.5 / np.sqrt(20000)
        assert abs(frame["x"].var() - 0.25) < 5 * 0.25 * np.sqrt(2 / 20000)

    @pytest.mark.parametrize("theta", [0.0, np.pi / 3])
    def test_spacs_distribution(self, theta):
        dist = marginal_spacs_lossy(0.955, 0.6)
        frame = sample_marginal(dist, theta, 5000, seed=8)
        assert ks_pvalue(frame["x"].to_numpy(), dist, theta) > 1e-3
        assert (frame["theta_rad"] == theta).all()
        assert (frame["role"] == ROLE_HERALDED).all()

    def test_state_marginal(self):
        rho = make_fock(1, TruncationPolicy(4)).density()
        frame = sample_state_marginal(rho, 0.5, 5000, seed=1, role=ROLE_REFERENCE)
        assert ks_pvalue(frame["x"].to_numpy(), marginal_spacs_lossy(0.0, 1.0), 0.5) > 1e-3

    def test_reproducible(self):
        dist = marginal_spacs_lossy(0.5, 0.6)
        a = sample_marginal(dist, 0.0, 100, seed=12)
        b = sample_marginal(dist, 0.0, 100, seed=12)
        assert np.array_equal(a["x"], b["x"])

    def test_negative_density_rejected(self):
        dist = MarginalDistribution(lambda x, theta: np.exp(-x * x) * (x * x - 0.1), "analytic-ideal")
        with pytest.raises(DensityNegativeBeyondTolerance):
            sample_marginal(dist, 0.0, 10, seed=0)


class TestAcquisition:
    def test_layout(self, frames):
        assert len(frames) == 2 * 12 * 3000
        assert list(frames.columns) == ["theta_rad", "x", "role"]
        first = frames.iloc[:6000]
        assert (first["theta_rad"] == 0.0).all()
        assert (first["role"].iloc[:3000] == ROLE_HERALDED).all()
        assert (first["role"].iloc[3000:] == ROLE_REFERENCE).all()

    def test_reproducible_and_worker_independent(self):
        params = AmplifierParams(0.03, 0.955)
        schedule = PhaseSchedule.uniform(4, 200)
        a = acquire_frames(params, schedule, AcCouplingModel(), 0.6, seed=3)
        b = acquire_frames(params, schedule, AcCouplingModel(), 0.6, seed=3, workers=4)
        pd.testing.assert_frame_equal(a, b)

    def test_reference_mean_is_attenuated(self, frames):
        reference = select_role(frames, ROLE_REFERENCE)
        at_zero = reference[reference["theta_rad"] == 0.0]["x"]
        expected = 0.8 * np.sqrt(0.6) * 0.955
        assert abs(at_zero.mean() - expected) < 5 * 0.5 / np.sqrt(len(at_zero))

    def test_mean_scale_calibration(self, frames):
        calibration = calibrate_mean_scale(frames, 0.955, 0.6)
        assert calibration.n_phases == 12
        assert abs(calibration.scale - 0.8) < 5 * calibration.stderr

    def test_calibration_needs_amplitude(self, frames):
        with pytest.raises(DegenerateFit):
            calibrate_mean_scale(frames, 0.0, 0.6)

    def test_rescale_restores_means(self, frames):
        restored = rescale_means(frames, 0.8)
        heralded = select_role(restored, ROLE_HERALDED)
        at_zero = heralded[heralded["theta_rad"] == 0.0]["x"]
        expected = quad_mean(0.955, 0.0, 0.6)
        assert abs(at_zero.mean() - expected) < 5 * 0.6 / np.sqrt(len(at_zero))
        assert at_zero.var() == pytest.approx(frames.loc[at_zero.index, "x"].var())

    def test_rescale_rejects_zero(self, frames):
        with pytest.raises(ValueError):
            rescale_means(frames, 0.0)

    def test_dark_heralds_mix_in_coherent_frames(self):
        params = AmplifierParams(0.03, 0.0, dark_rate=0.03 ** 2 * 8.2e7)
        frame = acquire_frames(params, PhaseSchedule.uniform(3, 20000), AcCouplingModel(), 1.0, seed=17)
        heralded = select_role(frame, ROLE_HERALDED)["x"]
        # half single photon (variance 3/4), half vacuum (1/4)
        assert heralded.var() == pytest.approx(0.5, abs=0.03)


class TestFits:
    def test_efficiency(self):
        frame = sample_marginal(marginal_spacs_lossy(0.0, 0.6), 0.0, 40000, seed=31)
        fit = fit_efficiency(frame)
        assert abs(fit.value - 0.6) < 5 * fit.stderr
        assert fit.n_samples == 40000

    def test_efficiency_needs_samples(self):
        with pytest.raises(DegenerateFit):
            fit_efficiency(pd.DataFrame({"x": []}))

    def test_alpha(self):
        params = AmplifierParams(0.03, 0.955)
        frame = acquire_frames(params, PhaseSchedule.uniform(6, 2000), AcCouplingModel(), 0.6, seed=41)
        fit = fit_alpha(frame, 0.6)
        assert abs(fit.value - 0.955) < 5 * fit.stderr
        assert fit.n_samples == 12000

    def test_efficiency_from_phase_averaged_single_photons(self):
        dist = marginal_spacs_lossy(0.0, 0.6)
        phases = np.arange(10) * np.pi / 10
        frame = pd.concat([sample_marginal(dist, t, 20000, seed=60 + k) for k, t in enumerate(phases)])
        fit = fit_efficiency(frame)
        assert fit.n_samples == 200000
        assert fit.value == pytest.approx(0.6, abs=0.01)


class TestComplexSeed:
    @pytest.fixture(scope="class")
    def rotated_frames(self):
        params = AmplifierParams(0.03, 0.955j)
        return acquire_frames(params, PhaseSchedule.uniform(12, 3000), AcCouplingModel(0.8), 0.6, seed=51)

    def test_calibration_follows_seed_phase(self, rotated_frames):
        calibration = calibrate_mean_scale(rotated_frames, 0.955, 0.6, phase=np.pi / 2)
        assert abs(calibration.scale - 0.8) < 5 * calibration.stderr

    def test_complex_amplitude_supplies_its_phase(self, rotated_frames):
        explicit = calibrate_mean_scale(rotated_frames, 0.955, 0.6, phase=np.pi / 2)
        implicit = calibrate_mean_scale(rotated_frames, 0.955j, 0.6)
        assert implicit.scale == pytest.approx(explicit.scale)

    def test_alpha_fit_follows_seed_phase(self):
        params = AmplifierParams(0.03, 0.955 * np.exp(1j * np.pi / 3))
        frame = acquire_frames(params, PhaseSchedule.uniform(6, 2000), AcCouplingModel(), 0.6, seed=52)
        fit = fit_alpha(frame, 0.6, phase=np.pi / 3)
        assert abs(fit.value - 0.955) < 5 * fit.stderr


class TestMarginalHistograms:
    def test_histograms_track_the_model(self, frames):
        restored = rescale_means(frames, 0.8)
        table = marginal_histograms(restored, marginal_spacs_lossy(0.955, 0.6), bins=20)
        assert list(table.columns) == ["theta_rad", "x", "count", "p_samples", "p_theory"]
        assert table["theta_rad"].nunique() == 12
        assert table.groupby("theta_rad")["count"].sum().eq(3000).all()
        widths = table.groupby("theta_rad")["x"].apply(lambda x: x.diff().mean())
        areas = (table["p_samples"] * table["theta_rad"].map(widths)).groupby(table["theta_rad"]).sum()
        assert np.allclose(areas, 1.0)
        assert np.abs(table["p_samples"] - table["p_theory"]).max() < 0.2

    def test_no_samples(self):
        empty = pd.DataFrame({"theta_rad": [], "x": [], "role": []})
        with pytest.raises(DegenerateFit):
            marginal_histograms(empty, marginal_spacs_lossy(0.955, 0.6))


class TestRecords:
    def test_binary_records(self, frames):
        records = to_records(frames.iloc[:10])
        assert records.dtype == RECORD_DTYPE
        assert RECORD_DTYPE.itemsize == 17
        assert list(records["role"]) == [0] * 10
        back = from_records(np.frombuffer(records.tobytes(), dtype=RECORD_DTYPE))
        pd.testing.assert_frame_equal(back, frames.iloc[:10].reset_index(drop=True), check_dtype=False)

    def test_sample_objects(self):
        samples = [QuadratureSample(0.1, 0.0), QuadratureSample(-0.3, np.pi / 2, ROLE_REFERENCE)]
        frame = samples_from_list(samples)
        assert list(frame.columns) == ["theta_rad", "x", "role"]
        assert iter_samples(frame) == samples
