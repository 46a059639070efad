import json
import math

import numpy as np
import pytest

from qmla.pauli import parse_model
from qmla.smc import (
    ParticleCloud,
    PriorSpec,
    bayes_update,
    design_heuristic,
    effective_sample_size,
    initialize_cloud,
    liu_west_resample,
    run_qhl,
    should_resample,
    volume,
)
from qmla.system import (
    Datum,
    ExperimentDesign,
    HamiltonianModel,
    NoiseConfig,
    SimulatedSystem,
    plus_state,
    phase_plus_state,
)


def plus_design(t, source="test"):
    return ExperimentDesign(
        time=t,
        probe_id="plus",
        probe_sys=plus_state(),
        probe_env=phase_plus_state(0.0),
        source=source,
    )


class TestInitializeCloud:
    def test_uniform_weights_and_bounds(self):
        cloud = initialize_cloud(PriorSpec.uniform(1, 0, 10), 3, np.random.default_rng(0))
        np.testing.assert_allclose(cloud.weights, [1 / 3] * 3)
        assert np.all((cloud.locations >= 0) & (cloud.locations <= 10))

    def test_normal_prior_clt(self):
        hits = 0
        for seed in range(100):
            cloud = initialize_cloud(
                PriorSpec.normal(1, 5.0, 1.0), 10_000, np.random.default_rng(seed)
            )
            hits += abs(cloud.locations.mean() - 5.0) <= 4.0 / math.sqrt(10_000)
        assert hits >= 99

    def test_deterministic(self):
        a = initialize_cloud(PriorSpec.uniform(2, 0, 10), 50, np.random.default_rng(9))
        b = initialize_cloud(PriorSpec.uniform(2, 0, 10), 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a.locations, b.locations)

    def test_rejects_tiny_cloud(self):
        with pytest.raises(ValueError):
            initialize_cloud(PriorSpec.uniform(1, 0, 1), 1, np.random.default_rng(0))

    def test_prior_validation(self):
        with pytest.raises(ValueError):
            PriorSpec((("uniform", 2.0, 1.0),))
        with pytest.raises(ValueError):
            PriorSpec((("normal", 0.0, -1.0),))


class TestDesignHeuristic:
    def test_inverse_l1_distance(self):
        cloud = ParticleCloud(
            locations=np.array([[0.2, 0.5], [0.3, 0.1]]), weights=np.array([0.5, 0.5])
        )
        t, degenerate = design_heuristic(cloud, np.random.default_rng(0))
        assert t == pytest.approx(1.0 / 0.5)
        assert not degenerate

    def test_degenerate_returns_cap(self):
        cloud = ParticleCloud(
            locations=np.array([[1.0], [1.0]]), weights=np.array([0.5, 0.5])
        )
        t, degenerate = design_heuristic(cloud, np.random.default_rng(0), time_cap=50.0)
        assert t == 50.0
        assert degenerate

    def test_boost_and_cap(self):
        cloud = ParticleCloud(
            locations=np.array([[0.0], [1.0]]), weights=np.array([0.5, 0.5])
        )
        t, _ = design_heuristic(cloud, np.random.default_rng(0), boost=10.0)
        assert t == pytest.approx(10.0)
        t, _ = design_heuristic(
            cloud, np.random.default_rng(0), boost=10.0, time_cap=4.0
        )
        assert t == 4.0

    def test_median_time_scales_with_shrinking_cloud(self):
        # volume x100 smaller in 2 params -> sd /10 -> median time x10
        def median_time(sd, seed):
            rng = np.random.default_rng(seed)
            cloud = initialize_cloud(PriorSpec.normal(2, 5.0, sd), 4000, rng)
            return np.median(
                [design_heuristic(cloud, rng)[0] for _ in range(800)]
            )

        ratio = median_time(0.05, 1) / median_time(0.5, 2)
        assert 8.0 < ratio < 12.5


class TestBayesUpdate:
    def setup_method(self):
        self.model = HamiltonianModel(parse_model("Sz"))

    def test_uninformative_at_t0(self):
        cloud = initialize_cloud(PriorSpec.uniform(1, 0, 10), 100, np.random.default_rng(0))
        updated = bayes_update(cloud, Datum(1.0, shots=1), plus_design(0.0), self.model)
        np.testing.assert_allclose(updated.weights, cloud.weights)

    def test_closed_form_weight_ratio(self):
        # particles alpha=1, alpha=2 scored on datum 1 at t=pi/4:
        # cos^2(pi/4) = 1/2 against cos^2(pi/2) = 0 (clamped)
        cloud = ParticleCloud(
            locations=np.array([[1.0], [2.0]]), weights=np.array([0.5, 0.5])
        )
        updated = bayes_update(
            cloud, Datum(1.0, shots=1), plus_design(np.pi / 4), self.model
        )
        ratio = updated.weights[0] / updated.weights[1]
        assert ratio == pytest.approx(0.5 / 1e-10, rel=1e-4)

    def test_identical_particles_stay_identical(self):
        cloud = ParticleCloud(
            locations=np.array([[3.0], [3.0]]), weights=np.array([0.5, 0.5])
        )
        updated = bayes_update(cloud, Datum(1.0, shots=1), plus_design(0.3), self.model)
        assert updated.weights[0] == updated.weights[1]

    def test_weights_remain_probability_vector(self):
        rng = np.random.default_rng(3)
        cloud = initialize_cloud(PriorSpec.uniform(1, 0, 10), 200, rng)
        for _ in range(25):
            datum = Datum(float(rng.integers(0, 2)), shots=1)
            cloud = bayes_update(cloud, datum, plus_design(rng.uniform(0, 5)), self.model)
            assert np.all(cloud.weights >= 0)
            assert abs(cloud.weights.sum() - 1.0) < 1e-10


class TestEffectiveSampleSize:
    def test_uniform(self):
        cloud = ParticleCloud(np.zeros((100, 1)), np.full(100, 0.01))
        assert effective_sample_size(cloud) == pytest.approx(100.0)
        assert not should_resample(cloud, 100)

    def test_collapsed(self):
        weights = np.zeros(100)
        weights[0] = 1.0
        cloud = ParticleCloud(np.zeros((100, 1)), weights)
        assert effective_sample_size(cloud) == pytest.approx(1.0)
        assert should_resample(cloud, 100)

    def test_two_survivor_arithmetic(self):
        weights = np.zeros(100)
        weights[:2] = 0.5
        cloud = ParticleCloud(np.zeros((100, 1)), weights)
        assert effective_sample_size(cloud) == pytest.approx(2.0)
        assert should_resample(cloud, 100)

    def test_bounds_invariant(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            w = rng.random(64)
            w /= w.sum()
            ess = effective_sample_size(ParticleCloud(np.zeros((64, 1)), w))
            assert 1.0 - 1e-9 <= ess <= 64.0 + 1e-9


class TestLiuWestResample:
    def test_a_one_is_multinomial(self):
        rng = np.random.default_rng(5)
        cloud = initialize_cloud(PriorSpec.uniform(2, 0, 10), 100, rng)
        resampled, degraded = liu_west_resample(cloud, 1.0, rng)
        assert not degraded
        originals = {tuple(row) for row in cloud.locations}
        assert all(tuple(row) in originals for row in resampled.locations)

    def test_identical_particles(self):
        cloud = ParticleCloud(np.full((50, 2), 3.0), np.full(50, 0.02))
        resampled, degraded = liu_west_resample(cloud, 0.98, np.random.default_rng(0))
        assert degraded
        np.testing.assert_allclose(resampled.locations, 3.0, atol=1e-4)

    def test_moment_preservation(self):
        rng = np.random.default_rng(11)
        n = 50_000
        locations = rng.multivariate_normal([2.0, -1.0], [[1.0, 0.3], [0.3, 0.5]], n)
        cloud = ParticleCloud(locations, np.full(n, 1.0 / n))
        resampled, _ = liu_west_resample(cloud, 0.98, rng)
        in_mean, in_cov = cloud.mean(), cloud.covariance()
        out_mean, out_cov = resampled.mean(), resampled.covariance()
        sd = np.sqrt(np.diag(in_cov))
        assert np.all(np.abs(out_mean - in_mean) < 3.0 * sd / math.sqrt(n))
        frob = np.linalg.norm(out_cov - in_cov) / np.linalg.norm(in_cov)
        assert frob < 0.05

    def test_mean_unbiased_over_repeats(self):
        rng = np.random.default_rng(13)
        n, repeats = 2000, 200
        cloud = initialize_cloud(PriorSpec.normal(1, 4.0, 1.0), n, rng)
        grand = np.mean(
            [liu_west_resample(cloud, 0.98, rng)[0].mean()[0] for _ in range(repeats)]
        )
        assert abs(grand - cloud.mean()[0]) < 4.0 / math.sqrt(repeats * n)


class TestVolume:
    def test_isotropic_gaussian(self):
        rng = np.random.default_rng(17)
        for k, sd in ((2, 0.5), (3, 1.5)):
            cloud = initialize_cloud(PriorSpec.normal(k, 0.0, sd), 60_000, rng)
            assert volume(cloud) == pytest.approx(sd**k, rel=0.05)

    def test_identical_particles_floor(self):
        cloud = ParticleCloud(np.full((10, 2), 1.0), np.full(10, 0.1))
        assert volume(cloud) == pytest.approx(math.sqrt(1e-300))

    def test_halving_scale(self):
        rng = np.random.default_rng(19)
        locations = rng.standard_normal((40_000, 3))
        weights = np.full(40_000, 1.0 / 40_000)
        v1 = volume(ParticleCloud(locations, weights))
        v2 = volume(ParticleCloud(locations / 2.0, weights))
        assert v2 / v1 == pytest.approx(2.0**-3, rel=1e-9)

    def test_single_param_sd(self):
        rng = np.random.default_rng(23)
        cloud = initialize_cloud(PriorSpec.normal(1, 0.0, 2.0), 50_000, rng)
        assert volume(cloud) == pytest.approx(2.0, rel=0.05)


class TestRunQhl:
    def test_zero_epochs_returns_prior_summary(self):
        system = SimulatedSystem(parse_model("Sz"), [3.0])
        record = run_qhl(
            system,
            parse_model("Sz"),
            PriorSpec.uniform(1, 0, 10),
            0,
            200,
            np.random.default_rng(0),
        )
        assert record.epochs == []
        assert record.experiments == []
        assert record.summary.mean[0] == pytest.approx(5.0, abs=0.5)

    def test_convergence_single_parameter(self):
        truth = 3.1
        system = SimulatedSystem(
            parse_model("Sz"), [truth], noise=NoiseConfig(probe_offset_sigma=0.0)
        )
        record = run_qhl(
            system,
            parse_model("Sz"),
            PriorSpec.uniform(1, 0, 10),
            100,
            1000,
            np.random.default_rng(4),
        )
        sd = record.final_sds[0]
        assert abs(record.final_params[0] - truth) < 3.0 * sd
        assert record.volumes[-1] < record.volumes[0]

    def test_determinism(self):
        def run():
            system = SimulatedSystem(parse_model("Sz"), [2.0])
            record = run_qhl(
                system,
                parse_model("Sz"),
                PriorSpec.uniform(1, 0, 10),
                30,
                100,
                np.random.default_rng(12),
            )
            return json.dumps(record.to_dict(), sort_keys=True)

        assert run() == run()

    def test_record_shape(self):
        system = SimulatedSystem(parse_model("Sz"), [2.0])
        record = run_qhl(
            system,
            parse_model("Sz"),
            PriorSpec.uniform(1, 0, 10),
            15,
            50,
            np.random.default_rng(1),
        )
        assert len(record.epochs) == 15
        assert len(record.experiments) == 15
        payload = record.to_dict()
        assert set(payload) == {"model", "final_params", "final_sd", "epochs"}
        assert set(payload["epochs"][0]) == {"t", "datum", "volume", "resampled"}
