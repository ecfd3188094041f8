import numpy as np
import pytest

from demandgrid.choice import (
    InfeasibleP0Error,
    achievable_p0_range,
    degenerate_distribution,
    fit_threshold_distribution,
    solve_sigma,
    threshold_probs,
)
from demandgrid.grid import distance_classes

from conftest import make_grid


@pytest.fixture(scope="module")
def table400():
    return distance_classes(make_grid(12, 12, 400.0), 1000.0)


class TestThresholdProbs:
    def test_probs_sum_to_one(self, table400):
        for sigma in (50.0, 200.0, 391.9, 1500.0, 1e5):
            dist = threshold_probs(sigma, table400)
            assert abs(dist.class_probs.sum() - 1.0) <= 1e-12

    def test_survival_difference_identity_exact(self, table400):
        dist = threshold_probs(300.0, table400)
        ext = np.append(dist.survival, 0.0)
        for l in range(dist.num_classes):
            assert ext[l] - ext[l + 1] == dist.class_probs[l]

    def test_survival_monotone_from_one(self, table400):
        dist = threshold_probs(700.0, table400)
        assert dist.survival[0] == 1.0
        assert np.all(np.diff(dist.survival) <= 0)

    def test_single_bin_is_certain(self):
        table = distance_classes(make_grid(3, 3, 400.0), 250.0)
        dist = threshold_probs(100.0, table)
        assert dist.class_probs.tolist() == [1.0]

    def test_flat_limit_approaches_bin_widths(self, table400):
        widths = np.diff(table400.boundaries)
        target = widths / widths.sum()
        prev_gap = None
        for sigma in (500.0, 2000.0, 10000.0, 1e6):
            dist = threshold_probs(sigma, table400)
            gap = np.max(np.abs(dist.class_probs - target))
            if prev_gap is not None:
                assert gap <= prev_gap + 1e-12
            prev_gap = gap
        assert prev_gap < 1e-4

    def test_sigma_must_be_positive(self, table400):
        with pytest.raises(ValueError):
            threshold_probs(0.0, table400)


class TestSolveSigma:
    def test_default_p0_values_hit_target(self, table400):
        for p0 in (0.5, 0.7):
            sigma = solve_sigma(p0, table400, tol=1e-4)
            dist = threshold_probs(sigma, table400)
            assert abs(dist.class_probs[0] - p0) <= 1e-4

    def test_bin0_mass_decreases_in_sigma(self, table400):
        sigmas = np.geomspace(10.0, 1e6, 40)
        masses = [threshold_probs(s, table400).class_probs[0] for s in sigmas]
        assert np.all(np.diff(masses) <= 1e-12)

    def test_infeasible_p0_reports_range(self, table400):
        lo, hi = achievable_p0_range(table400)
        assert lo == pytest.approx(0.4)  # 400 / 1000
        with pytest.raises(InfeasibleP0Error) as err:
            solve_sigma(0.2, table400)
        assert err.value.achievable[0] >= 0.2

    def test_p0_near_one_concentrates(self, table400):
        sigma = solve_sigma(0.999, table400, tol=1e-5)
        dist = threshold_probs(sigma, table400)
        assert dist.survival[1] < 2e-3

    def test_heavier_tail_for_smaller_p0(self, table400):
        d5 = fit_threshold_distribution(0.5, table400)
        d7 = fit_threshold_distribution(0.7, table400)
        assert np.all(d7.survival[1:] < d5.survival[1:])

    def test_p0_out_of_range(self, table400):
        with pytest.raises(ValueError):
            solve_sigma(0.0, table400)
        with pytest.raises(ValueError):
            solve_sigma(1.0, table400)


class TestDegenerate:
    def test_p0_equal_one(self, table400):
        dist = fit_threshold_distribution(1.0, table400)
        assert dist.sigma == 0.0
        assert dist.class_probs[0] == 1.0
        assert np.all(dist.survival[1:] == 0.0)

    def test_matches_table(self, table400):
        dist = degenerate_distribution(table400)
        assert dist.matches_table(table400)


class TestSampling:
    def test_single_bin_always_class_zero(self):
        table = distance_classes(make_grid(3, 3, 400.0), 250.0)
        dist = fit_threshold_distribution(1.0, table)
        rng = np.random.default_rng(0)
        assert np.all(dist.sample_classes(rng, 1000) == 0)

    def test_seeded_sampling_is_deterministic(self, table400):
        dist = fit_threshold_distribution(0.7, table400)
        a = dist.sample_classes(np.random.default_rng(42), 500)
        b = dist.sample_classes(np.random.default_rng(42), 500)
        assert np.array_equal(a, b)

    def test_empirical_bin0_frequency(self, table400):
        # binomial 3-sigma bound at n=1e6, p=0.7 is ~0.0014
        dist = fit_threshold_distribution(0.7, table400)
        rng = np.random.default_rng(7)
        samples = dist.sample_classes(rng, 1_000_000)
        freq = float(np.mean(samples == 0))
        assert abs(freq - dist.class_probs[0]) <= 0.002

    def test_all_bins_hit(self, table400):
        dist = fit_threshold_distribution(0.5, table400)
        rng = np.random.default_rng(3)
        samples = dist.sample_classes(rng, 200_000)
        counts = np.bincount(samples, minlength=dist.num_classes)
        assert np.all(counts > 0)
        freqs = counts / counts.sum()
        assert np.allclose(freqs, dist.class_probs, atol=0.005)
