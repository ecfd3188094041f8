import math

import numpy as np
import pytest

from demandgrid.choice import fit_threshold_distribution
from demandgrid.em import EMConfig
from demandgrid.grid import distance_classes
from demandgrid.simulate import (
    CellKind,
    ExperimentConfig,
    layout_grid,
    run_experiment,
    sensitivity_study,
    simulate_days,
    synthetic_grid,
    trend_checks,
    two_point_fixture,
)


@pytest.fixture(scope="module")
def layout():
    return layout_grid()


@pytest.fixture(scope="module")
def table():
    return distance_classes(synthetic_grid(12, 12, 400.0), 1000.0)


@pytest.fixture(scope="module")
def dist(table):
    return fit_threshold_distribution(0.7, table)


class TestLayout:
    def test_rates_by_kind(self, layout):
        assert np.all(layout.true_rate[layout.kind == CellKind.CLUSTER_CENTER] == 10.0)
        assert np.all(layout.true_rate[layout.kind == CellKind.BORDER] == 5.0)
        assert np.all(layout.true_rate[layout.kind == CellKind.ISOLATED] == 2.0)
        assert np.all(layout.true_rate[layout.kind == CellKind.NONE] == 0.0)

    def test_borders_are_8_adjacent_to_a_center(self, layout):
        centers = {(int(c) // 12, int(c) % 12) for c in layout.cells_of(CellKind.CLUSTER_CENTER)}
        for cell in layout.cells_of(CellKind.BORDER):
            r, c = int(cell) // 12, int(cell) % 12
            assert any(abs(r - cr) <= 1 and abs(c - cc) <= 1 for cr, cc in centers)

    def test_isolated_beyond_reach_of_centers(self, layout):
        centers = layout.cells_of(CellKind.CLUSTER_CENTER)
        for cell in layout.cells_of(CellKind.ISOLATED):
            r, c = int(cell) // 12, int(cell) % 12
            for ctr in centers:
                cr, cc = int(ctr) // 12, int(ctr) % 12
                assert 400.0 * math.hypot(r - cr, c - cc) > 1000.0

    def test_counts(self, layout):
        assert len(layout.cells_of(CellKind.CLUSTER_CENTER)) == 3
        assert len(layout.cells_of(CellKind.BORDER)) == 24
        assert len(layout.cells_of(CellKind.ISOLATED)) == 5


class TestSimulateDays:
    def test_deterministic_under_seed(self, layout, table, dist):
        a = simulate_days(layout, table, 0.4, dist, 5, np.random.default_rng(11))
        b = simulate_days(layout, table, 0.4, dist, 5, np.random.default_rng(11))
        assert np.array_equal(a.trips.cell, b.trips.cell)
        assert np.array_equal(a.trips.time_s, b.trips.time_s)
        assert np.array_equal(a.arrivals, b.arrivals)
        assert all(np.array_equal(x, y) for x, y in zip(a.events, b.events))

    def test_full_availability_trips_equal_arrivals_in_place(self, layout, table, dist):
        sim = simulate_days(layout, table, 1.0, dist, 3, np.random.default_rng(2))
        assert len(sim.trips) == sim.arrivals.sum()
        counts = np.bincount(sim.trips.cell, minlength=144)
        assert np.array_equal(counts, sim.arrivals)

    def test_zero_availability_only_near_centers(self, layout, table, dist):
        sim = simulate_days(layout, table, 0.0, dist, 5, np.random.default_rng(3))
        centers = set(layout.cells_of(CellKind.CLUSTER_CENTER).tolist())
        assert set(sim.trips.cell.tolist()) <= centers
        # lost demand: fewer trips than arrivals
        assert len(sim.trips) < sim.arrivals.sum()

    def test_expected_daily_trip_mass_at_full_availability(self, layout, table, dist):
        days = 30
        sim = simulate_days(layout, table, 1.0, dist, days, np.random.default_rng(4))
        total_rate = layout.true_rate.sum()  # 160 per day
        mean = total_rate * days
        sd = math.sqrt(mean)
        assert abs(len(sim.trips) - mean) <= 3 * sd


class TestExperiment:
    def test_p_one_em_equals_naive(self):
        cfg = ExperimentConfig(p_values=(1.0,), replications=2, days=10, seed=3)
        res = run_experiment(cfg)
        for cat in ("all", "cluster_center", "border", "isolated", "no_demand"):
            for measure in ("median_error", "max_error"):
                em = res.pooled("em", cat, 1.0, measure)
                nv = res.pooled("naive", cat, 1.0, measure)
                assert em == pytest.approx(nv, abs=1e-6)

    def test_deterministic(self):
        cfg = ExperimentConfig(p_values=(0.3,), replications=2, days=5, seed=9)
        r1 = run_experiment(cfg)
        r2 = run_experiment(cfg)
        assert r1.summary.equals(r2.summary)
        assert r1.per_rep.equals(r2.per_rep)

    def test_threads_do_not_change_results(self):
        cfg = ExperimentConfig(p_values=(0.2, 0.8), replications=2, days=5, seed=9)
        r1 = run_experiment(cfg, threads=1)
        r2 = run_experiment(cfg, threads=2)
        assert r1.summary.equals(r2.summary)

    def test_trend_checks_px(self):
        cfg = ExperimentConfig(p_values=(0.0, 1.0), replications=2, days=8, seed=5)
        res = run_experiment(cfg)
        checks = trend_checks(res)
        assert checks["p0_naive_no_demand_zero"]
        assert checks["p0_em_overestimates_no_demand"]

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ExperimentConfig(p_values=(1.5,))
        with pytest.raises(ValueError):
            ExperimentConfig(replications=0)


class TestSensitivity:
    def test_fixture_shape(self):
        ds = two_point_fixture(days=10)
        assert (ds.grid.rows, ds.grid.cols) == (7, 8)
        assert len(ds.trips) == 10 * 2 * 10

    def test_gamma_zero_row_exactly_zero(self):
        ds = two_point_fixture(days=10)
        table = sensitivity_study(ds, [0.0, 0.5])
        row0 = table[table.gamma == 0.0].iloc[0]
        assert row0.largest_diff == 0.0
        assert row0.median_diff == 0.0

    def test_reference_included_when_missing(self):
        ds = two_point_fixture(days=5)
        table = sensitivity_study(ds, [0.5])
        assert 0.0 in table.gamma.tolist()

    def test_gamma_zero_matches_naive_on_fixture(self):
        # trip-rate initialization cannot move mass off the active cells
        ds = two_point_fixture(days=10)
        from demandgrid.em import naive_estimate, run_em

        cfg = EMConfig(init_mode="trip")
        rates, _ = run_em(ds.trips, ds.timeline, ds.table, ds.dist, cfg)
        naive = naive_estimate(ds.trips, ds.timeline, ds.table)
        both = rates.estimable & naive.estimable
        assert np.allclose(rates.mu[both], naive.mu[both], atol=1e-9)

    def test_excludes_low_alpha_cells(self):
        ds = two_point_fixture(days=5)
        table = sensitivity_study(ds, [0.0, 1.0])
        from demandgrid.timeline import alpha_matrix, nearest_profile

        alpha = alpha_matrix(nearest_profile(ds.timeline, ds.table), ds.dist)
        assert table.estimable_cells.iloc[0] == int((alpha >= 0.01).sum())
        assert table.estimable_cells.iloc[0] < ds.grid.num_cells
