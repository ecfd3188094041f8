import numpy as np
import pytest

from demandgrid.em import RateMatrix
from demandgrid.pipeline import (
    CATEGORY_INSUFFICIENT,
    CATEGORY_LOW_SERVICE,
    CATEGORY_OK,
    EstimateParams,
    ParamError,
    categorize,
)


def rates(mu, estimable=None):
    mu = np.asarray(mu, dtype=float)
    est = np.asarray(estimable, dtype=bool) if estimable is not None else ~np.isnan(mu)
    return RateMatrix(mu=np.where(est, mu, np.nan), estimable=est)


class TestCategorize:
    def test_twice_observed_is_low_service(self):
        cat = categorize(rates([[4.0]]), np.array([[1.5]]))
        assert cat[0, 0] == CATEGORY_LOW_SERVICE  # 4.0 >= 3.0

    def test_below_twice_observed_is_ok(self):
        cat = categorize(rates([[2.0]]), np.array([[1.5]]))
        assert cat[0, 0] == CATEGORY_OK  # 2.0 < 3.0

    def test_exactly_twice_is_low_service(self):
        cat = categorize(rates([[3.0]]), np.array([[1.5]]))
        assert cat[0, 0] == CATEGORY_LOW_SERVICE

    def test_non_estimable_is_insufficient(self):
        cat = categorize(rates([[np.nan]], estimable=[[False]]), np.array([[0.0]]))
        assert cat[0, 0] == CATEGORY_INSUFFICIENT

    def test_no_demand_no_trips_stays_ok(self):
        cat = categorize(rates([[0.0]]), np.array([[0.0]]))
        assert cat[0, 0] == CATEGORY_OK

    def test_demand_without_trips_is_flagged(self):
        cat = categorize(rates([[0.5]]), np.array([[0.0]]))
        assert cat[0, 0] == CATEGORY_LOW_SERVICE


class TestParams:
    def test_defaults_match_shipped_app(self):
        p = EstimateParams()
        assert p.cell_width == 400.0
        assert p.p0 == 0.7
        assert p.dist_max == 1000.0
        assert p.periods == "hourly"
        assert p.alpha_floor == 0.01
        p.validate()

    def test_field_errors_collected(self):
        p = EstimateParams(cell_width=-1, p0=1.5, rebalance="magic")
        with pytest.raises(ParamError) as err:
            p.validate()
        assert set(err.value.errors) == {"cell_width", "p0", "rebalance"}

    def test_round_trip_dict(self):
        p = EstimateParams(p0=0.5, service_hours=(6.0, 22.0))
        again = EstimateParams.from_dict(p.to_dict())
        assert again == p

    def test_period_scheme_from_window(self):
        p = EstimateParams(service_hours=(6.0, 22.0))
        scheme = p.period_scheme()
        assert scheme.num_periods == 16
        assert scheme.boundaries[0] == 6 * 3600.0

    def test_custom_period_count(self):
        p = EstimateParams(periods="4", service_hours=(8.0, 20.0))
        scheme = p.period_scheme()
        assert scheme.num_periods == 4
        assert scheme.lengths[0] == pytest.approx(3 * 3600.0)
