"""End-to-end estimation: trip file -> grid -> availability -> rates.

One ResultBundle carries everything a consumer needs: both estimators,
the censoring probabilities, observed rates, the service-level category per
(period, cell), and the configuration that produced them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from . import ingest
from .choice import ThresholdDistribution, fit_threshold_distribution
from .em import (
    DEFAULT_ALPHA_FLOOR,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    EMConfig,
    EMDiagnostics,
    RateMatrix,
    naive_estimate,
    run_em,
)
from .grid import GridSpec, build_grid, distance_classes
from .timeline import PeriodScheme, alpha_matrix, build_timeline, nearest_profile

CATEGORY_OK = "ok"
CATEGORY_LOW_SERVICE = "low_service"
CATEGORY_INSUFFICIENT = "insufficient_data"

LOW_SERVICE_FACTOR = 2.0


class ParamError(ValueError):
    """Invalid estimation parameters, with per-field messages."""

    def __init__(self, errors: dict[str, str]):
        self.errors = errors
        super().__init__("; ".join(f"{k}: {v}" for k, v in errors.items()))


@dataclass
class EstimateParams:
    """User-facing knobs of an estimation run (service and CLI defaults)."""

    cell_width: float = 400.0
    p0: float = 0.7
    dist_max: float = 1000.0
    periods: str = "hourly"            # "hourly" or an integer count per day
    service_hours: tuple = (0.0, 24.0)  # decimal hours, half-open window
    init_mode: str = "uniform"
    gamma: float = 1.0
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    alpha_floor: float = DEFAULT_ALPHA_FLOOR
    rebalance: str = "perfect"          # "perfect" | "derive"
    timezone: str | None = None
    padding: float | None = None        # grid padding in meters; default one cell
    seed: int = 0

    def validate(self) -> None:
        errors: dict[str, str] = {}
        if self.cell_width <= 0:
            errors["cell_width"] = f"must be positive, got {self.cell_width}"
        if not (0 < self.p0 <= 1):
            errors["p0"] = f"must lie in (0, 1], got {self.p0}"
        if self.dist_max < 0:
            errors["dist_max"] = f"must be non-negative, got {self.dist_max}"
        if self.periods != "hourly":
            try:
                n = int(self.periods)
                if n < 1:
                    raise ValueError
            except (TypeError, ValueError):
                errors["periods"] = f"must be 'hourly' or a positive integer, got {self.periods!r}"
        lo, hi = self.service_hours
        if not (0 <= lo < hi <= 24):
            errors["service_hours"] = f"window must satisfy 0 <= start < end <= 24, got {self.service_hours}"
        if self.init_mode not in ("uniform", "trip", "gamma"):
            errors["init_mode"] = f"must be uniform|trip|gamma, got {self.init_mode!r}"
        if not (0 <= self.gamma <= 1):
            errors["gamma"] = f"must lie in [0, 1], got {self.gamma}"
        if self.tol <= 0:
            errors["tol"] = "must be positive"
        if self.max_iters < 1:
            errors["max_iters"] = "must be at least 1"
        if self.alpha_floor < 0:
            errors["alpha_floor"] = "must be non-negative"
        if self.rebalance not in ("perfect", "derive"):
            errors["rebalance"] = f"must be perfect|derive, got {self.rebalance!r}"
        if errors:
            raise ParamError(errors)

    def period_scheme(self) -> PeriodScheme:
        lo, hi = self.service_hours
        if self.periods == "hourly":
            return PeriodScheme.hourly(lo, hi)
        n = int(self.periods)
        return PeriodScheme(boundaries=np.linspace(lo * 3600.0, hi * 3600.0, n + 1))

    def em_config(self) -> EMConfig:
        return EMConfig(
            init_mode=self.init_mode,
            gamma=self.gamma,
            tol=self.tol,
            max_iters=self.max_iters,
            alpha_floor=self.alpha_floor,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["service_hours"] = list(self.service_hours)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateParams":
        d = dict(d)
        if "service_hours" in d:
            d["service_hours"] = tuple(d["service_hours"])
        return cls(**d)


@dataclass
class ResultBundle:
    grid: GridSpec
    periods: PeriodScheme
    days: int
    day0: str
    params: EstimateParams
    distribution: ThresholdDistribution
    alpha: np.ndarray
    avail_frac: np.ndarray
    trip_rate: np.ndarray
    rates_em: RateMatrix
    rates_naive: RateMatrix
    diagnostics: EMDiagnostics
    ingest_report: dict = field(default_factory=dict)
    content_hash: str = ""

    @property
    def category(self) -> np.ndarray:
        return categorize(self.rates_em, self.trip_rate)


def categorize(rates: RateMatrix, trip_rate: np.ndarray) -> np.ndarray:
    """(H, m) service-level category per cell.

    insufficient_data where availability is too low to estimate;
    low_service where estimated demand is at least twice the observed trip
    rate (cells with neither demand nor trips stay ok so the flag keeps
    pointing at unmet demand).
    """
    H, m = trip_rate.shape
    cat = np.full((H, m), CATEGORY_OK, dtype=object)
    cat[~rates.estimable] = CATEGORY_INSUFFICIENT
    mu = rates.filled
    low = rates.estimable & (mu >= LOW_SERVICE_FACTOR * trip_rate) & ((mu > 0) | (trip_rate > 0))
    cat[low] = CATEGORY_LOW_SERVICE
    return cat


def hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def estimate_from_frame(
    df: pd.DataFrame,
    params: EstimateParams,
    report: ingest.IngestReport | None = None,
    content_hash: str = "",
    progress=None,
) -> ResultBundle:
    """Run the full estimation on parsed trips."""
    params.validate()
    if not len(df):
        raise ValueError("no valid trips after parsing")
    report = report or ingest.IngestReport(rows_read=len(df))

    def stage(name: str):
        if progress is not None:
            progress(stage=name)

    stage("grid")
    pts = np.column_stack(
        [
            np.concatenate([df["start_lat"].to_numpy(), df["end_lat"].to_numpy()]),
            np.concatenate([df["start_lon"].to_numpy(), df["end_lon"].to_numpy()]),
        ]
    )
    padding = params.padding if params.padding is not None else params.cell_width
    grid = build_grid(pts, params.cell_width, padding=padding)
    table = distance_classes(grid, params.dist_max)
    dist = fit_threshold_distribution(params.p0, table)

    stage("availability")
    day0, days = ingest.infer_horizon(df)
    if params.rebalance == "derive":
        ev_day, ev_t, ev_c, ev_d, avail_report = ingest.derive_availability(df, grid, day0, days)
        report.inserted_moves = avail_report.inserted_moves
    else:
        ev_day, ev_t, ev_c, ev_d = ingest.perfect_rebalance(df, grid, day0, days)
    periods = params.period_scheme()
    timeline = build_timeline((ev_day, ev_t, ev_c, ev_d), grid, days, periods)

    stage("binning")
    trips = ingest.bin_trips(df, grid, periods, day0, days, report)

    stage("profile")
    profile = nearest_profile(timeline, table)

    stage("em")
    def em_progress(it, delta):
        if progress is not None:
            progress(stage="em", iteration=it, delta=delta)

    cfg = params.em_config()
    rates_em, diag = run_em(
        trips, timeline, table, dist, cfg, profile=profile, progress=em_progress
    )
    stage("naive")
    rates_naive = naive_estimate(trips, timeline, table, cfg.alpha_floor, profile=profile)

    report.num_days = days
    report.first_day = str(day0.date())
    return ResultBundle(
        grid=grid,
        periods=periods,
        days=days,
        day0=str(day0.date()),
        params=params,
        distribution=dist,
        alpha=diag.alpha,
        avail_frac=diag.avail_frac,
        trip_rate=diag.trip_rate,
        rates_em=rates_em,
        rates_naive=rates_naive,
        diagnostics=diag,
        ingest_report=report.to_dict(),
        content_hash=content_hash,
    )


def estimate_from_file(
    path,
    params: EstimateParams,
    schema: dict | None = None,
    progress=None,
) -> ResultBundle:
    params.validate()
    if progress is not None:
        progress(stage="parse")
    df, report = ingest.parse_trips(path, schema=schema, timezone=params.timezone)
    return estimate_from_frame(
        df, params, report=report, content_hash=hash_file(path), progress=progress
    )
