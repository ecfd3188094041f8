"""Synthetic experiments with planted demand.

A 12x12 grid carries four kinds of cells: high-demand cluster centers that
are always stocked, the cells bordering them, isolated low-demand cells far
from any cluster, and empty cells. Availability outside the centers is
switched on or off per cell per day with probability p, users walk to the
nearest stocked cell within a sampled threshold, and the resulting censored
trip logs feed the estimators so their errors against the planted rates can
be tabulated across p.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
import pandas as pd

from .choice import ThresholdDistribution, fit_threshold_distribution
from .em import EMConfig, TripSet, naive_estimate, run_em
from .grid import DistanceClassTable, GridSpec, _meters_per_degree, build_grid, distance_classes
from .timeline import PRE_OPEN, AvailabilityTimeline, PeriodScheme, build_timeline


class CellKind(IntEnum):
    NONE = 0
    CLUSTER_CENTER = 1
    BORDER = 2
    ISOLATED = 3


KIND_RATES = {
    CellKind.CLUSTER_CENTER: 10.0,
    CellKind.BORDER: 5.0,
    CellKind.ISOLATED: 2.0,
    CellKind.NONE: 0.0,
}

KIND_LABELS = {
    CellKind.CLUSTER_CENTER: "cluster_center",
    CellKind.BORDER: "border",
    CellKind.ISOLATED: "isolated",
    CellKind.NONE: "no_demand",
}

# fixed stock for "always available" cells; pickups never deplete it
INFINITE_STOCK = 400

_CLUSTER_CENTERS = ((2, 2), (2, 9), (9, 3))
_ISOLATED = ((0, 6), (5, 11), (6, 6), (11, 0), (11, 11))


@dataclass(frozen=True)
class CellLayout:
    rows: int
    cols: int
    kind: np.ndarray       # (m,) CellKind values
    true_rate: np.ndarray  # (m,) arrivals per period

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols

    def cells_of(self, kind: CellKind) -> np.ndarray:
        return np.flatnonzero(self.kind == kind)

    def to_frame(self) -> pd.DataFrame:
        idx = np.arange(self.num_cells)
        return pd.DataFrame(
            {
                "cell": idx + 1,
                "row": idx // self.cols,
                "col": idx % self.cols,
                "kind": [KIND_LABELS[CellKind(k)] for k in self.kind],
                "true_rate": self.true_rate,
            }
        )


@dataclass(frozen=True)
class ExperimentConfig:
    rows: int = 12
    cols: int = 12
    cell_width: float = 400.0
    days: int = 30
    replications: int = 10
    p_values: tuple = tuple(np.round(np.arange(0.0, 1.01, 0.1), 1))
    p0: float = 0.7
    dist_max: float = 1000.0
    seed: int = 7
    em: EMConfig = field(default_factory=EMConfig)

    def __post_init__(self):
        if any(p < 0 or p > 1 for p in self.p_values):
            raise ValueError("availability probabilities must lie in [0, 1]")
        if self.replications < 1:
            raise ValueError("need at least one replication")


def layout_grid(rows: int = 12, cols: int = 12) -> CellLayout:
    """Planted demand map: cluster centers with their 8-neighborhood as
    border cells, scattered isolated cells, everything else empty."""
    kind = np.zeros(rows * cols, dtype=np.int64)
    for r, c in _CLUSTER_CENTERS:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols and (dr, dc) != (0, 0):
                    kind[rr * cols + cc] = CellKind.BORDER
    for r, c in _CLUSTER_CENTERS:
        kind[r * cols + c] = CellKind.CLUSTER_CENTER
    for r, c in _ISOLATED:
        kind[r * cols + c] = CellKind.ISOLATED
    rate = np.array([KIND_RATES[CellKind(k)] for k in kind])
    return CellLayout(rows=rows, cols=cols, kind=kind, true_rate=rate)


def synthetic_grid(rows: int, cols: int, cell_width: float) -> GridSpec:
    """A grid at an arbitrary fixed location for simulation runs."""
    per_lat, per_lon = _meters_per_degree(41.8)
    return GridSpec(
        origin_lat=41.8,
        origin_lon=-71.45,
        cell_width=cell_width,
        rows=rows,
        cols=cols,
        meters_per_deg_lat=per_lat,
        meters_per_deg_lon=per_lon,
    )


@dataclass
class SimulatedDays:
    trips: TripSet
    events: tuple  # (day, time_s, cell, delta) arrays
    arrivals: np.ndarray  # (m,) total true arrivals over all days
    period_length: float = 3600.0


def simulate_days(
    layout: CellLayout,
    table: DistanceClassTable,
    p: float,
    dist: ThresholdDistribution,
    days: int,
    rng: np.random.Generator,
) -> SimulatedDays:
    """Generate trips and availability for `days` independent days.

    Cluster centers are stocked every day; every other cell is stocked for
    the whole day with probability p. Stocked cells hold a large constant
    stock that pickups do not deplete. Each arrival samples a threshold
    class and takes a uniformly chosen vehicle from the nearest stocked
    cells within it, or leaves unobserved.
    """
    m = layout.num_cells
    L = table.num_classes
    centers = layout.kind == CellKind.CLUSTER_CENTER
    period_len = 3600.0

    ev_day, ev_time, ev_cell, ev_delta = [], [], [], []
    t_day, t_time, t_cell = [], [], []
    arrivals_total = np.zeros(m, dtype=np.int64)

    for day in range(days):
        stocked = centers | (rng.random(m) < p)
        stocked_cells = np.flatnonzero(stocked)

        # nearest stocked class per cell from the (symmetric) neighbor lists
        nonempty = np.zeros((m, L), dtype=np.int64)
        for c in stocked_cells:
            rows_, cls_ = table.neighborhood(int(c))
            nonempty[rows_, cls_] += 1
        has_any = nonempty.sum(axis=1) > 0
        nearest = np.where(has_any, np.argmax(nonempty > 0, axis=1), L)

        counts = rng.poisson(layout.true_rate)
        arrivals_total += counts
        cells_rep = np.repeat(np.arange(m), counts)
        total = len(cells_rep)
        times = rng.random(total) * period_len
        thresh = dist.sample_classes(rng, total)

        found = thresh >= nearest[cells_rep]
        for i in np.flatnonzero(counts):
            sel = np.flatnonzero((cells_rep == i) & found)
            if not len(sel):
                continue
            cand = table.neighbors(int(i), int(nearest[i]))
            cand = cand[stocked[cand]]
            picks = cand[rng.integers(0, len(cand), size=len(sel))]
            t_day.extend([day] * len(sel))
            t_time.extend(times[sel])
            t_cell.extend(picks)

        ev_day.extend([day] * len(stocked_cells) * 2)
        ev_time.extend([PRE_OPEN] * len(stocked_cells))
        ev_time.extend([period_len] * len(stocked_cells))
        ev_cell.extend(stocked_cells)
        ev_cell.extend(stocked_cells)
        ev_delta.extend([INFINITE_STOCK] * len(stocked_cells))
        ev_delta.extend([-INFINITE_STOCK] * len(stocked_cells))

    trips = TripSet(
        day=np.asarray(t_day, dtype=np.int64),
        time_s=np.asarray(t_time, dtype=float),
        period=np.zeros(len(t_day), dtype=np.int64),
        cell=np.asarray(t_cell, dtype=np.int64),
    )
    events = (
        np.asarray(ev_day, dtype=np.int64),
        np.asarray(ev_time, dtype=float),
        np.asarray(ev_cell, dtype=np.int64),
        np.asarray(ev_delta, dtype=np.int64),
    )
    return SimulatedDays(trips=trips, events=events, arrivals=arrivals_total, period_length=period_len)


ALGORITHMS = ("em", "naive", "realized")
CATEGORIES = ("all", "cluster_center", "border", "isolated", "no_demand")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    layout: CellLayout
    per_rep: pd.DataFrame   # p, rep, algorithm, category, median_error, max_error
    summary: pd.DataFrame   # p, algorithm, category pooled over cells x reps

    def pooled(self, algorithm: str, category: str, p: float, measure: str) -> float:
        s = self.summary
        row = s[(s.algorithm == algorithm) & (s.category == category) & (np.isclose(s.p, p))]
        return float(row[measure].iloc[0])


def _category_masks(layout: CellLayout) -> dict[str, np.ndarray]:
    masks = {"all": np.ones(layout.num_cells, dtype=bool)}
    for kind, label in KIND_LABELS.items():
        masks[label] = layout.kind == kind
    return masks


def run_experiment(cfg: ExperimentConfig, progress=None, threads: int = 1) -> ExperimentResult:
    """Simulate, estimate and score every (p, replication) pair.

    Non-estimable cells count as estimate zero in the error tables: with no
    usable availability the tool reports no demand there, and the error
    tables measure what a planner would read off. Replications may run on a
    thread pool; each owns an independently seeded generator and the
    aggregation order is fixed, so results do not depend on `threads`.
    """
    layout = layout_grid(cfg.rows, cfg.cols)
    grid = synthetic_grid(cfg.rows, cfg.cols, cfg.cell_width)
    table = distance_classes(grid, cfg.dist_max)
    dist = fit_threshold_distribution(cfg.p0, table)
    masks = _category_masks(layout)
    periods = PeriodScheme.single(3600.0)

    def one(job):
        p_idx, p, rep = job
        rng = np.random.default_rng([cfg.seed, p_idx, rep])
        sim = simulate_days(layout, table, p, dist, cfg.days, rng)
        timeline = build_timeline(sim.events, layout.num_cells, cfg.days, periods)
        rates, _ = run_em(sim.trips, timeline, table, dist, cfg.em)
        naive = naive_estimate(sim.trips, timeline, table, cfg.em.alpha_floor)
        estimates = {
            "em": rates.filled[0],
            "naive": naive.filled[0],
            "realized": sim.arrivals / cfg.days,
        }
        return {alg: np.abs(est - layout.true_rate) for alg, est in estimates.items()}

    jobs = [
        (p_idx, p, rep)
        for p_idx, p in enumerate(cfg.p_values)
        for rep in range(cfg.replications)
    ]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            errors = list(pool.map(one, jobs))
    else:
        errors = []
        for job in jobs:
            errors.append(one(job))
            if progress is not None:
                progress(job[1], job[2])

    rep_rows = []
    pooled_errors: dict[tuple, list] = {}
    for (p_idx, p, rep), err_by_alg in zip(jobs, errors):
        for alg, err in err_by_alg.items():
            for cat, mask in masks.items():
                vals = err[mask]
                rep_rows.append(
                    {
                        "p": p, "rep": rep, "algorithm": alg, "category": cat,
                        "median_error": float(np.median(vals)),
                        "max_error": float(np.max(vals)),
                    }
                )
                pooled_errors.setdefault((p, alg, cat), []).append(vals)

    summary_rows = []
    for (p, alg, cat), chunks in pooled_errors.items():
        vals = np.concatenate(chunks)
        summary_rows.append(
            {
                "p": p, "algorithm": alg, "category": cat,
                "median_error": float(np.median(vals)),
                "max_error": float(np.max(vals)),
            }
        )
    return ExperimentResult(
        config=cfg,
        layout=layout,
        per_rep=pd.DataFrame(rep_rows),
        summary=pd.DataFrame(summary_rows),
    )


def trend_checks(result: ExperimentResult) -> dict[str, bool]:
    """The qualitative patterns the experiment should reproduce; exact table
    digits depend on seeds and are not asserted anywhere."""
    checks: dict[str, bool] = {}
    per = result.per_rep
    cfg = result.config

    mid_ps = [p for p in cfg.p_values if 0.1 - 1e-9 <= p <= 0.5 + 1e-9]
    majority_ok = True
    for p in mid_ps:
        sel = per[(np.isclose(per.p, p)) & (per.category == "border")]
        em = sel[sel.algorithm == "em"].sort_values("rep")["max_error"].to_numpy()
        nv = sel[sel.algorithm == "naive"].sort_values("rep")["max_error"].to_numpy()
        wins = int(np.sum(em < nv))
        checks[f"border_em_beats_naive_p{p:g}"] = wins >= int(np.ceil(0.7 * len(em)))
        majority_ok &= checks[f"border_em_beats_naive_p{p:g}"]
    if mid_ps:
        checks["border_em_beats_naive_majority"] = majority_ok

    for alg in ("em", "naive"):
        s = result.summary
        rows = s[(s.algorithm == alg) & (s.category == "all")].sort_values("p")
        errs = rows["max_error"].to_numpy()
        # non-increasing on average: the mean step is not positive
        checks[f"{alg}_error_decreases_with_p"] = bool(
            len(errs) < 2 or (errs[-1] - errs[0]) / (len(errs) - 1) <= 1e-9
        )

    if any(np.isclose(p, 0.0) for p in cfg.p_values):
        naive0 = result.pooled("naive", "no_demand", 0.0, "max_error")
        em0 = result.pooled("em", "no_demand", 0.0, "max_error")
        checks["p0_naive_no_demand_zero"] = naive0 == 0.0
        checks["p0_em_overestimates_no_demand"] = em0 > 0.0
    return checks


@dataclass
class SensitivityDataset:
    trips: TripSet
    timeline: AvailabilityTimeline
    table: DistanceClassTable
    dist: ThresholdDistribution
    grid: GridSpec


def two_point_fixture(days: int = 50, p0: float = 0.7, dist_max: float = 1000.0) -> SensitivityDataset:
    """Two active cells 600 m apart longitudinally, ten trips per day each,
    one vehicle constantly present in both; the auto-sized grid around them
    is 7x8 cells."""
    lat = 41.83
    lon0 = -71.42
    per_lat, per_lon = _meters_per_degree(lat)
    points = [(lat, lon0), (lat, lon0 + 600.0 / per_lon)]
    grid = build_grid(points, cell_width=400.0, padding=1200.0)
    table = distance_classes(grid, dist_max)
    dist = fit_threshold_distribution(p0, table)

    cell_a = grid.locate(*points[0])
    cell_b = grid.locate(*points[1])
    periods = PeriodScheme.single(3600.0)

    trip_times = (np.arange(10) + 0.5) * 360.0
    t_day, t_time, t_cell = [], [], []
    ev_day, ev_time, ev_cell, ev_delta = [], [], [], []
    for day in range(days):
        for cell in (cell_a, cell_b):
            t_day.extend([day] * len(trip_times))
            t_time.extend(trip_times)
            t_cell.extend([cell] * len(trip_times))
            ev_day.append(day)
            ev_time.append(PRE_OPEN)
            ev_cell.append(cell)
            ev_delta.append(1)

    trips = TripSet(
        day=np.asarray(t_day, dtype=np.int64),
        time_s=np.asarray(t_time, dtype=float),
        period=np.zeros(len(t_day), dtype=np.int64),
        cell=np.asarray(t_cell, dtype=np.int64),
    )
    timeline = build_timeline(
        (
            np.asarray(ev_day, dtype=np.int64),
            np.asarray(ev_time, dtype=float),
            np.asarray(ev_cell, dtype=np.int64),
            np.asarray(ev_delta, dtype=np.int64),
        ),
        grid.num_cells,
        days,
        periods,
    )
    return SensitivityDataset(trips=trips, timeline=timeline, table=table, dist=dist, grid=grid)


def sensitivity_study(
    ds: SensitivityDataset,
    gammas,
    em: EMConfig | None = None,
) -> pd.DataFrame:
    """Difference of the converged rates from the trip-initialized run.

    Runs the estimator once per gamma with starting rates blending the flat
    level (gamma) and the observed trip rates (1 - gamma); reports the
    largest, 99th-percentile and median absolute difference from the
    gamma = 0 estimate over estimable cells only.
    """
    gammas = [float(g) for g in gammas]
    if not any(g == 0.0 for g in gammas):
        gammas = [0.0] + gammas
    base = em or EMConfig()

    from .timeline import nearest_profile
    from .em import compute_pi

    profile = nearest_profile(ds.timeline, ds.table)
    pi = compute_pi(ds.trips, ds.timeline, ds.table, ds.dist)

    def run(gamma: float):
        cfg = EMConfig(
            init_mode="gamma", gamma=gamma, tol=base.tol,
            max_iters=base.max_iters, alpha_floor=base.alpha_floor,
        )
        rates, _ = run_em(ds.trips, ds.timeline, ds.table, ds.dist, cfg, profile=profile, pi=pi)
        return rates

    ref = run(0.0)
    est = ref.estimable
    rows = []
    for g in gammas:
        rates = run(g) if g != 0.0 else ref
        diff = np.abs(rates.mu[est] - ref.mu[est])
        rows.append(
            {
                "gamma": g,
                "largest_diff": float(np.max(diff)) if diff.size else 0.0,
                "p99_diff": float(np.percentile(diff, 99)) if diff.size else 0.0,
                "median_diff": float(np.median(diff)) if diff.size else 0.0,
                "estimable_cells": int(np.count_nonzero(est)),
            }
        )
    return pd.DataFrame(rows)
