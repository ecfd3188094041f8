"""Demand-rate estimation from censored trips.

Observed trips only tell us where a vehicle was picked up, not where the
user came from or how many users found nothing within reach. Arrivals in
each (period, cell) are modeled as independent Poisson streams; a trip's
origin cell is a latent variable whose posterior weight combines the
current rate estimates with the probability that a user arriving in that
cell at that instant would have chosen the observed pickup cell. Rates are
then re-estimated from the weights, inflated by the probability an arrival
is observed at all, and the two steps alternate to a fixed point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .choice import ThresholdDistribution
from .grid import DistanceClassTable
from .timeline import (
    AvailabilityTimeline,
    NearestBikeProfile,
    NeighborhoodState,
    alpha_matrix,
    nearest_profile,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHA_FLOOR = 1e-2
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 1000

NEG_INF = float("-inf")


class DataInconsistencyError(ValueError):
    """Trip data contradicts the availability timeline."""


@dataclass(frozen=True)
class TripSet:
    """Observed trips as parallel arrays, sorted by (day, time).

    cell is the pickup cell; period is the index of the time period
    containing each trip's start time.
    """

    day: np.ndarray
    time_s: np.ndarray
    period: np.ndarray
    cell: np.ndarray

    def __post_init__(self):
        n = len(self.day)
        if not (len(self.time_s) == len(self.period) == len(self.cell) == n):
            raise ValueError("trip arrays must have equal length")
        order = np.lexsort((self.cell, self.time_s, self.day))
        for name in ("day", "time_s", "period", "cell"):
            object.__setattr__(self, name, np.asarray(getattr(self, name))[order])

    def __len__(self) -> int:
        return len(self.day)

    def subset(self, mask: np.ndarray) -> "TripSet":
        return TripSet(
            day=self.day[mask],
            time_s=self.time_s[mask],
            period=self.period[mask],
            cell=self.cell[mask],
        )


@dataclass(frozen=True)
class PiMatrix:
    """Sparse per-trip pickup-choice probabilities, CSR over trips.

    Row x holds, for each cell i within reach of trip x's pickup cell, the
    probability that a user arriving in i at the trip's time would have
    picked the observed vehicle cell; zero entries are omitted.
    """

    indptr: np.ndarray
    cells: np.ndarray
    vals: np.ndarray

    @property
    def num_trips(self) -> int:
        return len(self.indptr) - 1

    def row(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[x], self.indptr[x + 1]
        return self.cells[lo:hi], self.vals[lo:hi]


@dataclass(frozen=True)
class MembershipWeights:
    """E-step output: posterior origin-cell weights per trip (CSR like
    PiMatrix; rows sum to 1). fallback_trips counts trips whose candidate
    rates were all zero, for which weights fall back to the choice
    probabilities alone."""

    indptr: np.ndarray
    cells: np.ndarray
    vals: np.ndarray
    fallback_trips: int


@dataclass
class RateMatrix:
    """Estimated arrivals per period per cell per day.

    Non-estimable entries (availability too low to divide by) are NaN and
    flagged False in `estimable`, never silently zero.
    """

    mu: np.ndarray         # (H, m)
    estimable: np.ndarray  # (H, m) bool

    @property
    def filled(self) -> np.ndarray:
        """mu with non-estimable entries as 0, for aggregation."""
        return np.where(self.estimable, self.mu, 0.0)


@dataclass(frozen=True)
class EMConfig:
    init_mode: str = "uniform"      # uniform | trip | gamma
    gamma: float = 1.0              # blend: 1 -> uniform, 0 -> trip rates
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    alpha_floor: float = DEFAULT_ALPHA_FLOOR

    def __post_init__(self):
        if self.init_mode not in ("uniform", "trip", "gamma"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def effective_gamma(self) -> float:
        return {"uniform": 1.0, "trip": 0.0}.get(self.init_mode, self.gamma)


@dataclass
class EMDiagnostics:
    iterations: int = 0
    converged: bool = False
    final_delta: float = float("nan")
    log_likelihood_trace: list = field(default_factory=list)
    orphan_trips: int = 0
    fallback_trips: int = 0
    alpha: np.ndarray | None = None
    trip_rate: np.ndarray | None = None
    avail_frac: np.ndarray | None = None


def pi_vector(
    pickup_cell: int,
    counts: np.ndarray,
    table: DistanceClassTable,
    dist: ThresholdDistribution,
) -> tuple[np.ndarray, np.ndarray]:
    """Choice probabilities for one trip given a left-limit snapshot.

    For each candidate origin cell i within dist_max of the pickup cell:
    find i's nearest distance class holding any vehicle; the probability is
    the survival of the pickup distance times the share of those nearest
    vehicles sitting in the pickup cell, and zero when the pickup cell is
    not among i's nearest stocked cells. Returns (cells, probs) with zero
    entries dropped.
    """
    cnt_j = int(counts[pickup_cell])
    if cnt_j <= 0:
        raise DataInconsistencyError(
            f"trip departs cell {pickup_cell} which holds no vehicle"
        )
    cand, ccls = table.neighborhood(pickup_cell)
    L = table.num_classes
    # vehicles per class around each candidate, from the raw snapshot
    B = np.zeros((len(cand), L), dtype=np.int64)
    for r, i in enumerate(cand):
        cells_i, cls_i = table.neighborhood(int(i))
        np.add.at(B[r], cls_i, counts[cells_i])
    return _pi_from_class_counts(cand, ccls, B, cnt_j, dist.survival)


def _pi_from_class_counts(cand, ccls, B, cnt_j, survival):
    lstar = np.argmax(B > 0, axis=1)
    nearest_total = B[np.arange(len(cand)), lstar]
    pi = np.where(lstar == ccls, survival[lstar] * cnt_j / nearest_total, 0.0)
    keep = pi > 0
    return cand[keep], pi[keep]


def compute_pi(
    trips: TripSet,
    timeline: AvailabilityTimeline,
    table: DistanceClassTable,
    dist: ThresholdDistribution,
) -> PiMatrix:
    """Choice probabilities for every trip in one chronological sweep per day.

    The sweep state is the per-cell class counts maintained incrementally;
    events at exactly a trip's timestamp are not yet applied (left limit),
    so the trip's own vehicle is still present.
    """
    n = len(trips)
    survival = dist.survival
    counts_buf: list[np.ndarray] = []
    cells_buf: list[np.ndarray] = []
    vals_buf: list[np.ndarray] = []
    lengths = np.zeros(n, dtype=np.int64)

    x = 0
    for day in range(timeline.days):
        day_end = np.searchsorted(trips.day, day, side="right")
        if x >= day_end:
            continue
        state = NeighborhoodState(table)
        ev = timeline.events_of_day(day)
        ev_t, ev_c, ev_d = ev.time, ev.cell, ev.delta
        e, E = 0, len(ev_t)
        counts = state.counts
        bbc = state.bikes_by_class
        arange_cache: dict[int, np.ndarray] = {}
        while x < day_end:
            t = trips.time_s[x]
            j = int(trips.cell[x])
            while e < E and ev_t[e] < t:
                state.apply(int(ev_c[e]), int(ev_d[e]))
                e += 1
            cnt_j = counts[j]
            if cnt_j <= 0:
                raise DataInconsistencyError(
                    f"trip at day {day} t={float(t)} departs cell {j} "
                    "which holds no vehicle"
                )
            lo, hi = table.indptr[j], table.indptr[j + 1]
            cand = table.nbr_cell[lo:hi]
            ccls = table.nbr_class[lo:hi]
            B = bbc[cand]
            lstar = np.argmax(B > 0, axis=1)
            nc = len(cand)
            if nc not in arange_cache:
                arange_cache[nc] = np.arange(nc)
            nearest_total = B[arange_cache[nc], lstar]
            pi = np.where(lstar == ccls, survival[lstar] * (cnt_j / nearest_total), 0.0)
            keep = pi > 0
            kept_cells = cand[keep]
            cells_buf.append(kept_cells)
            vals_buf.append(pi[keep])
            lengths[x] = len(kept_cells)
            x += 1
        counts_buf.append(counts)

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    return PiMatrix(
        indptr=indptr,
        cells=np.concatenate(cells_buf) if cells_buf else np.zeros(0, dtype=np.int64),
        vals=np.concatenate(vals_buf) if vals_buf else np.zeros(0),
    )


def _entry_arrays(trips: TripSet, pi: PiMatrix, num_cells: int):
    """Flat helper arrays tying each sparse entry to its trip and period."""
    lengths = np.diff(pi.indptr)
    trip_of_entry = np.repeat(np.arange(pi.num_trips), lengths)
    hm = trips.period[trip_of_entry] * num_cells + pi.cells
    return trip_of_entry, hm


def e_step(trips: TripSet, pi: PiMatrix, rates: RateMatrix) -> MembershipWeights:
    """Posterior origin weights: choice probability times current rate,
    normalized per trip. Trips whose candidates all carry zero rate fall
    back to weights proportional to the choice probabilities alone."""
    H, m = rates.mu.shape
    trip_of_entry, hm = _entry_arrays(trips, pi, m)
    mu_flat = rates.filled.ravel()
    vals, denom, n_fallback = _estep_kernel(
        pi.vals, hm, trip_of_entry, pi.num_trips, mu_flat
    )
    return MembershipWeights(
        indptr=pi.indptr, cells=pi.cells, vals=vals, fallback_trips=n_fallback
    )


def _estep_kernel(pi_vals, hm, trip_of_entry, n, mu_flat):
    raw = pi_vals * mu_flat[hm]
    denom = np.bincount(trip_of_entry, weights=raw, minlength=n)
    zero_rows = denom == 0.0
    n_fallback = int(np.count_nonzero(zero_rows))
    if n_fallback:
        pi_sum = np.bincount(trip_of_entry, weights=pi_vals, minlength=n)
        entry_fb = zero_rows[trip_of_entry]
        raw = raw.copy()
        raw[entry_fb] = pi_vals[entry_fb]
        safe = np.where(zero_rows, pi_sum, denom)
    else:
        safe = denom
    vals = raw / safe[trip_of_entry]
    return vals, denom, n_fallback


def m_step(
    trips: TripSet,
    weights: MembershipWeights,
    alpha: np.ndarray,
    k: int,
    cfg: EMConfig,
) -> RateMatrix:
    """Rate update: per (period, cell), the average daily posterior trip
    mass divided by the probability an arrival there is observed."""
    H, m = alpha.shape
    estimable = alpha >= cfg.alpha_floor
    trip_of_entry, hm = _entry_arrays(trips, PiMatrix(weights.indptr, weights.cells, weights.vals), m)
    mass = np.bincount(hm, weights=weights.vals, minlength=H * m).reshape(H, m)
    mu = _mstep_kernel(mass, alpha, estimable, k)
    return RateMatrix(mu=mu, estimable=estimable)


def _mstep_kernel(mass, alpha, estimable, k):
    mu = np.full(alpha.shape, np.nan)
    mu[estimable] = mass[estimable] / (k * alpha[estimable])
    return mu


def observed_trip_rate(trips: TripSet, num_periods: int, num_cells: int, k: int) -> np.ndarray:
    """(H, m) observed trips per period per cell, averaged per day."""
    hm = trips.period * num_cells + trips.cell
    counts = np.bincount(hm, minlength=num_periods * num_cells)
    return counts.reshape(num_periods, num_cells) / k


def initial_rates(
    cfg: EMConfig,
    trip_rate: np.ndarray,
    estimable: np.ndarray,
    k: int,
) -> np.ndarray:
    """Starting rates: a blend of a flat per-period level and the observed
    trip rates. The flat level is scaled so each period's total initial mass
    matches its observed trip mass."""
    H, m = trip_rate.shape
    unif = np.zeros((H, m))
    for h in range(H):
        n_est = int(np.count_nonzero(estimable[h]))
        if n_est:
            # flat level whose total matches the period's observed trip mass
            unif[h, estimable[h]] = trip_rate[h].sum() / n_est
    tripwise = np.where(estimable, trip_rate, 0.0)
    g = cfg.effective_gamma()
    return g * unif + (1.0 - g) * tripwise


def log_likelihood(
    trips: TripSet,
    pi: PiMatrix,
    rates: RateMatrix,
    alpha: np.ndarray,
    k: int,
) -> float:
    """Observed-data log-likelihood (up to a constant) restricted to
    estimable cells: sum of log mixture densities at the trips minus the
    expected number of observed trips. -inf when any trip's mixture density
    is zero."""
    H, m = alpha.shape
    trip_of_entry, hm = _entry_arrays(trips, pi, m)
    mu_flat = rates.filled.ravel()
    denom = np.bincount(trip_of_entry, weights=pi.vals * mu_flat[hm], minlength=pi.num_trips)
    if len(trips) and (len(denom) == 0 or denom.min() <= 0.0):
        return NEG_INF
    penalty = k * float(np.sum(alpha[rates.estimable] * rates.mu[rates.estimable]))
    return float(np.sum(np.log(denom))) - penalty


def _ll_from_denom(denom, mu_flat, alpha_flat, est_flat, k) -> float:
    if len(denom) and denom.min() <= 0.0:
        return NEG_INF
    penalty = k * float(np.sum(alpha_flat[est_flat] * mu_flat[est_flat]))
    return float(np.sum(np.log(denom))) - penalty


def run_em(
    trips: TripSet,
    timeline: AvailabilityTimeline,
    table: DistanceClassTable,
    dist: ThresholdDistribution,
    cfg: EMConfig | None = None,
    profile: NearestBikeProfile | None = None,
    pi: PiMatrix | None = None,
    progress=None,
) -> tuple[RateMatrix, EMDiagnostics]:
    """Alternate the expectation and maximization steps to convergence.

    Choice probabilities are computed once (they depend only on the
    availability snapshots, not on the rates) and reused every iteration.
    Trips with no estimable candidate cell cannot inform any reported rate
    and are excluded, counted in the diagnostics. Stops when the largest
    absolute rate change over estimable cells is at most cfg.tol.
    """
    cfg = cfg or EMConfig()
    H = timeline.periods.num_periods
    m = timeline.num_cells
    k = timeline.days

    if profile is None:
        profile = nearest_profile(timeline, table)
    alpha = alpha_matrix(profile, dist)
    estimable = alpha >= cfg.alpha_floor
    diag = EMDiagnostics(
        alpha=alpha,
        avail_frac=profile.availability_fraction,
        trip_rate=observed_trip_rate(trips, H, m, k),
    )

    if pi is None:
        pi = compute_pi(trips, timeline, table, dist)

    # drop entries on non-estimable cells; trips left with no entries are
    # orphans (their origin cannot be attributed to any estimable cell)
    est_flat = estimable.ravel()
    trip_of_entry, hm = _entry_arrays(trips, pi, m)
    keep_entry = est_flat[hm]
    lengths = np.bincount(trip_of_entry[keep_entry], minlength=pi.num_trips)
    orphan = lengths == 0
    diag.orphan_trips = int(np.count_nonzero(orphan))
    if diag.orphan_trips:
        log.warning("%d trips have no estimable candidate cells", diag.orphan_trips)
        keep_entry &= ~orphan[trip_of_entry]
    em_trips = trips.subset(~orphan) if diag.orphan_trips else trips
    pi_vals = pi.vals[keep_entry]
    hm = hm[keep_entry]
    trip_of_entry = np.repeat(
        np.arange(len(em_trips)), lengths[~orphan] if diag.orphan_trips else lengths
    )
    n = len(em_trips)

    mu = initial_rates(cfg, diag.trip_rate, estimable, k)
    if n == 0:
        if len(trips):
            log.warning("no usable trips; returning zero rates on estimable cells")
        else:
            log.warning("no trips supplied; returning zero rates on estimable cells")
        mu = np.where(estimable, 0.0, np.nan)
        rates = RateMatrix(mu=mu, estimable=estimable)
        diag.log_likelihood_trace = [0.0]
        diag.converged = True
        return rates, diag

    alpha_flat = alpha.ravel()
    mu_flat = mu.ravel().copy()
    trip_period = em_trips.period

    # periods are fully independent, so one whose rates have settled can be
    # frozen: its likelihood contribution becomes a constant and its trips
    # drop out of further iterations
    period_active = np.zeros(H, dtype=bool)
    period_active[np.unique(trip_period)] = True
    a_pi, a_hm, a_toe, a_tp, a_n = pi_vals, hm, trip_of_entry, trip_period, n
    frozen_ll = 0.0

    def refilter():
        nonlocal a_pi, a_hm, a_toe, a_tp, a_n
        trip_keep = period_active[trip_period]
        entry_keep = trip_keep[trip_of_entry]
        a_pi = pi_vals[entry_keep]
        a_hm = hm[entry_keep]
        a_tp = trip_period[trip_keep]
        kept_lengths = np.bincount(trip_of_entry[entry_keep], minlength=n)[trip_keep]
        a_n = int(np.count_nonzero(trip_keep))
        a_toe = np.repeat(np.arange(a_n), kept_lengths)

    def partial_ll(denom, mu_vec, periods_mask) -> float:
        """Likelihood contribution of trips/cells in the masked periods."""
        sel = periods_mask[a_tp]
        d = denom[sel]
        if len(d) and d.min() <= 0.0:
            return NEG_INF
        cell_mask = est_flat & np.repeat(periods_mask, m)
        pen = k * float(np.sum(alpha_flat[cell_mask] * mu_vec[cell_mask]))
        return float(np.sum(np.log(d))) - pen

    trace: list[float] = []
    it = 0
    delta = float("inf")
    for it in range(1, cfg.max_iters + 1):
        w_vals, denom, n_fb = _estep_kernel(a_pi, a_hm, a_toe, a_n, mu_flat)
        diag.fallback_trips += n_fb
        # trace entry i-1 is the likelihood at the rates entering iteration i
        trace.append(frozen_ll + partial_ll(denom, mu_flat, period_active))
        mass = np.bincount(a_hm, weights=w_vals, minlength=H * m)
        upd = est_flat & np.repeat(period_active, m)
        mu_new = mu_flat.copy()
        mu_new[upd] = mass[upd] / (k * alpha_flat[upd])
        changes = np.abs(mu_new - mu_flat).reshape(H, m)
        delta = float(changes.max()) if upd.any() else 0.0
        mu_flat = mu_new
        if progress is not None:
            progress(it, delta)
        newly = (changes.max(axis=1) <= cfg.tol) & period_active
        if newly.any():
            fdenom = np.bincount(a_toe, weights=a_pi * mu_flat[a_hm], minlength=a_n)
            frozen_ll += partial_ll(fdenom, mu_flat, newly)
            period_active &= ~newly
            if not period_active.any():
                break
            refilter()

    if period_active.any():
        denom = np.bincount(a_toe, weights=a_pi * mu_flat[a_hm], minlength=a_n)
        trace.append(frozen_ll + partial_ll(denom, mu_flat, period_active))
    else:
        trace.append(frozen_ll)

    mu_out = np.full(H * m, np.nan)
    mu_out[est_flat] = mu_flat[est_flat]
    rates = RateMatrix(mu=mu_out.reshape(H, m), estimable=estimable)
    diag.iterations = it
    diag.converged = not period_active.any()
    diag.final_delta = delta
    diag.log_likelihood_trace = trace
    return rates, diag


def naive_estimate(
    trips: TripSet,
    timeline: AvailabilityTimeline,
    table: DistanceClassTable,
    alpha_floor: float = DEFAULT_ALPHA_FLOOR,
    profile: NearestBikeProfile | None = None,
) -> RateMatrix:
    """Per-cell trips divided by the fraction of time the cell itself is
    stocked; no substitution across cells. Cells stocked less than
    alpha_floor of the time are masked."""
    if profile is None:
        profile = nearest_profile(timeline, table)
    avail = profile.availability_fraction
    H, m = avail.shape
    rate = observed_trip_rate(trips, H, m, timeline.days)
    estimable = avail >= alpha_floor
    mu = np.full((H, m), np.nan)
    mu[estimable] = rate[estimable] / avail[estimable]
    return RateMatrix(mu=mu, estimable=estimable)


def period_trip_mass(rates: RateMatrix, alpha: np.ndarray, k: int) -> np.ndarray:
    """k * sum_i alpha * mu per period: the expected observed trip counts
    implied by the rates, for the conservation diagnostic."""
    prod = np.where(rates.estimable, alpha * rates.mu, 0.0)
    return k * prod.sum(axis=1)
