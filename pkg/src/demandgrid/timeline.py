"""Per-cell vehicle availability over time.

A timeline is a set of per-day event lists (vehicle appears / departs in a
cell) replayed as piecewise-constant counts. From it we integrate, exactly,
the fraction of each time period during which the nearest available vehicle
to every cell sits at each distance class, and from that the probability
that a random arrival finds a vehicle within their threshold.

Day-start seeding events are conventionally timestamped PRE_OPEN seconds
(just before second 0) so that a left-limit snapshot at the opening instant
already sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .choice import ThresholdDistribution
from .grid import DistanceClassTable, GridSpec

PRE_OPEN = -1.0
DAY_SECONDS = 86_400.0

_SNAPSHOT_STRIDE = 512


class EventSource(Enum):
    TRIP_START = "trip-start"
    TRIP_END = "trip-end"
    REBALANCE_ADD = "rebalance-add"
    REBALANCE_REMOVE = "rebalance-remove"


@dataclass(frozen=True)
class AvailabilityEvent:
    day: int
    time_s: float
    cell: int
    delta: int
    source: EventSource = EventSource.REBALANCE_ADD


class ReplayError(ValueError):
    """Event list replays to a negative vehicle count."""


@dataclass(frozen=True)
class PeriodScheme:
    """Contiguous, non-overlapping time periods covering the service day.

    boundaries are seconds from the start of the civil day; availability
    outside the covered window still affects state at the window edges but
    contributes no integrated time.
    """

    boundaries: np.ndarray
    day_seconds: float = DAY_SECONDS

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("period boundaries must be strictly increasing with >= 1 period")
        if b[0] < 0 or b[-1] > self.day_seconds:
            raise ValueError("period boundaries must lie within the day")

    @property
    def num_periods(self) -> int:
        return len(self.boundaries) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def period_of(self, time_s: float) -> int:
        """Index of the period containing time_s, or -1 outside the window."""
        b = self.boundaries
        if time_s < b[0] or time_s >= b[-1]:
            return -1
        return int(np.searchsorted(b, time_s, side="right") - 1)

    def period_of_many(self, times: np.ndarray) -> np.ndarray:
        b = self.boundaries
        idx = np.searchsorted(b, times, side="right") - 1
        idx[(times < b[0]) | (times >= b[-1])] = -1
        return idx

    def label(self, h: int) -> str:
        b = self.boundaries
        return f"{_hhmm(b[h])}-{_hhmm(b[h + 1])}"

    @classmethod
    def hourly(cls, start_hour: float = 0.0, end_hour: float = 24.0) -> "PeriodScheme":
        hours = np.arange(start_hour, end_hour + 1e-9, 1.0)
        return cls(boundaries=hours * 3600.0)

    @classmethod
    def single(cls, length_s: float) -> "PeriodScheme":
        return cls(boundaries=np.array([0.0, length_s]), day_seconds=length_s)

    def to_dict(self) -> dict:
        return {"boundaries": self.boundaries.tolist(), "day_seconds": self.day_seconds}

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodScheme":
        return cls(boundaries=np.asarray(d["boundaries"]), day_seconds=d["day_seconds"])


def _hhmm(seconds: float) -> str:
    total = int(round(seconds))
    return f"{total // 3600:02d}:{(total % 3600) // 60:02d}"


@dataclass
class _DayEvents:
    time: np.ndarray    # sorted
    cell: np.ndarray
    delta: np.ndarray
    checkpoints: dict = field(default_factory=dict)  # lazy snapshot cache


@dataclass
class AvailabilityTimeline:
    """k days of piecewise-constant per-cell vehicle counts."""

    num_cells: int
    days: int
    periods: PeriodScheme
    day_events: list

    def events_of_day(self, day: int) -> _DayEvents:
        return self.day_events[day]

    def snapshot(self, day: int, time_s: float) -> np.ndarray:
        """Per-cell counts immediately before time_s (left limit).

        A vehicle removed by an event at exactly time_s is still counted, so
        the vehicle taken by a trip starting at time_s remains choosable.
        """
        if not (0 <= day < self.days):
            raise ValueError(f"day {day} outside 0..{self.days - 1}")
        if not (PRE_OPEN <= time_s <= self.periods.day_seconds):
            raise ValueError(f"time {time_s} outside the covered horizon")
        ev = self.day_events[day]
        idx = int(np.searchsorted(ev.time, time_s, side="left"))
        base_key = idx // _SNAPSHOT_STRIDE
        counts = self._checkpoint(ev, base_key).copy()
        lo = base_key * _SNAPSHOT_STRIDE
        np.add.at(counts, ev.cell[lo:idx], ev.delta[lo:idx])
        return counts

    def _checkpoint(self, ev: _DayEvents, key: int) -> np.ndarray:
        if key not in ev.checkpoints:
            if key == 0:
                ev.checkpoints[0] = np.zeros(self.num_cells, dtype=np.int64)
            else:
                prev = self._checkpoint(ev, key - 1).copy()
                lo, hi = (key - 1) * _SNAPSHOT_STRIDE, key * _SNAPSHOT_STRIDE
                np.add.at(prev, ev.cell[lo:hi], ev.delta[lo:hi])
                ev.checkpoints[key] = prev
        return ev.checkpoints[key]


def build_timeline(
    events,
    grid: GridSpec | int,
    days: int,
    periods: PeriodScheme,
) -> AvailabilityTimeline:
    """Sort, validate and index an event list.

    Ties inside a timestamp replay additions before removals within a cell
    and order cells by index, making the replay deterministic. An event
    sequence that would drive any cell's count negative is rejected with the
    offending event named.
    """
    num_cells = grid if isinstance(grid, int) else grid.num_cells
    if days < 1:
        raise ValueError(f"need at least one day, got {days}")

    if isinstance(events, list):
        day = np.array([e.day for e in events], dtype=np.int64)
        time = np.array([e.time_s for e in events], dtype=float)
        cell = np.array([e.cell for e in events], dtype=np.int64)
        delta = np.array([e.delta for e in events], dtype=np.int64)
    else:
        day, time, cell, delta = events

    if len(day) and (day.min() < 0 or day.max() >= days):
        raise ValueError("event day outside 0..days-1")
    if len(cell) and (cell.min() < 0 or cell.max() >= num_cells):
        raise ValueError("event cell outside the grid")

    per_day = []
    for d in range(days):
        sel = day == d
        t, c, dl = time[sel], cell[sel], delta[sel]
        order = np.lexsort((-dl, c, t))
        t, c, dl = t[order], c[order], dl[order]
        _validate_replay(d, t, c, dl, num_cells)
        per_day.append(_DayEvents(time=t, cell=c, delta=dl))
    return AvailabilityTimeline(
        num_cells=num_cells, days=days, periods=periods, day_events=per_day
    )


def _validate_replay(day: int, time, cell, delta, num_cells: int) -> None:
    if len(cell) == 0:
        return
    # vectorized fast path: per-cell running sums must stay non-negative
    order = np.argsort(cell, kind="stable")
    run = np.cumsum(delta[order])
    starts = np.flatnonzero(np.diff(cell[order], prepend=cell[order[0]] - 1))
    seg_lens = np.diff(np.append(starts, len(cell)))
    base = np.repeat(np.concatenate([[0], run[starts[1:] - 1]]), seg_lens)
    if np.all(run - base >= 0):
        return
    # slow path only to produce a precise error message
    counts = np.zeros(num_cells, dtype=np.int64)
    for t, c, dl in zip(time, cell, delta):
        counts[c] += dl
        if counts[c] < 0:
            raise ReplayError(
                f"day {day}: cell {int(c)} count goes negative at t={float(t)} "
                f"(delta={int(dl)})"
            )
    raise AssertionError("replay check disagreement")


class NeighborhoodState:
    """Sweep state: per-cell counts plus, for every cell, the number of
    vehicles at each distance class around it.

    bikes_by_class[i, l] is the total count over cells at class l from i;
    the nearest nonempty class is its first positive column. Updates touch
    only the cells within dist_max of the changed cell.
    """

    def __init__(self, table: DistanceClassTable):
        self.table = table
        m, L = table.num_cells, table.num_classes
        self.counts = np.zeros(m, dtype=np.int64)
        self.bikes_by_class = np.zeros((m, L), dtype=np.int64)

    def apply(self, cell: int, delta: int) -> None:
        self.counts[cell] += delta
        rows, cls = self.table.neighborhood(cell)
        self.bikes_by_class[rows, cls] += delta

    def apply_many(self, cells: np.ndarray, deltas: np.ndarray) -> None:
        for c, d in zip(cells, deltas):
            self.apply(int(c), int(d))


@dataclass(frozen=True)
class NearestBikeProfile:
    """perc[h, i, l]: fraction of period-h time (averaged over days) with the
    nearest vehicle to cell i at distance class <= l. Non-decreasing in l."""

    perc: np.ndarray          # (H, m, L), cumulative over classes
    boundaries: np.ndarray    # class boundaries of the table it was built on

    @property
    def availability_fraction(self) -> np.ndarray:
        """(H, m): fraction of time with a vehicle in the cell itself."""
        return self.perc[:, :, 0]


def nearest_profile(
    timeline: AvailabilityTimeline, table: DistanceClassTable
) -> NearestBikeProfile:
    """Exact time integration of the nearest-nonempty-class step function.

    For each day we sweep the event list once; a cell's nearest class only
    changes when some cell within dist_max flips between empty and stocked,
    so those flips drive all bookkeeping via the (symmetric) neighbor lists.
    """
    if timeline.num_cells != table.num_cells:
        raise ValueError("timeline and distance table cover different grids")
    m, L = table.num_cells, table.num_classes
    periods = timeline.periods
    pb = periods.boundaries
    H = periods.num_periods
    acc = np.zeros((H, m, L), dtype=float)

    for day in range(timeline.days):
        ev = timeline.events_of_day(day)
        _sweep_day(acc, ev, table, pb)

    denom = timeline.days * periods.lengths[:, None, None]
    perc = np.clip(np.cumsum(acc / denom, axis=2), 0.0, 1.0)
    return NearestBikeProfile(perc=perc, boundaries=table.boundaries)


def _sweep_day(acc, ev: _DayEvents, table: DistanceClassTable, pb: np.ndarray) -> None:
    m, L = table.num_cells, table.num_classes
    H = len(pb) - 1
    counts = np.zeros(m, dtype=np.int64)
    nonempty = np.zeros((m, L), dtype=np.int32)
    nearest = np.full(m, L, dtype=np.int64)
    last_t = np.full(m, -np.inf)

    def close(i: int, t: float) -> None:
        l = nearest[i]
        if l < L:
            _distribute(acc, pb, int(i), int(l), last_t[i], t)
        last_t[i] = t

    for t, c, dl in zip(ev.time, ev.cell, ev.delta):
        old = counts[c]
        counts[c] = old + dl
        if old == 0 and dl > 0:
            rows, cls = table.neighborhood(c)
            vals = nonempty[rows, cls]
            nonempty[rows, cls] = vals + 1
            hit = (vals == 0) & (cls < nearest[rows])
            for i, l in zip(rows[hit], cls[hit]):
                close(i, t)
                nearest[i] = l
        elif old + dl == 0 and dl < 0:
            rows, cls = table.neighborhood(c)
            vals = nonempty[rows, cls] - 1
            nonempty[rows, cls] = vals
            hit = (vals == 0) & (cls == nearest[rows])
            for i, l in zip(rows[hit], cls[hit]):
                close(i, t)
                row = nonempty[i, l + 1 :]
                nxt = np.flatnonzero(row)
                nearest[i] = l + 1 + nxt[0] if len(nxt) else L
        elif old + dl < 0:
            raise ReplayError(f"cell {int(c)} negative at t={float(t)}")

    # flush open segments at the end of the covered window, vectorized
    t_end = pb[-1]
    open_i = np.flatnonzero(nearest < L)
    if len(open_i):
        t0 = np.maximum(last_t[open_i], pb[0])
        li = nearest[open_i]
        for h in range(H):
            o = np.minimum(t_end, pb[h + 1]) - np.maximum(t0, pb[h])
            np.add.at(acc[h], (open_i, li), np.maximum(o, 0.0))


def _distribute(acc, pb, i: int, l: int, t0: float, t1: float) -> None:
    """Add the overlap of [t0, t1) with each period to acc[h, i, l]."""
    if t1 <= pb[0] or t0 >= pb[-1]:
        return
    h0 = max(int(np.searchsorted(pb, t0, side="right")) - 1, 0)
    h1 = min(int(np.searchsorted(pb, t1, side="left")) - 1, len(pb) - 2)
    for h in range(h0, h1 + 1):
        o = min(t1, pb[h + 1]) - max(t0, pb[h])
        if o > 0:
            acc[h, i, l] += o


def alpha_matrix(
    profile: NearestBikeProfile, dist: ThresholdDistribution
) -> np.ndarray:
    """Probability a random arrival in each (period, cell) finds a vehicle.

    Sums, over threshold bins, the bin probability times the fraction of
    time the nearest vehicle is within that bin's reach.
    """
    if len(dist.boundaries) != len(profile.boundaries) or not np.allclose(
        dist.boundaries, profile.boundaries, atol=1e-9
    ):
        raise ValueError("profile and threshold distribution use different class tables")
    return np.einsum("hml,l->hm", profile.perc, dist.class_probs)
