"""Shared fixtures and independent oracle helpers.

Oracles here deliberately avoid the package's fast paths: distances are
re-derived by brute enumeration, availability by dense replay, and nearest
classes by scanning every cell, so the tests check the implementation
against something simpler.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from demandgrid.grid import GridSpec, _meters_per_degree
from demandgrid.timeline import PRE_OPEN


def make_grid(rows: int, cols: int, cell_width: float = 400.0, lat: float = 41.8) -> GridSpec:
    per_lat, per_lon = _meters_per_degree(lat)
    return GridSpec(
        origin_lat=lat,
        origin_lon=-71.45,
        cell_width=cell_width,
        rows=rows,
        cols=cols,
        meters_per_deg_lat=per_lat,
        meters_per_deg_lon=per_lon,
    )


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    r = 6_371_008.8
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(math.sqrt(a))


def lattice_distances(cell_width: float, dist_max: float) -> list[float]:
    """Brute enumeration of realizable center-to-center distances."""
    reach = int(dist_max // cell_width) + 2
    out = set()
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            d = cell_width * math.hypot(di, dj)
            if d <= dist_max + 1e-9:
                out.add(round(d, 9))
    return sorted(out)


def brute_counts(events, num_cells: int, day: int, t: float) -> np.ndarray:
    """Replay oracle: counts immediately before t (strict left limit)."""
    ev_day, ev_t, ev_c, ev_d = events
    counts = np.zeros(num_cells, dtype=np.int64)
    for d, tt, c, dl in zip(ev_day, ev_t, ev_c, ev_d):
        if d == day and tt < t:
            counts[c] += dl
    return counts


def brute_nearest_class(counts: np.ndarray, cell: int, grid: GridSpec,
                        classes: np.ndarray, dist_max: float) -> int:
    """Scan every cell for the nearest stocked one; return its class index
    or len(classes) when nothing is within dist_max."""
    r0, c0 = divmod(cell, grid.cols)
    best = None
    for other in np.flatnonzero(counts > 0):
        r1, c1 = divmod(int(other), grid.cols)
        d = grid.cell_width * math.hypot(r1 - r0, c1 - c0)
        if d <= dist_max + 1e-9 and (best is None or d < best):
            best = d
    if best is None:
        return len(classes)
    return int(np.argmin(np.abs(classes - best)))


def random_presence_events(
    rng: np.random.Generator,
    num_cells: int,
    days: int,
    day_seconds: float,
    n_intervals: int,
):
    """Random vehicle-presence intervals as a valid event list (replay can
    never go negative because every removal closes its own interval)."""
    ev_day, ev_t, ev_c, ev_d = [], [], [], []
    for _ in range(n_intervals):
        day = int(rng.integers(days))
        cell = int(rng.integers(num_cells))
        a, b = np.sort(rng.uniform(0, day_seconds, size=2))
        if b - a < 1.0:
            b = min(a + 1.0, day_seconds)
        ev_day += [day, day]
        ev_t += [float(a), float(b)]
        ev_c += [cell, cell]
        ev_d += [1, -1]
    # a few all-day vehicles
    for _ in range(max(1, n_intervals // 4)):
        day = int(rng.integers(days))
        cell = int(rng.integers(num_cells))
        ev_day.append(day)
        ev_t.append(PRE_OPEN)
        ev_c.append(cell)
        ev_d.append(1)
    return (
        np.asarray(ev_day, dtype=np.int64),
        np.asarray(ev_t, dtype=float),
        np.asarray(ev_c, dtype=np.int64),
        np.asarray(ev_d, dtype=np.int64),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(411)
