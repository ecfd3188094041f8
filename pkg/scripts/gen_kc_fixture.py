"""Generate the bundled Kansas City-style demo trip file.

Deterministic: rerunning reproduces data/kc_trips.csv byte for byte. The
layout plants a busy downtown area with steady usage and a south area that
only sees trips in a short morning window, so the default estimation run
flags at least one low-service cell there.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "data" / "kc_trips.csv"

BASE_LAT, BASE_LON = 39.0800, -94.5900
DEG_LAT = 400.0 / 111194.9
DEG_LON = 400.0 / 86437.0  # ~ at 39.1 N
DAYS = ["2021-05-01", "2021-05-02", "2021-05-03", "2021-05-04", "2021-05-05", "2021-05-06"]


def cell_point(rng, row: int, col: int) -> tuple[float, float]:
    lat = BASE_LAT + (row + 0.2 + 0.6 * rng.random()) * DEG_LAT
    lon = BASE_LON + (col + 0.2 + 0.6 * rng.random()) * DEG_LON
    return round(lat, 6), round(lon, 6)


def main() -> None:
    rng = np.random.default_rng(2021_05_01)
    rows = []
    trip_id = 0

    downtown = [(6, 3), (6, 4), (7, 3), (7, 4), (5, 4)]
    south = [(1, 4), (1, 5)]

    for day in DAYS:
        # downtown: steady all-day usage, drop-offs nearby keep cells stocked
        for row, col in downtown:
            n = int(rng.integers(12, 19))
            starts = np.sort(rng.uniform(7 * 3600, 21 * 3600, n))
            for s in starts:
                dur = float(rng.uniform(240, 1500))
                dr, dc = downtown[int(rng.integers(len(downtown)))]
                slat, slon = cell_point(rng, row, col)
                elat, elon = cell_point(rng, dr, dc)
                rows.append((trip_id, day, s, dur, slat, slon, elat, elon))
                trip_id += 1
        # south: a couple of early pickups per cell, vehicles leave for
        # downtown and nothing comes back, so availability is brief
        for row, col in south:
            n = int(rng.integers(2, 4))
            starts = np.sort(rng.uniform(9.0 * 3600, 9.4 * 3600, n))
            for s in starts:
                dur = float(rng.uniform(600, 1800))
                dr, dc = downtown[int(rng.integers(len(downtown)))]
                slat, slon = cell_point(rng, row, col)
                elat, elon = cell_point(rng, dr, dc)
                rows.append((trip_id, day, s, dur, slat, slon, elat, elon))
                trip_id += 1

    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["trip_id", "start_time", "end_time", "start_lat", "start_lon", "end_lat", "end_lon"]
        )
        for tid, day, s, dur, slat, slon, elat, elon in rows:
            start = _ts(day, s)
            end = _ts(day, s + dur)
            w.writerow([f"kc-{tid:05d}", start, end, slat, slon, elat, elon])
    print(f"wrote {len(rows)} trips to {OUT}")


def _ts(day: str, seconds: float) -> str:
    s = int(round(seconds))
    if s >= 86400:
        s = 86399
    return f"{day} {s // 3600:02d}:{(s % 3600) // 60:02d}:{s % 60:02d}"


if __name__ == "__main__":
    main()
