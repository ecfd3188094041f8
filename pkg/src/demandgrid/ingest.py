"""Trip file parsing and availability reconstruction.

Input is delimited text with one row per trip. Column names are matched
against a built-in alias list (or an explicit mapping); malformed rows are
dropped with a reason rather than failing the whole file. Availability is
reconstructed either by following each vehicle between trips (requires a
vehicle id) or by assuming perfect daily rebalancing: each morning exactly
the minimum fleet needed to make that day's pickups feasible is placed, and
everything is removed at day end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .grid import GridSpec
from .timeline import DAY_SECONDS, PRE_OPEN, EventSource, PeriodScheme

REQUIRED_COLUMNS = ("start_time", "end_time", "start_lat", "start_lon", "end_lat", "end_lon")
OPTIONAL_COLUMNS = ("vehicle_id", "trip_id")

COLUMN_ALIASES: dict[str, tuple[str, ...]] = {
    "trip_id": ("trip_id", "tripid", "trip id", "ride_id", "id"),
    "vehicle_id": (
        "vehicle_id", "vehicleid", "vehicle id", "bike_id", "bikeid",
        "scooter_id", "device_id", "bike number",
    ),
    "start_time": (
        "start_time", "starttime", "start time", "started_at", "start_datetime",
        "trip_start", "departure_time", "start date",
    ),
    "end_time": (
        "end_time", "endtime", "end time", "stoptime", "ended_at", "end_datetime",
        "trip_end", "arrival_time", "end date",
    ),
    "start_lat": (
        "start_lat", "start_latitude", "startlat", "start station latitude",
        "from_lat", "origin_lat", "start centroid lat",
    ),
    "start_lon": (
        "start_lon", "start_lng", "start_longitude", "startlon", "startlng",
        "start station longitude", "from_lon", "from_lng", "origin_lon",
        "start centroid lon",
    ),
    "end_lat": (
        "end_lat", "end_latitude", "endlat", "end station latitude", "to_lat",
        "dest_lat", "end centroid lat",
    ),
    "end_lon": (
        "end_lon", "end_lng", "end_longitude", "endlon", "endlng",
        "end station longitude", "to_lon", "to_lng", "dest_lon",
        "end centroid lon",
    ),
}


class SchemaError(ValueError):
    """Header is unusable: required columns missing or ambiguous."""


class VehicleDataError(ValueError):
    """Per-vehicle trip sequence is inconsistent (overlapping trips)."""


@dataclass
class IngestReport:
    rows_read: int = 0
    drop_reasons: dict = field(default_factory=dict)
    num_days: int = 0
    first_day: str = ""
    last_day: str = ""
    bbox: tuple | None = None  # (lat_min, lon_min, lat_max, lon_max)
    inserted_moves: int = 0

    @property
    def rows_dropped(self) -> int:
        return sum(self.drop_reasons.values())

    @property
    def rows_kept(self) -> int:
        return self.rows_read - self.rows_dropped

    def drop(self, reason: str, count: int) -> None:
        if count:
            self.drop_reasons[reason] = self.drop_reasons.get(reason, 0) + int(count)

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_kept": self.rows_kept,
            "drop_reasons": dict(self.drop_reasons),
            "num_days": self.num_days,
            "first_day": self.first_day,
            "last_day": self.last_day,
            "bbox": list(self.bbox) if self.bbox else None,
            "inserted_moves": self.inserted_moves,
        }


def _resolve_columns(header: list[str], schema: dict | None) -> dict[str, str]:
    normalized = {c.strip().lower().replace("_", " "): c for c in header}
    mapping: dict[str, str] = {}
    explicit = schema or {}
    for canon in REQUIRED_COLUMNS + OPTIONAL_COLUMNS:
        if canon in explicit:
            if explicit[canon] not in header:
                raise SchemaError(f"configured column {explicit[canon]!r} for {canon} not in header")
            mapping[canon] = explicit[canon]
            continue
        for alias in COLUMN_ALIASES[canon]:
            key = alias.replace("_", " ")
            if key in normalized:
                mapping[canon] = normalized[key]
                break
    missing = [c for c in REQUIRED_COLUMNS if c not in mapping]
    if missing:
        raise SchemaError(
            f"could not resolve required columns {missing} from header {header}"
        )
    return mapping


def load_schema_config(path) -> dict:
    """Column-alias config: JSON object canonical-name -> actual header."""
    with open(path) as f:
        return json.load(f)


def parse_trips(
    path,
    schema: dict | None = None,
    delimiter: str = ",",
    timezone: str | None = None,
) -> tuple[pd.DataFrame, IngestReport]:
    """Read and normalize a trip file.

    Returns a frame with canonical columns (times as naive local timestamps,
    coordinates as floats) plus a report of dropped rows. tz-aware inputs
    are converted to `timezone` (default UTC) before the zone is stripped.
    """
    raw = pd.read_csv(path, sep=delimiter, dtype=str, skipinitialspace=True)
    report = IngestReport(rows_read=len(raw))
    mapping = _resolve_columns(list(raw.columns), schema)

    df = pd.DataFrame(index=raw.index)
    for canon, src in mapping.items():
        df[canon] = raw[src]

    for col in ("start_time", "end_time"):
        df[col] = _to_local(_parse_times(df[col]), timezone)
    for col in ("start_lat", "start_lon", "end_lat", "end_lon"):
        df[col] = pd.to_numeric(df[col], errors="coerce")

    bad_time = df["start_time"].isna() | df["end_time"].isna()
    report.drop("malformed-timestamp", bad_time.sum())
    df = df[~bad_time]

    bad_coord = (
        df[["start_lat", "start_lon", "end_lat", "end_lon"]].isna().any(axis=1)
        | (df["start_lat"].abs() > 90)
        | (df["end_lat"].abs() > 90)
        | (df["start_lon"].abs() > 180)
        | (df["end_lon"].abs() > 180)
    )
    report.drop("malformed-coordinate", bad_coord.sum())
    df = df[~bad_coord]

    backwards = df["end_time"] < df["start_time"]
    report.drop("end-before-start", backwards.sum())
    df = df[~backwards].reset_index(drop=True)

    if len(df):
        report.bbox = (
            float(df["start_lat"].min()), float(df["start_lon"].min()),
            float(df["start_lat"].max()), float(df["start_lon"].max()),
        )
        first = df["start_time"].min().normalize()
        last = df["start_time"].max().normalize()
        report.first_day = str(first.date())
        report.last_day = str(last.date())
        report.num_days = int((last - first).days) + 1
    return df, report


def _parse_times(s: pd.Series) -> pd.Series:
    try:
        # fast vectorized path for a consistent format
        return pd.to_datetime(s, errors="coerce")
    except (ValueError, TypeError):
        return pd.to_datetime(s, errors="coerce", format="mixed")


def _to_local(ts: pd.Series, timezone: str | None) -> pd.Series:
    if getattr(ts.dt, "tz", None) is not None:
        return ts.dt.tz_convert(timezone or "UTC").dt.tz_localize(None)
    return ts


def day_and_seconds(ts: pd.Series, day0: pd.Timestamp) -> tuple[np.ndarray, np.ndarray]:
    """Split timestamps into (day index, seconds within the day) from day0."""
    rel = (ts - day0).dt.total_seconds().to_numpy()
    day = np.floor(rel / DAY_SECONDS).astype(np.int64)
    return day, rel - day * DAY_SECONDS


def infer_horizon(df: pd.DataFrame) -> tuple[pd.Timestamp, int]:
    """(first service day midnight, k): the inclusive day span of pickups.

    Days without any trips still count toward k so the per-day averages
    reflect the whole range.
    """
    if not len(df):
        raise ValueError("no trips to infer a horizon from")
    day0 = df["start_time"].min().normalize()
    last = df["start_time"].max().normalize()
    return day0, int((last - day0).days) + 1


def derive_availability(
    df: pd.DataFrame,
    grid: GridSpec,
    day0: pd.Timestamp,
    days: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, IngestReport]:
    """Reconstruct availability by following each vehicle between trips.

    A vehicle sits at its drop-off cell from drop-off until its next pickup;
    before its first pickup it is seeded at that pickup's cell from the
    start of that day. When a pickup cell disagrees with the previous
    drop-off cell an implicit rebalance move is inserted at the midpoint
    time. Returns (day, time_s, cell, delta) arrays plus a report counting
    the inserted moves.
    """
    if "vehicle_id" not in df.columns or df["vehicle_id"].isna().all():
        raise ValueError(
            "derive_availability requires a vehicle_id column; use perfect "
            "rebalancing for datasets without vehicle identity"
        )
    report = IngestReport(rows_read=len(df))
    s_day, s_sec = day_and_seconds(df["start_time"], day0)
    e_day, e_sec = day_and_seconds(df["end_time"], day0)
    s_cell, s_in = grid.locate_many(df["start_lat"].to_numpy(), df["start_lon"].to_numpy())
    e_cell, e_in = grid.locate_many(df["end_lat"].to_numpy(), df["end_lon"].to_numpy())

    ev_day: list[int] = []
    ev_time: list[float] = []
    ev_cell: list[int] = []
    ev_delta: list[int] = []

    def presence(t_from: float, t_to: float, cell: int) -> None:
        """Emit per-day events for one absolute presence interval [t_from, t_to)."""
        if t_to <= t_from:
            return
        d = max(int(t_from // DAY_SECONDS), 0)
        while d < days:
            day_lo, day_hi = d * DAY_SECONDS, (d + 1) * DAY_SECONDS
            if day_lo >= t_to:
                break
            start = t_from - day_lo if t_from > day_lo else PRE_OPEN
            end = min(t_to, day_hi) - day_lo
            ev_day.append(d)
            ev_time.append(start)
            ev_cell.append(cell)
            ev_delta.append(1)
            if end < DAY_SECONDS:
                ev_day.append(d)
                ev_time.append(end)
                ev_cell.append(cell)
                ev_delta.append(-1)
            d += 1

    horizon_end = days * DAY_SECONDS
    start_abs = s_day * DAY_SECONDS + s_sec
    end_abs = e_day * DAY_SECONDS + e_sec
    usable = s_in & e_in & (s_day >= 0) & (s_day < days)
    report.drop("out-of-box", int(np.count_nonzero(~usable)))

    vids = df["vehicle_id"].to_numpy()
    has_vid = ~pd.isna(vids)
    report.drop("missing-vehicle-id", int(np.count_nonzero(usable & ~has_vid)))
    usable &= has_vid
    for vid in pd.unique(vids[usable]):
        sel = np.flatnonzero((vids == vid) & usable)
        sel = sel[np.argsort(start_abs[sel], kind="stable")]
        starts, ends = start_abs[sel], end_abs[sel]
        pick, drop = s_cell[sel], e_cell[sel]
        overlap = np.flatnonzero(starts[1:] < ends[:-1])
        if len(overlap):
            raise VehicleDataError(
                f"vehicle {vid!r} has overlapping trips around "
                f"{df['start_time'].iloc[sel[overlap[0] + 1]]}"
            )
        first_day_start = (starts[0] // DAY_SECONDS) * DAY_SECONDS
        presence(first_day_start + PRE_OPEN, starts[0], int(pick[0]))
        for r in range(len(sel) - 1):
            if drop[r] == pick[r + 1]:
                presence(ends[r], starts[r + 1], int(drop[r]))
            else:
                mid = 0.5 * (ends[r] + starts[r + 1])
                presence(ends[r], mid, int(drop[r]))
                presence(mid, starts[r + 1], int(pick[r + 1]))
                report.inserted_moves += 1
        presence(ends[-1], horizon_end, int(drop[-1]))

    return (
        np.asarray(ev_day, dtype=np.int64),
        np.asarray(ev_time, dtype=float),
        np.asarray(ev_cell, dtype=np.int64),
        np.asarray(ev_delta, dtype=np.int64),
        report,
    )


def perfect_rebalance(
    df: pd.DataFrame,
    grid: GridSpec,
    day0: pd.Timestamp,
    days: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Availability under the perfect-daily-rebalancing assumption.

    Each day starts with the minimum per-cell vehicle counts that keep every
    observed pickup feasible given that day's drop-offs (the running
    deficit of each cell, with pickups at an instant served only by vehicles
    present strictly before it), and ends with all vehicles removed.
    """
    s_day, s_sec = day_and_seconds(df["start_time"], day0)
    e_day, e_sec = day_and_seconds(df["end_time"], day0)
    s_cell, s_in = grid.locate_many(df["start_lat"].to_numpy(), df["start_lon"].to_numpy())
    e_cell, e_in = grid.locate_many(df["end_lat"].to_numpy(), df["end_lon"].to_numpy())

    usable = s_in & (s_day >= 0) & (s_day < days)
    drop_ok = usable & e_in & (e_day >= 0) & (e_day < days)

    # flat event table: pickups (-1) and dropoffs (+1) with their day/time
    pk_day, pk_sec, pk_cell = s_day[usable], s_sec[usable], s_cell[usable]
    dr_day, dr_sec, dr_cell = e_day[drop_ok], e_sec[drop_ok], e_cell[drop_ok]

    all_day = np.concatenate([pk_day, dr_day])
    all_sec = np.concatenate([pk_sec, dr_sec])
    all_cell = np.concatenate([pk_cell, dr_cell])
    all_delta = np.concatenate([
        np.full(len(pk_day), -1, dtype=np.int64),
        np.ones(len(dr_day), dtype=np.int64),
    ])
    # at equal times a pickup is served only by earlier supply, so order
    # pickups before dropoffs when computing deficits
    is_drop = (all_delta > 0).astype(np.int8)
    order = np.lexsort((is_drop, all_sec, all_cell, all_day))
    d_o, c_o, dl_o = all_day[order], all_cell[order], all_delta[order]

    run = np.cumsum(dl_o)
    group = d_o * np.int64(grid.num_cells) + c_o
    starts = np.flatnonzero(np.diff(group, prepend=group[0] - 1)) if len(group) else np.zeros(0, np.int64)
    if len(group):
        seg_lens = np.diff(np.append(starts, len(group)))
        base = np.repeat(np.concatenate([[0], run[starts[1:] - 1]]), seg_lens)
        rel = run - base
        seg_min = np.minimum.reduceat(rel, starts)
        seeds = np.maximum(-seg_min, 0)
        seed_day = d_o[starts]
        seed_cell = c_o[starts]
        keep = seeds > 0
        seeds, seed_day, seed_cell = seeds[keep], seed_day[keep], seed_cell[keep]
    else:
        seeds = seed_day = seed_cell = np.zeros(0, dtype=np.int64)

    # end-of-day counts = seeds + dropoffs - pickups, removed at day close
    hm = lambda day, cell: day * np.int64(grid.num_cells) + cell
    net = np.bincount(hm(seed_day, seed_cell), weights=seeds.astype(float), minlength=days * grid.num_cells)
    net += np.bincount(hm(dr_day, dr_cell), minlength=days * grid.num_cells)
    net -= np.bincount(hm(pk_day, pk_cell), minlength=days * grid.num_cells)
    leftover = np.flatnonzero(net > 0)
    left_day, left_cell = leftover // grid.num_cells, leftover % grid.num_cells

    ev_day = np.concatenate([seed_day, pk_day, dr_day, left_day])
    ev_time = np.concatenate([
        np.full(len(seed_day), PRE_OPEN),
        pk_sec,
        dr_sec,
        np.full(len(left_day), DAY_SECONDS),
    ])
    ev_cell = np.concatenate([seed_cell, pk_cell, dr_cell, left_cell])
    ev_delta = np.concatenate([
        seeds,
        np.full(len(pk_day), -1, dtype=np.int64),
        np.ones(len(dr_day), dtype=np.int64),
        -net[leftover].astype(np.int64),
    ])
    return ev_day, ev_time, ev_cell.astype(np.int64), ev_delta


def bin_trips(
    df: pd.DataFrame,
    grid: GridSpec,
    periods: PeriodScheme,
    day0: pd.Timestamp,
    days: int,
    report: IngestReport | None = None,
):
    """Assign trips to (day, period, cell); out-of-box and out-of-window
    trips are dropped and counted."""
    from .em import TripSet

    s_day, s_sec = day_and_seconds(df["start_time"], day0)
    cell, inside = grid.locate_many(df["start_lat"].to_numpy(), df["start_lon"].to_numpy())
    in_horizon = (s_day >= 0) & (s_day < days)
    h = periods.period_of_many(s_sec)
    in_window = h >= 0
    keep = inside & in_horizon & in_window
    if report is not None:
        report.drop("out-of-box", int(np.count_nonzero(~(inside & in_horizon))))
        report.drop("out-of-hours", int(np.count_nonzero(inside & in_horizon & ~in_window)))
    return TripSet(
        day=s_day[keep], time_s=s_sec[keep], period=h[keep], cell=cell[keep]
    )
