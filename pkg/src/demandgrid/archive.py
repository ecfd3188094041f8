"""Result archive: one zip holding a manifest and the per-(period, cell)
table.

The archive is the single source of truth for every downstream consumer
(CLI inspection, HTTP layers, the web UI): re-uploading one re-renders the
same numbers without re-estimation. Writing is fully deterministic so the
same inputs produce byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .grid import GridSpec
from .pipeline import (
    CATEGORY_INSUFFICIENT,
    CATEGORY_LOW_SERVICE,
    CATEGORY_OK,
    LOW_SERVICE_FACTOR,
    EstimateParams,
    ResultBundle,
)
from .timeline import PeriodScheme

MANIFEST_NAME = "manifest.json"
RESULTS_NAME = "results.csv"
FORMAT_VERSION = 1

RESULT_COLUMNS = [
    "period", "cell", "row", "col", "center_lat", "center_lon",
    "mu_em", "mu_naive", "alpha", "trip_rate", "avail_frac", "category",
]

_FIXED_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


class ArchiveError(ValueError):
    """Archive is missing members or fails schema checks."""


def results_table(bundle: ResultBundle) -> pd.DataFrame:
    """Flat per-(period, cell) table. Cell ids are 1-based row-major to
    match the manifest's grid indexing; non-estimable rates are left empty."""
    H = bundle.periods.num_periods
    m = bundle.grid.num_cells
    centers = bundle.grid.centers()
    idx = np.arange(m)
    cat = bundle.category

    frames = []
    for h in range(H):
        frames.append(
            pd.DataFrame(
                {
                    "period": h,
                    "cell": idx + 1,
                    "row": idx // bundle.grid.cols,
                    "col": idx % bundle.grid.cols,
                    "center_lat": centers[:, 0],
                    "center_lon": centers[:, 1],
                    "mu_em": bundle.rates_em.mu[h],
                    "mu_naive": bundle.rates_naive.mu[h],
                    "alpha": bundle.alpha[h],
                    "trip_rate": bundle.trip_rate[h],
                    "avail_frac": bundle.avail_frac[h],
                    "category": cat[h],
                }
            )
        )
    return pd.concat(frames, ignore_index=True)[RESULT_COLUMNS]


def build_manifest(bundle: ResultBundle, reestimated: bool = True) -> dict:
    diag = bundle.diagnostics
    return {
        "format_version": FORMAT_VERSION,
        "tool": "demandgrid",
        "reestimated": reestimated,
        "params": bundle.params.to_dict(),
        "grid": bundle.grid.to_dict(),
        "periods": bundle.periods.to_dict(),
        "period_labels": [bundle.periods.label(h) for h in range(bundle.periods.num_periods)],
        "days": bundle.days,
        "first_day": bundle.day0,
        "distribution": bundle.distribution.to_dict(),
        "input_sha256": bundle.content_hash,
        "ingest_report": bundle.ingest_report,
        "em": {
            "iterations": diag.iterations,
            "converged": diag.converged,
            "final_delta": diag.final_delta,
            "log_likelihood_trace": diag.log_likelihood_trace,
            "orphan_trips": diag.orphan_trips,
            "fallback_trips": diag.fallback_trips,
        },
        "category_rule": (
            f"low_service when estimable and mu_em >= {LOW_SERVICE_FACTOR} x trip_rate "
            "(cells with neither demand nor trips stay ok); insufficient_data when "
            "alpha below the floor"
        ),
        "aggregate_rule": (
            "window layers average rates over the selected periods (time-weighted, "
            "estimable periods only) and categorize from the window means"
        ),
    }


def _json_safe(obj):
    """Strict-JSON form: non-finite floats become None so any parser
    (including the browser) can read the manifest."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(_json_safe(manifest), sort_keys=True, indent=1, allow_nan=False).encode()


def _results_bytes(table: pd.DataFrame) -> bytes:
    buf = io.StringIO()
    table.to_csv(buf, index=False, float_format="%.12g", lineterminator="\n")
    return buf.getvalue().encode()


def write_archive(bundle: ResultBundle, path, reestimated: bool = True) -> None:
    write_archive_parts(build_manifest(bundle, reestimated), results_table(bundle), path)


def write_archive_parts(manifest: dict, table: pd.DataFrame, path) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, payload in ((MANIFEST_NAME, _manifest_bytes(manifest)),
                              (RESULTS_NAME, _results_bytes(table))):
            info = zipfile.ZipInfo(name, date_time=_FIXED_ZIP_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)


@dataclass
class Archive:
    manifest: dict
    results: pd.DataFrame

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_dict(self.manifest["grid"])

    @property
    def periods(self) -> PeriodScheme:
        return PeriodScheme.from_dict(self.manifest["periods"])

    @property
    def params(self) -> EstimateParams:
        return EstimateParams.from_dict(self.manifest["params"])

    def layer_arrays(self) -> dict[str, np.ndarray]:
        """(H, m) arrays for each layer, from the flat table."""
        H = self.periods.num_periods
        m = self.grid.num_cells
        out = {}
        order = np.lexsort((self.results["cell"].to_numpy(), self.results["period"].to_numpy()))
        for col in ("mu_em", "mu_naive", "alpha", "trip_rate", "avail_frac"):
            out[col] = self.results[col].to_numpy()[order].reshape(H, m)
        out["category"] = self.results["category"].to_numpy()[order].reshape(H, m)
        return out


def read_archive(src) -> Archive:
    """Load and validate an archive from a path or file-like object."""
    try:
        zf = zipfile.ZipFile(src)
    except zipfile.BadZipFile as exc:
        raise ArchiveError(f"not a result archive: {exc}") from exc
    names = set(zf.namelist())
    missing = {MANIFEST_NAME, RESULTS_NAME} - names
    if missing:
        raise ArchiveError(f"archive is missing {sorted(missing)}")
    with zf.open(MANIFEST_NAME) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {manifest.get('format_version')}")
    with zf.open(RESULTS_NAME) as f:
        results = pd.read_csv(f)
    missing_cols = set(RESULT_COLUMNS) - set(results.columns)
    if missing_cols:
        raise ArchiveError(f"results table is missing columns {sorted(missing_cols)}")
    H = len(manifest["periods"]["boundaries"]) - 1
    m = int(manifest["grid"]["rows"]) * int(manifest["grid"]["cols"])
    if len(results) != H * m:
        raise ArchiveError(
            f"results table has {len(results)} rows, expected {H * m} (periods x cells)"
        )
    return Archive(manifest=manifest, results=results)


def is_archive(path) -> bool:
    if not zipfile.is_zipfile(path):
        return False
    with zipfile.ZipFile(path) as zf:
        return MANIFEST_NAME in zf.namelist()


def select_periods(periods: PeriodScheme, spec: str | int | None) -> list[int]:
    """Resolve a period selector: an index, 'all', or an 'HH:MM-HH:MM'
    window mapped to the union of overlapping periods."""
    H = periods.num_periods
    if spec is None or spec == "all" or spec == "aggregate":
        return list(range(H))
    if isinstance(spec, (int, np.integer)) or (isinstance(spec, str) and spec.isdigit()):
        h = int(spec)
        if not (0 <= h < H):
            raise ValueError(f"period {h} outside 0..{H - 1}")
        return [h]
    if isinstance(spec, str) and "-" in spec:
        lo_s, hi_s = spec.split("-", 1)
        lo = _parse_hhmm(lo_s)
        hi = _parse_hhmm(hi_s)
        b = periods.boundaries
        hs = [h for h in range(H) if b[h] < hi and b[h + 1] > lo]
        if not hs:
            raise ValueError(f"window {spec} overlaps no periods")
        return hs
    raise ValueError(f"invalid period selector {spec!r}")


def _parse_hhmm(s: str) -> float:
    parts = s.strip().split(":")
    hours = int(parts[0])
    minutes = int(parts[1]) if len(parts) > 1 else 0
    return hours * 3600.0 + minutes * 60.0


def layer_set(archive: Archive, period: str | int | None = None) -> dict:
    """Layer values for a period or a window aggregate, plus grid metadata.

    Window aggregation is time-weighted: availability and trip rates over
    all selected periods, rates over the periods where the cell is
    estimable; the category is recomputed from the window means.
    """
    arrays = archive.layer_arrays()
    periods = archive.periods
    hs = select_periods(periods, period)
    lens = periods.lengths[hs]
    wsum = lens.sum()

    mu = arrays["mu_em"][hs]
    alpha = arrays["alpha"][hs]
    trips = arrays["trip_rate"][hs]
    avail = arrays["avail_frac"][hs]
    est = ~np.isnan(mu)

    w = lens[:, None] / wsum
    alpha_agg = (alpha * w).sum(axis=0)
    trips_agg = (trips * w).sum(axis=0)
    avail_agg = (avail * w).sum(axis=0)
    est_w = np.where(est, lens[:, None], 0.0)
    est_tot = est_w.sum(axis=0)
    with np.errstate(invalid="ignore"):
        mu_agg = np.where(est_tot > 0, np.nansum(mu * est_w, axis=0) / np.where(est_tot > 0, est_tot, 1.0), np.nan)

    floor = archive.params.alpha_floor
    category = np.full(mu_agg.shape, CATEGORY_OK, dtype=object)
    insufficient = alpha_agg < floor
    category[insufficient] = CATEGORY_INSUFFICIENT
    mu_filled = np.where(np.isnan(mu_agg), 0.0, mu_agg)
    low = (
        ~insufficient
        & (mu_filled >= LOW_SERVICE_FACTOR * trips_agg)
        & ((mu_filled > 0) | (trips_agg > 0))
    )
    category[low] = CATEGORY_LOW_SERVICE

    grid = archive.grid
    m = grid.num_cells
    idx = np.arange(m)
    bounds = np.array([grid.cell_bounds(i) for i in range(m)])
    return {
        "grid": archive.manifest["grid"],
        "periods": hs,
        "period_labels": [archive.manifest["period_labels"][h] for h in hs],
        "cells": [
            {
                "cell": int(i + 1),
                "row": int(i // grid.cols),
                "col": int(i % grid.cols),
                "bounds": bounds[i].tolist(),
                "demand": None if np.isnan(mu_agg[i]) else float(mu_agg[i]),
                "availability": float(avail_agg[i]),
                "alpha": float(alpha_agg[i]),
                "trips": float(trips_agg[i]),
                "category": str(category[i]),
            }
            for i in idx
        ],
    }
