"""Command-line front door: estimate, experiment, sensitivity, inspect,
serve.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Human-readable
tables go to stdout; delimited files, figures and a reproduction manifest
go to the --out directory.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import archive as archive_mod
from . import ingest, pipeline, report, simulate
from .em import EMConfig

WORKSPACE_ENV = "DEMANDGRID_WORKSPACE"


def _fail(message: str, code: int = 1):
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(code)


def _write_run_manifest(out: Path, command: str, flags: dict, extra: dict | None = None) -> None:
    doc = {"command": command, "flags": flags}
    if extra:
        doc.update(extra)
    (out / "run_manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1))


def _parse_init(value: str) -> tuple[str, float]:
    if value == "uniform":
        return "uniform", 1.0
    if value in ("trip", "trips"):
        return "trip", 0.0
    if value.startswith("gamma="):
        return "gamma", float(value.split("=", 1)[1])
    raise click.BadParameter(f"--init must be uniform|trips|gamma=G, got {value!r}")


def _parse_service_hours(value: str) -> tuple[float, float]:
    try:
        lo, hi = value.split("-")
        def hours(s: str) -> float:
            h, m = (s.split(":") + ["0"])[:2]
            return int(h) + int(m) / 60.0
        return hours(lo), hours(hi)
    except (ValueError, IndexError):
        raise click.BadParameter(f"--service-hours must look like 06:00-22:00, got {value!r}")


def _parse_gammas(value: str) -> list[float]:
    if ":" in value:
        parts = value.split(":")
        if len(parts) != 3:
            raise click.BadParameter("--gammas range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        out = list(np.round(np.arange(start, stop + step / 2, step), 10))
        return out
    return [float(v) for v in value.split(",") if v.strip()]


@click.group()
def main():
    """Censored spatial-temporal demand estimation for shared micromobility."""


@main.command("estimate")
@click.option("--trips", "trips_path", required=True, type=click.Path(), help="Trip file (delimited text).")
@click.option("--cell-width", default=400.0, show_default=True, help="Grid cell width in meters.")
@click.option("--p0", default=0.7, show_default=True, help="Probability a user only considers their own cell.")
@click.option("--max-dist", default=1000.0, show_default=True, help="Maximum distance a user travels (meters).")
@click.option("--periods", default="hourly", show_default=True, help="'hourly' or a period count per day.")
@click.option("--service-hours", default="00:00-24:00", show_default=True, help="HH:MM-HH:MM estimation window.")
@click.option("--init", default="uniform", show_default=True, help="uniform | trips | gamma=G.")
@click.option("--tol", default=1e-6, show_default=True, help="Convergence tolerance on rate changes.")
@click.option("--max-iters", default=1000, show_default=True)
@click.option("--alpha-floor", default=0.01, show_default=True, help="Minimum alpha for a cell to be estimable.")
@click.option("--rebalance", default="perfect", show_default=True, type=click.Choice(["perfect", "derive"]))
@click.option("--timezone", default=None, help="Convert tz-aware timestamps to this zone.")
@click.option("--schema", "schema_path", default=None, type=click.Path(), help="Column-alias config (JSON).")
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=1, show_default=True, help="Parallelism cap (recorded; estimation is deterministic).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
def cmd_estimate(trips_path, cell_width, p0, max_dist, periods, service_hours, init,
                 tol, max_iters, alpha_floor, rebalance, timezone, schema_path, seed,
                 threads, out_dir):
    """Estimate demand rates from a trip file and write the result archive."""
    init_mode, gamma = _parse_init(init)
    window = _parse_service_hours(service_hours)
    if not Path(trips_path).exists():
        raise click.UsageError(f"trip file {trips_path} does not exist")
    params = pipeline.EstimateParams(
        cell_width=cell_width, p0=p0, dist_max=max_dist, periods=periods,
        service_hours=window, init_mode=init_mode, gamma=gamma, tol=tol,
        max_iters=max_iters, alpha_floor=alpha_floor, rebalance=rebalance,
        timezone=timezone, seed=seed,
    )
    schema = ingest.load_schema_config(schema_path) if schema_path else None
    try:
        bundle = pipeline.estimate_from_file(trips_path, params, schema=schema)
    except pipeline.ParamError as exc:
        _fail(str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - surfaced as machine-readable failure
        _fail(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    archive_path = out / "archive.zip"
    archive_mod.write_archive(bundle, archive_path)
    table = archive_mod.results_table(bundle)
    table.to_csv(out / "results.csv", index=False, float_format="%.12g")
    layers = archive_mod.layer_set(archive_mod.read_archive(archive_path), None)
    report.save_layer_maps(layers, bundle.grid.rows, bundle.grid.cols, out / "layers.png")
    _write_run_manifest(
        out, "estimate",
        {
            "trips": str(trips_path), "cell_width": cell_width, "p0": p0,
            "max_dist": max_dist, "periods": periods, "service_hours": service_hours,
            "init": init, "tol": tol, "max_iters": max_iters,
            "alpha_floor": alpha_floor, "rebalance": rebalance,
            "timezone": timezone, "seed": seed, "threads": threads,
        },
        {"input_sha256": bundle.content_hash},
    )

    diag = bundle.diagnostics
    est_cells = int(bundle.rates_em.estimable.any(axis=0).sum())
    ll = diag.log_likelihood_trace[-1] if diag.log_likelihood_trace else float("nan")
    click.echo(f"grid: {bundle.grid.rows}x{bundle.grid.cols} cells of {bundle.grid.cell_width:g} m")
    click.echo(f"days: {bundle.days}, periods/day: {bundle.periods.num_periods}")
    click.echo(f"estimable cells (any period): {est_cells} of {bundle.grid.num_cells}")
    click.echo(f"em iterations: {diag.iterations} (converged: {diag.converged})")
    click.echo(f"log-likelihood: {ll:.6g}")
    click.echo(f"archive: {archive_path}")


@main.command("experiment")
@click.option("--p-list", default="0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", show_default=True)
@click.option("--reps", default=10, show_default=True)
@click.option("--days", default=30, show_default=True)
@click.option("--p0", default=0.7, show_default=True)
@click.option("--max-dist", default=1000.0, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_experiment(p_list, reps, days, p0, max_dist, seed, threads, out_dir):
    """Run the planted-demand availability sweep and report error tables."""
    try:
        p_values = tuple(float(p) for p in p_list.split(","))
        cfg = simulate.ExperimentConfig(
            days=days, replications=reps, p_values=p_values, p0=p0,
            dist_max=max_dist, seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        result = simulate.run_experiment(cfg, threads=threads)
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.summary.sort_values(["category", "algorithm", "p"]).to_csv(
        out / "summary.csv", index=False, float_format="%.12g"
    )
    result.per_rep.to_csv(out / "per_replication.csv", index=False, float_format="%.12g")
    result.layout.to_frame().to_csv(out / "layout.csv", index=False)
    checks = simulate.trend_checks(result)
    (out / "trends.json").write_text(json.dumps(checks, sort_keys=True, indent=1))
    report.save_error_curves(result.summary, out / "error_curves.png")
    report.save_layout_figure(result.layout, out / "layout.png")
    _write_run_manifest(out, "experiment", {
        "p_list": p_list, "reps": reps, "days": days, "p0": p0,
        "max_dist": max_dist, "seed": seed, "threads": threads,
    })

    pivot = result.summary.pivot_table(
        index=["category", "algorithm"], columns="p", values="max_error"
    )
    click.echo("max absolute error by category (pooled cells x replications):")
    click.echo(pivot.round(2).to_string())
    click.echo("")
    for name, ok in sorted(checks.items()):
        click.echo(f"[{'PASS' if ok else 'FAIL'}] {name}")
    if any(np.isclose(p, 1.0) for p in cfg.p_values):
        s = result.summary
        full = s[np.isclose(s.p, 1.0)]
        em = full[full.algorithm == "em"].sort_values("category")[["median_error", "max_error"]].to_numpy()
        nv = full[full.algorithm == "naive"].sort_values("category")[["median_error", "max_error"]].to_numpy()
        same = bool(np.allclose(em, nv, atol=1e-6))
        click.echo(f"[{'PASS' if same else 'FAIL'}] full_availability_em_equals_naive")


@main.command("sensitivity")
@click.option("--gammas", default="0:1:0.1", show_default=True, help="start:stop:step or comma list.")
@click.option("--fixture", "fixture", flag_value="two-point", default=None,
              help="Use the built-in two-point dataset instead of --trips.")
@click.option("--trips", "trips_path", default=None, type=click.Path())
@click.option("--cell-width", default=400.0, show_default=True)
@click.option("--p0", default=0.7, show_default=True)
@click.option("--max-dist", default=1000.0, show_default=True)
@click.option("--periods", default="hourly", show_default=True)
@click.option("--service-hours", default="00:00-24:00", show_default=True)
@click.option("--rebalance", default="perfect", show_default=True, type=click.Choice(["perfect", "derive"]))
@click.option("--days", default=50, show_default=True, help="Fixture length in days.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_sensitivity(gammas, fixture, trips_path, cell_width, p0, max_dist, periods,
                    service_hours, rebalance, days, out_dir):
    """Initialization sensitivity: difference of each blended start from the
    trip-initialized estimate."""
    gamma_list = _parse_gammas(gammas)
    if fixture is None and trips_path is None:
        raise click.UsageError("provide --trips or --fixture")
    try:
        if fixture == "two-point":
            ds = simulate.two_point_fixture(days=days, p0=p0, dist_max=max_dist)
        else:
            ds = _dataset_from_file(
                trips_path, cell_width, p0, max_dist, periods,
                _parse_service_hours(service_hours), rebalance,
            )
        table = simulate.sensitivity_study(ds, gamma_list)
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "sensitivity.csv", index=False, float_format="%.12g")
    report.save_sensitivity_figure(table, out / "sensitivity.png")
    _write_run_manifest(out, "sensitivity", {
        "gammas": gammas, "fixture": fixture, "trips": trips_path,
        "cell_width": cell_width, "p0": p0, "max_dist": max_dist, "days": days,
    })
    click.echo(table.to_string(index=False))


def _dataset_from_file(path, cell_width, p0, max_dist, periods, window, rebalance):
    from .choice import fit_threshold_distribution
    from .grid import build_grid, distance_classes
    from .timeline import build_timeline

    params = pipeline.EstimateParams(
        cell_width=cell_width, p0=p0, dist_max=max_dist, periods=periods,
        service_hours=window, rebalance=rebalance,
    )
    params.validate()
    df, rep = ingest.parse_trips(path)
    if not len(df):
        raise ValueError("no valid trips after parsing")
    pts = np.column_stack([
        np.concatenate([df["start_lat"], df["end_lat"]]),
        np.concatenate([df["start_lon"], df["end_lon"]]),
    ])
    grid = build_grid(pts, cell_width, padding=cell_width)
    table = distance_classes(grid, max_dist)
    dist = fit_threshold_distribution(p0, table)
    day0, k = ingest.infer_horizon(df)
    scheme = params.period_scheme()
    if rebalance == "derive":
        ev = ingest.derive_availability(df, grid, day0, k)[:4]
    else:
        ev = ingest.perfect_rebalance(df, grid, day0, k)
    timeline = build_timeline(ev, grid, k, scheme)
    trips = ingest.bin_trips(df, grid, scheme, day0, k, rep)
    return simulate.SensitivityDataset(trips=trips, timeline=timeline, table=table, dist=dist, grid=grid)


@main.command("inspect")
@click.argument("archive_path", type=click.Path(exists=True))
@click.option("--period", default=None, help="Period index, 'all', or HH:MM-HH:MM window.")
@click.option("--out", "out_dir", default=None, type=click.Path(), help="Also render figures here.")
def cmd_inspect(archive_path, period, out_dir):
    """Summarize a result archive; optionally re-render its layer maps."""
    try:
        arc = archive_mod.read_archive(archive_path)
        layers = archive_mod.layer_set(arc, period)
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    man = arc.manifest
    cats = pd.Series([c["category"] for c in layers["cells"]]).value_counts()
    click.echo(f"grid: {man['grid']['rows']}x{man['grid']['cols']}, days: {man['days']}")
    click.echo(f"periods shown: {layers['period_labels'][0]} .. {layers['period_labels'][-1]}")
    click.echo("service-level categories:")
    click.echo(cats.to_string())
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save_layer_maps(layers, man["grid"]["rows"], man["grid"]["cols"], out / "layers.png")
        arc.results.to_csv(out / "results.csv", index=False, float_format="%.12g")
        click.echo(f"figures written to {out}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--workspace", default=None, type=click.Path(),
              help=f"Job storage root (or ${WORKSPACE_ENV}).")
@click.option("--frontend", "frontend_dir", default=None, type=click.Path(),
              help="Static directory for the web UI.")
def cmd_serve(host, port, workspace, frontend_dir):
    """Run the HTTP job service (and optionally serve the web UI)."""
    import uvicorn

    from .service import create_app

    app = create_app(workspace=workspace, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
