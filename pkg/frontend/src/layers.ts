// Pure layer math: every number rendered by the UI is derived here from the
// archive-backed layer payload; no estimation happens client-side.

import { LayerCell, LayerKind, LayerSet } from "./types.js";

export const SERVICE_COLORS = {
  ok: "#74add1",
  low_service: "#d73027",
  insufficient_data: "#d9d9d9",
} as const;

/** Sequential palette for numeric layers, light to dark. */
export const NUMERIC_PALETTE = [
  "#ffffcc",
  "#c7e9b4",
  "#7fcdbb",
  "#41b6c4",
  "#2c7fb8",
  "#253494",
];

const NO_DATA_COLOR = "#f0f0f0";

/** Quantile breakpoints (upper edges) splitting values into `n` bins. */
export function quantileBins(values: number[], n: number): number[] {
  const sorted = values.filter((v) => Number.isFinite(v)).sort((a, b) => a - b);
  if (sorted.length === 0) return [];
  const edges: number[] = [];
  for (let i = 1; i <= n; i++) {
    const pos = (i / n) * (sorted.length - 1);
    const lo = Math.floor(pos);
    const frac = pos - lo;
    const v = lo + 1 < sorted.length ? sorted[lo] * (1 - frac) + sorted[lo + 1] * frac : sorted[lo];
    edges.push(v);
  }
  // collapse duplicate edges so constant layers still render
  return edges.filter((v, i) => i === 0 || v > edges[i - 1]);
}

export function binIndex(value: number, edges: number[]): number {
  for (let i = 0; i < edges.length; i++) {
    if (value <= edges[i]) return i;
  }
  return Math.max(edges.length - 1, 0);
}

export function numericValue(cell: LayerCell, kind: LayerKind): number | null {
  switch (kind) {
    case "demand":
      return cell.demand;
    case "availability":
      return cell.availability;
    case "trips":
      return cell.trips;
    default:
      return null;
  }
}

export interface RenderedCell {
  cell: number;
  row: number;
  col: number;
  bounds: [number, number, number, number];
  value: number | null;
  color: string;
  label: string;
}

export interface RenderModel {
  kind: LayerKind;
  cells: RenderedCell[];
  /** legend entries as [color, label] pairs */
  legend: [string, string][];
}

/** Everything a pane needs to paint: per-cell colors plus the legend. */
export function buildRenderModel(layers: LayerSet, kind: LayerKind): RenderModel {
  if (kind === "service") {
    const cells = layers.cells.map((c) => ({
      cell: c.cell,
      row: c.row,
      col: c.col,
      bounds: c.bounds,
      value: null,
      color: SERVICE_COLORS[c.category],
      label: c.category,
    }));
    const legend: [string, string][] = [
      [SERVICE_COLORS.low_service, "low service (demand >= 2x trips)"],
      [SERVICE_COLORS.ok, "ok"],
      [SERVICE_COLORS.insufficient_data, "insufficient data"],
    ];
    return { kind, cells, legend };
  }

  const values = layers.cells
    .map((c) => numericValue(c, kind))
    .filter((v): v is number => v !== null);
  const edges = quantileBins(values, NUMERIC_PALETTE.length);
  const palette = NUMERIC_PALETTE.slice(0, Math.max(edges.length, 1));
  const cells = layers.cells.map((c) => {
    const v = numericValue(c, kind);
    if (v === null) {
      return {
        cell: c.cell, row: c.row, col: c.col, bounds: c.bounds,
        value: null, color: NO_DATA_COLOR, label: "no estimate",
      };
    }
    const idx = edges.length ? binIndex(v, edges) : 0;
    return {
      cell: c.cell, row: c.row, col: c.col, bounds: c.bounds,
      value: v, color: palette[Math.min(idx, palette.length - 1)],
      label: formatValue(v),
    };
  });
  const legend: [string, string][] = edges.map((e, i) => [
    palette[Math.min(i, palette.length - 1)],
    i === 0 ? `<= ${formatValue(e)}` : `${formatValue(edges[i - 1])} - ${formatValue(e)}`,
  ]);
  legend.push([NO_DATA_COLOR, "no estimate"]);
  return { kind, cells, legend };
}

export function formatValue(v: number): string {
  if (v === 0) return "0";
  if (Math.abs(v) >= 100) return v.toFixed(0);
  if (Math.abs(v) >= 1) return v.toFixed(2);
  return v.toPrecision(2);
}

export interface Viewport {
  width: number;
  height: number;
  pad: number;
}

export interface CellRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Map cell lat/lon bounds onto SVG pixels. North is up, so latitude maxima
 * land at the smallest y. All cells share one bounding box per layer set.
 */
export function projectCells(
  cells: { bounds: [number, number, number, number] }[],
  vp: Viewport,
): CellRect[] {
  if (!cells.length) return [];
  const latMin = Math.min(...cells.map((c) => c.bounds[0]));
  const lonMin = Math.min(...cells.map((c) => c.bounds[1]));
  const latMax = Math.max(...cells.map((c) => c.bounds[2]));
  const lonMax = Math.max(...cells.map((c) => c.bounds[3]));
  const sx = (vp.width - 2 * vp.pad) / Math.max(lonMax - lonMin, 1e-12);
  const sy = (vp.height - 2 * vp.pad) / Math.max(latMax - latMin, 1e-12);
  return cells.map((c) => {
    const [la0, lo0, la1, lo1] = c.bounds;
    return {
      x: vp.pad + (lo0 - lonMin) * sx,
      y: vp.pad + (latMax - la1) * sy,
      w: (lo1 - lo0) * sx,
      h: (la1 - la0) * sy,
    };
  });
}

/** Values shown in a cell tooltip, independent of the selected layer. */
export function cellTooltip(cell: LayerCell): string {
  const demand = cell.demand === null ? "n/a" : formatValue(cell.demand);
  return [
    `cell ${cell.cell} (r${cell.row}, c${cell.col})`,
    `demand ${demand}/period`,
    `trips ${formatValue(cell.trips)}/period`,
    `available ${(cell.availability * 100).toFixed(0)}% of time`,
    `finds-vehicle prob ${formatValue(cell.alpha)}`,
    cell.category,
  ].join("\n");
}
