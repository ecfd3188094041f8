// Wire types mirroring the service's JSON payloads.

export interface JobRecord {
  id: string;
  state: "queued" | "running" | "done" | "failed";
  stage: string;
  em_iteration: number;
  restored: boolean;
  error: string | null;
  filename: string;
}

export interface LayerCell {
  cell: number;
  row: number;
  col: number;
  /** [lat_min, lon_min, lat_max, lon_max] */
  bounds: [number, number, number, number];
  /** estimated arrivals per period; null when not estimable */
  demand: number | null;
  availability: number;
  alpha: number;
  trips: number;
  category: "ok" | "low_service" | "insufficient_data";
}

export interface LayerSet {
  grid: { rows: number; cols: number; cell_width: number };
  periods: number[];
  period_labels: string[];
  cells: LayerCell[];
}

export interface EstimateParams {
  cell_width: number;
  p0: number;
  dist_max: number;
  service_hours?: [number, number];
  rebalance?: "perfect" | "derive";
}

export type LayerKind = "demand" | "availability" | "trips" | "service";

export const LAYER_KINDS: LayerKind[] = ["demand", "availability", "trips", "service"];

export const LAYER_TITLES: Record<LayerKind, string> = {
  demand: "Estimated demand",
  availability: "Availability",
  trips: "Observed trips",
  service: "Service level",
};
