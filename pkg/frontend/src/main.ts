// Application wiring: upload form, job polling, side-by-side layer panes.

import { ServiceClient, ServiceError, validateParams } from "./api.js";
import { buildRenderModel } from "./layers.js";
import { paintLegend, paintPane } from "./render.js";
import {
  ViewState,
  addJob,
  initialState,
  isValidWindow,
  selectJob,
  setPaneLayer,
  setPeriodWindow,
  updateJob,
} from "./state.js";
import { EstimateParams, LAYER_KINDS, LAYER_TITLES, LayerKind } from "./types.js";

const client = new ServiceClient({ baseUrl: "" });
let state: ViewState = initialState();

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function readParams(): EstimateParams {
  return {
    cell_width: Number(($("cell-width") as HTMLInputElement).value),
    p0: Number(($("p0") as HTMLInputElement).value),
    dist_max: Number(($("dist-max") as HTMLInputElement).value),
    rebalance: ($("rebalance") as HTMLSelectElement).value as "perfect" | "derive",
  };
}

function showFieldErrors(errors: Record<string, string>): void {
  for (const field of ["cell-width", "p0", "dist-max"]) {
    const key = field.replace("-", "_");
    const slot = $(`err-${field}`);
    slot.textContent = errors[key] ?? "";
  }
}

function setStatus(text: string): void {
  $("status").textContent = text;
}

async function submit(): Promise<void> {
  const input = $("trips-file") as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) {
    setStatus("choose a trip file or a downloaded archive first");
    return;
  }
  const params = readParams();
  const errors = validateParams(params);
  showFieldErrors(errors);
  if (Object.keys(errors).length) return;

  const isArchive = file.name.endsWith(".zip");
  setStatus(`uploading ${file.name}…`);
  try {
    const job = await client.submitJob(file, file.name, isArchive ? {} : params);
    state = addJob(state, { id: job.id, label: `${file.name} (${job.id})`, state: job.state });
    renderJobList();
    const final = await client.waitForJob(job.id, (j) => {
      const stage = j.stage ? `: ${j.stage}` : "";
      const iter = j.em_iteration ? ` (iteration ${j.em_iteration})` : "";
      setStatus(`job ${j.id} ${j.state}${stage}${iter}`);
      state = updateJob(state, { id: j.id, label: `${file.name} (${j.id})`, state: j.state });
    });
    renderJobList();
    if (final.state === "failed") {
      setStatus(`job ${final.id} failed: ${final.error}`);
      return;
    }
    setStatus(`job ${final.id} done${final.restored ? " (restored from archive)" : ""}`);
    state = selectJob(state, final.id);
    await renderPanes();
  } catch (err) {
    if (err instanceof ServiceError && Object.keys(err.fields).length) {
      showFieldErrors(err.fields);
      setStatus("submission rejected; fix the highlighted fields");
    } else {
      setStatus(`error: ${(err as Error).message}`);
    }
  }
}

function renderJobList(): void {
  const select = $("job-select") as HTMLSelectElement;
  select.innerHTML = "";
  for (const job of state.jobs) {
    const opt = document.createElement("option");
    opt.value = job.id;
    opt.textContent = `${job.label} [${job.state}]`;
    if (job.id === state.selectedJob) opt.selected = true;
    select.appendChild(opt);
  }
  ($("download") as HTMLAnchorElement).style.visibility = state.selectedJob
    ? "visible"
    : "hidden";
}

async function renderPanes(): Promise<void> {
  renderJobList();
  if (!state.selectedJob) return;
  const win = state.periodWindow;
  let layers;
  try {
    layers = await client.getLayers(state.selectedJob, win);
  } catch (err) {
    setStatus(`layer fetch failed (retry by reselecting): ${(err as Error).message}`);
    return;
  }
  $("window-label").textContent = `periods ${layers.period_labels[0]} – ${
    layers.period_labels[layers.period_labels.length - 1]
  }`;
  for (const pane of [0, 1] as const) {
    const kind = state.panes[pane].layer;
    const model = buildRenderModel(layers, kind);
    paintPane(
      $(`map-${pane}`) as unknown as SVGSVGElement,
      model,
      layers.cells,
      { width: 520, height: 520, pad: 8 },
    );
    paintLegend($(`legend-${pane}`), model);
    ($(`pane-title-${pane}`) as HTMLElement).textContent = LAYER_TITLES[kind];
  }
  const dl = $("download") as HTMLAnchorElement;
  dl.href = client.archiveUrl(state.selectedJob);
  dl.download = `demandgrid-${state.selectedJob}.zip`;
}

function wirePaneSelectors(): void {
  for (const pane of [0, 1] as const) {
    const select = $(`layer-${pane}`) as HTMLSelectElement;
    for (const kind of LAYER_KINDS) {
      const opt = document.createElement("option");
      opt.value = kind;
      opt.textContent = LAYER_TITLES[kind];
      if (kind === state.panes[pane].layer) opt.selected = true;
      select.appendChild(opt);
    }
    select.addEventListener("change", () => {
      state = setPaneLayer(state, pane, select.value as LayerKind);
      void renderPanes();
    });
  }
}

function init(): void {
  wirePaneSelectors();
  $("run").addEventListener("click", () => void submit());
  ($("job-select") as HTMLSelectElement).addEventListener("change", (e) => {
    state = selectJob(state, (e.target as HTMLSelectElement).value);
    void renderPanes();
  });
  const windowInput = $("period-window") as HTMLInputElement;
  $("apply-window").addEventListener("click", () => {
    const value = windowInput.value.trim() || "all";
    if (!isValidWindow(value)) {
      setStatus(`invalid period window ${value}; use "all", an index, or HH:MM-HH:MM`);
      return;
    }
    state = setPeriodWindow(state, value);
    void renderPanes();
  });
  setStatus("upload a trip file to begin");
}

init();
