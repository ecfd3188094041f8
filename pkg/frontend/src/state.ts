// View state: which job each pane shows and with which layer. Kept as pure
// transition functions so the invariants are unit-testable.

import { LayerKind } from "./types.js";

export interface PaneState {
  layer: LayerKind;
}

export interface JobEntry {
  id: string;
  label: string;
  state: string;
}

export interface ViewState {
  jobs: JobEntry[];
  selectedJob: string | null;
  /** left and right panes choose layers independently */
  panes: [PaneState, PaneState];
  /** both panes share one period window */
  periodWindow: string;
}

export function initialState(): ViewState {
  return {
    jobs: [],
    selectedJob: null,
    panes: [{ layer: "demand" }, { layer: "service" }],
    periodWindow: "all",
  };
}

/** A finished job joins the list without stealing the current selection
 * unless nothing is selected yet; prior runs stay comparable. */
export function addJob(state: ViewState, job: JobEntry): ViewState {
  const jobs = [...state.jobs.filter((j) => j.id !== job.id), job];
  return {
    ...state,
    jobs,
    selectedJob: state.selectedJob ?? (job.state === "done" ? job.id : null),
  };
}

export function updateJob(state: ViewState, job: JobEntry): ViewState {
  const jobs = state.jobs.map((j) => (j.id === job.id ? job : j));
  const selected =
    state.selectedJob === null && job.state === "done" ? job.id : state.selectedJob;
  return { ...state, jobs, selectedJob: selected };
}

export function selectJob(state: ViewState, id: string): ViewState {
  if (!state.jobs.some((j) => j.id === id)) return state;
  return { ...state, selectedJob: id };
}

export function setPaneLayer(state: ViewState, pane: 0 | 1, layer: LayerKind): ViewState {
  const panes: [PaneState, PaneState] = [
    pane === 0 ? { layer } : state.panes[0],
    pane === 1 ? { layer } : state.panes[1],
  ];
  return { ...state, panes };
}

export function setPeriodWindow(state: ViewState, window: string): ViewState {
  return { ...state, periodWindow: window };
}

/** Validate a window selector before it reaches the server: "all", a period
 * index, or HH:MM-HH:MM. */
export function isValidWindow(window: string): boolean {
  if (window === "all" || /^\d+$/.test(window)) return true;
  return /^\d{1,2}(:\d{2})?-\d{1,2}(:\d{2})?$/.test(window);
}
