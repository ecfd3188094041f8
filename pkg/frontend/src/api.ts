// Service client: uploads, polling, layer fetches with a per-(job, window)
// cache so switching a pane's layer never refetches.

import { EstimateParams, JobRecord, LayerSet } from "./types.js";

export interface ClientOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
  pollIntervalMs?: number;
  pollBackoff?: number;
  maxPollIntervalMs?: number;
}

export class ServiceError extends Error {
  constructor(message: string, public fields: Record<string, string> = {}) {
    super(message);
  }
}

/** Client-side mirror of the server's parameter checks so bad values never
 * leave the form. */
export function validateParams(p: EstimateParams): Record<string, string> {
  const errors: Record<string, string> = {};
  if (!(p.cell_width > 0)) errors.cell_width = "cell width must be positive";
  if (!(p.p0 > 0 && p.p0 <= 1)) errors.p0 = "p0 must lie in (0, 1]";
  if (!(p.dist_max >= 0)) errors.dist_max = "maximum distance must be non-negative";
  if (p.service_hours) {
    const [lo, hi] = p.service_hours;
    if (!(lo >= 0 && lo < hi && hi <= 24)) {
      errors.service_hours = "window must satisfy 0 <= start < end <= 24";
    }
  }
  return errors;
}

export class ServiceClient {
  private base: string;
  private fetchFn: typeof fetch;
  private pollInterval: number;
  private pollBackoff: number;
  private maxPollInterval: number;
  private layerCache = new Map<string, LayerSet>();

  constructor(opts: ClientOptions = {}) {
    this.base = (opts.baseUrl ?? "").replace(/\/$/, "");
    this.fetchFn = opts.fetchFn ?? fetch.bind(globalThis);
    this.pollInterval = opts.pollIntervalMs ?? 1000;
    this.pollBackoff = opts.pollBackoff ?? 1.5;
    this.maxPollInterval = opts.maxPollIntervalMs ?? 5000;
  }

  async submitJob(file: Blob, filename: string, params: EstimateParams | {}): Promise<JobRecord> {
    const errors = validateParams({ cell_width: 400, p0: 0.7, dist_max: 1000, ...params });
    if (Object.keys(errors).length) {
      throw new ServiceError("invalid parameters", errors);
    }
    const form = new FormData();
    form.append("file", file, filename);
    form.append("params", JSON.stringify(params));
    const resp = await this.fetchFn(`${this.base}/jobs`, { method: "POST", body: form });
    const body = await resp.json();
    if (!resp.ok) {
      throw new ServiceError("submission rejected", body.errors ?? {});
    }
    return body as JobRecord;
  }

  async getJob(id: string): Promise<JobRecord> {
    const resp = await this.fetchFn(`${this.base}/jobs/${id}`);
    if (!resp.ok) throw new ServiceError(`job ${id}: ${resp.status}`);
    return (await resp.json()) as JobRecord;
  }

  /** Poll with backoff until the job finishes; onUpdate sees every state. */
  async waitForJob(
    id: string,
    onUpdate?: (job: JobRecord) => void,
    sleep: (ms: number) => Promise<void> = defaultSleep,
  ): Promise<JobRecord> {
    let interval = this.pollInterval;
    for (;;) {
      const job = await this.getJob(id);
      onUpdate?.(job);
      if (job.state === "done" || job.state === "failed") return job;
      await sleep(interval);
      interval = Math.min(interval * this.pollBackoff, this.maxPollInterval);
    }
  }

  async getLayers(jobId: string, window: string): Promise<LayerSet> {
    const key = `${jobId}|${window}`;
    const cached = this.layerCache.get(key);
    if (cached) return cached;
    const q = window && window !== "all" ? `?period=${encodeURIComponent(window)}` : "?period=all";
    const resp = await this.fetchFn(`${this.base}/jobs/${jobId}/layers${q}`);
    if (!resp.ok) {
      const body = await resp.json().catch(() => ({}));
      throw new ServiceError(body.detail ?? `layers: ${resp.status}`);
    }
    const layers = (await resp.json()) as LayerSet;
    this.layerCache.set(key, layers);
    return layers;
  }

  cacheSize(): number {
    return this.layerCache.size;
  }

  async downloadArchive(jobId: string): Promise<Blob> {
    const resp = await this.fetchFn(`${this.base}/jobs/${jobId}/archive`);
    if (!resp.ok) throw new ServiceError(`archive: ${resp.status}`);
    return await resp.blob();
  }

  archiveUrl(jobId: string): string {
    return `${this.base}/jobs/${jobId}/archive`;
  }
}

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
