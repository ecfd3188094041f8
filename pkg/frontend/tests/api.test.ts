import { describe, expect, it, vi } from "vitest";

import { ServiceClient, ServiceError, validateParams } from "../src/api.js";
import { LayerSet } from "../src/types.js";

const LAYERS: LayerSet = {
  grid: { rows: 1, cols: 1, cell_width: 400 },
  periods: [0],
  period_labels: ["00:00-01:00"],
  cells: [
    {
      cell: 1, row: 0, col: 0, bounds: [41.8, -71.45, 41.804, -71.445],
      demand: 1, availability: 1, alpha: 1, trips: 1, category: "ok",
    },
  ],
};

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("validateParams", () => {
  it("accepts the defaults", () => {
    expect(validateParams({ cell_width: 400, p0: 0.7, dist_max: 1000 })).toEqual({});
  });

  it("flags each bad field", () => {
    const errors = validateParams({ cell_width: -1, p0: 1.5, dist_max: -2 });
    expect(Object.keys(errors).sort()).toEqual(["cell_width", "dist_max", "p0"]);
  });

  it("checks the service window", () => {
    const errors = validateParams({
      cell_width: 400, p0: 0.7, dist_max: 1000, service_hours: [10, 9],
    });
    expect(errors.service_hours).toBeTruthy();
  });
});

describe("ServiceClient", () => {
  it("rejects invalid params before any network call", async () => {
    const fetchFn = vi.fn();
    const client = new ServiceClient({ fetchFn: fetchFn as unknown as typeof fetch });
    await expect(
      client.submitJob(new Blob(["x"]), "t.csv", { cell_width: 400, p0: 2, dist_max: 1000 }),
    ).rejects.toThrow(ServiceError);
    expect(fetchFn).not.toHaveBeenCalled();
  });

  it("surfaces server field errors", async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ errors: { p0: "nope" } }, 400));
    const client = new ServiceClient({ fetchFn: fetchFn as unknown as typeof fetch });
    try {
      await client.submitJob(new Blob(["x"]), "t.csv", {});
      expect.unreachable();
    } catch (err) {
      expect((err as ServiceError).fields.p0).toBe("nope");
    }
  });

  it("caches layers per (job, window) so pane switches do not refetch", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(LAYERS));
    const client = new ServiceClient({ fetchFn: fetchFn as unknown as typeof fetch });
    await client.getLayers("j1", "all");
    await client.getLayers("j1", "all");
    await client.getLayers("j1", "all");
    expect(fetchFn).toHaveBeenCalledTimes(1);
    await client.getLayers("j1", "12:00-15:00");
    expect(fetchFn).toHaveBeenCalledTimes(2);
    expect(client.cacheSize()).toBe(2);
  });

  it("polls with backoff until done", async () => {
    const states = ["queued", "running", "running", "done"];
    let call = 0;
    const fetchFn = vi.fn(async () =>
      jsonResponse({
        id: "j", state: states[Math.min(call++, states.length - 1)],
        stage: "em", em_iteration: call, restored: false, error: null, filename: "f",
      }),
    );
    const client = new ServiceClient({
      fetchFn: fetchFn as unknown as typeof fetch,
      pollIntervalMs: 10,
      pollBackoff: 2,
      maxPollIntervalMs: 40,
    });
    const sleeps: number[] = [];
    const job = await client.waitForJob("j", undefined, async (ms) => {
      sleeps.push(ms);
    });
    expect(job.state).toBe("done");
    expect(sleeps).toEqual([10, 20, 40]);
  });
});
