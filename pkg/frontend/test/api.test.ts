import { afterEach, describe, expect, it, vi } from "vitest";
import {
  ApiError,
  latestWins,
  predict,
  whatif,
  health,
  type PredictRequest,
} from "../src/api";

const REQ: PredictRequest = {
  screenshot: "aGVsbG8=",
  bbox: [100, 200, 60, 40],
  target_type: "link",
  n_candidates: 12,
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("predict", () => {
  it("posts the request body to /predict and returns the parsed body", async () => {
    const resp = {
      normalized: 0.2,
      seconds: 4.2,
      class_probs: [0.2, 0.2, 0.2, 0.2, 0.2],
      attention: [0, 1, 2, 3],
      grid: 2,
    };
    const fetchMock = vi.fn(async (url: string, init: RequestInit) => {
      expect(url).toBe("http://svc/predict");
      expect(init.method).toBe("POST");
      expect(JSON.parse(init.body as string)).toEqual(REQ);
      return jsonResponse(200, resp);
    });
    vi.stubGlobal("fetch", fetchMock);
    await expect(predict("http://svc", REQ)).resolves.toEqual(resp);
  });

  it("surfaces field-level 400s as ApiError", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () =>
        jsonResponse(400, { error: { field: "bbox", message: "bbox exceeds page" } }),
      ),
    );
    const err = await predict("http://svc", REQ).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.field).toBe("bbox");
    expect(err.message).toBe("bbox exceeds page");
  });

  it("keeps the status message when the error body is not JSON", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => new Response("boom", { status: 503 })));
    const err = await predict("http://svc", REQ).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(503);
    expect(err.message).toMatch(/503/);
  });
});

describe("whatif", () => {
  it("includes the grid spec in the body", async () => {
    const fetchMock = vi.fn(async (url: string, init: RequestInit) => {
      expect(url).toBe("http://svc/whatif");
      expect(JSON.parse(init.body as string).grid).toEqual({ rows: 2, cols: 3 });
      return jsonResponse(200, {
        rows: 2,
        cols: 3,
        x_positions: [0, 1, 2],
        y_positions: [0, 1],
        seconds: [
          [1, 2, 3],
          [4, 5, 6],
        ],
      });
    });
    vi.stubGlobal("fetch", fetchMock);
    const resp = await whatif("http://svc", { ...REQ, grid: { rows: 2, cols: 3 } });
    expect(resp.seconds[1][2]).toBe(6);
  });
});

describe("health", () => {
  it("parses the status body", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse(200, { status: "ok", model_version: "abc123def456" })),
    );
    await expect(health("http://svc")).resolves.toEqual({
      status: "ok",
      model_version: "abc123def456",
    });
  });
});

describe("latestWins", () => {
  it("aborts the previous in-flight call and drops its result", async () => {
    const signals: AbortSignal[] = [];
    const wrapped = latestWins(async (signal: AbortSignal, value: number) => {
      signals.push(signal);
      await new Promise((r) => setTimeout(r, 5));
      return value;
    });
    const first = wrapped(1);
    const second = wrapped(2);
    expect(signals[0].aborted).toBe(true);
    expect(signals[1].aborted).toBe(false);
    await expect(first).resolves.toBeNull();
    await expect(second).resolves.toBe(2);
  });

  it("swallows errors from aborted calls but not from live ones", async () => {
    const wrapped = latestWins(async (signal: AbortSignal, fail: boolean) => {
      await new Promise((r) => setTimeout(r, 5));
      if (signal.aborted) throw new Error("aborted fetch");
      if (fail) throw new Error("real failure");
      return "ok";
    });
    const stale = wrapped(false);
    const live = wrapped(true);
    await expect(stale).resolves.toBeNull();
    await expect(live).rejects.toThrow("real failure");
  });
});
