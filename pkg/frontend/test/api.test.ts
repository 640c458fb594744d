import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, ConflictError, ReviewApi } from "../src/api.js";

function stubFetch(status: number, payload: unknown): void {
  vi.stubGlobal("fetch", vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    text: async () => JSON.stringify(payload),
  })));
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ReviewApi", () => {
  it("returns the new revision on an accepted verdict", async () => {
    stubFetch(200, { revision: 4, complete: false });
    const api = new ReviewApi("http://x");
    await expect(api.verdict("demo", 0, 0, "accurate", 3)).resolves.toBe(4);
    const call = (fetch as ReturnType<typeof vi.fn>).mock.calls[0];
    expect(call[0]).toBe("http://x/api/sessions/demo/verdict");
    expect(JSON.parse(call[1].body)).toEqual({
      sentence: 0, piece: 0, verdict: "accurate", revision: 3,
    });
  });

  it("raises ConflictError on 409 so the view refreshes", async () => {
    stubFetch(409, { error: "revision mismatch: expected 3, have 7" });
    const api = new ReviewApi();
    await expect(api.verdict("demo", 0, 0, "accurate", 3)).rejects.toBeInstanceOf(ConflictError);
  });

  it("raises ApiError with the server message otherwise", async () => {
    stubFetch(400, { error: "piece index 9 out of range" });
    const api = new ReviewApi();
    await expect(api.splitPiece("demo", 0, 9, 1, 0)).rejects.toMatchObject({
      name: "ApiError",
      message: expect.stringContaining("piece index 9"),
    });
  });

  it("lists sessions", async () => {
    stubFetch(200, { sessions: [{ session_id: "demo", revision: 0, complete: true, pairs: 10, sentences: 100 }] });
    const api = new ReviewApi();
    const sessions = await api.listSessions();
    expect(sessions).toHaveLength(1);
    expect(sessions[0].session_id).toBe("demo");
  });

  it("raises ApiError on non-JSON payloads", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => ({
      ok: true, status: 200, text: async () => "<html>oops</html>",
    })));
    const api = new ReviewApi();
    await expect(api.listSessions()).rejects.toBeInstanceOf(ApiError);
  });
});
