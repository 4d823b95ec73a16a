import assert from "node:assert/strict";
import { test } from "node:test";

import { ApiClient, LabelPost } from "../src/api.js";

function fakeFetch(status: number, payload: unknown, calls?: Array<{ url: string; init?: RequestInit }>) {
  return (async (url: RequestInfo | URL, init?: RequestInit) => {
    calls?.push({ url: String(url), init });
    return new Response(JSON.stringify(payload), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }) as typeof fetch;
}

test("getQueries returns the entry list", async () => {
  const entries = [{ sample_id: "s1", feature_summary: { dims: 2, min: 0, max: 1, mean: 0.5, head: [0, 1] }, audio_ref: null, class_names: ["a", "b"], iteration: 1 }];
  const api = new ApiClient("", fakeFetch(200, entries));
  assert.deepEqual(await api.getQueries(), entries);
});

test("getProgress throws on server error", async () => {
  const api = new ApiClient("", fakeFetch(500, { error: "boom" }));
  await assert.rejects(() => api.getProgress(), /HTTP 500/);
});

test("postLabel success carries the payload", async () => {
  const api = new ApiClient("", fakeFetch(200, { status: "accepted", sample_id: "s1" }));
  const body: LabelPost = { sample_id: "s1", annotator_id: "me", hard: 2, idempotency_key: "k" };
  const result = await api.postLabel(body);
  assert.ok(result.ok);
  assert.equal(result.data.sample_id, "s1");
});

test("postLabel failure surfaces the server message", async () => {
  const api = new ApiClient("", fakeFetch(409, { error: "id 's1' already labeled" }));
  const result = await api.postLabel({ sample_id: "s1", annotator_id: "me", hard: 0, idempotency_key: "k" });
  assert.ok(!result.ok);
  assert.equal(result.status, 409);
  assert.match(result.error, /already labeled/);
});

test("token is sent when configured", async () => {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const api = new ApiClient("", fakeFetch(200, [], calls), "sekrit");
  await api.getQueries();
  const headers = calls[0].init?.headers as Record<string, string>;
  assert.equal(headers["X-Annotator-Token"], "sekrit");
});
