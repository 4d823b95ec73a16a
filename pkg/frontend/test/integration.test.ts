/**
 * Live round trip: a served 20-sample pool in human mode is labeled entirely
 * through the UI client/board code (one card double-clicked), the run
 * completes, and the committed labels equal the posted votes exactly.
 */

import assert from "node:assert/strict";
import { spawn } from "node:child_process";
import { mkdtempSync, readFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { test } from "node:test";

import { ApiClient } from "../src/api.js";
import { Board } from "../src/board.js";

const HERE = dirname(fileURLToPath(import.meta.url));
// dist/test/ -> the python helper sits in the source test directory
const HELPER = join(HERE, "..", "..", "test", "serve_pool.py");

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

test("human-loop round trip through the UI client", { timeout: 120_000 }, async () => {
  const workDir = mkdtempSync(join(tmpdir(), "alpool-ui-"));
  const labelsPath = join(workDir, "labels.json");
  const child = spawn("python3", [HELPER, labelsPath], { stdio: ["ignore", "pipe", "inherit"] });

  let port = 0;
  let done = false;
  let stdoutBuffer = "";
  child.stdout.setEncoding("utf8");
  child.stdout.on("data", (chunk: string) => {
    stdoutBuffer += chunk;
    const portMatch = stdoutBuffer.match(/PORT (\d+)/);
    if (portMatch) port = Number(portMatch[1]);
    if (stdoutBuffer.includes("DONE")) done = true;
  });

  try {
    const deadline = Date.now() + 90_000;
    while (port === 0) {
      assert.ok(Date.now() < deadline, "server never reported its port");
      await sleep(50);
    }
    const api = new ApiClient(`http://127.0.0.1:${port}`);
    const board = new Board(api);
    const posted = new Map<string, { hard: number | null; votes: number[][] | null }>();
    let doubleClicked = false;
    let usedVotesCard = false;

    while (!done) {
      assert.ok(Date.now() < deadline, "run did not complete in time");
      const progress = await api.getProgress().catch(() => null);
      if (progress?.terminal) break;
      const entries = await api.getQueries().catch(() => []);
      board.sync(entries);
      for (const card of board.openCards()) {
        const id = card.entry.sample_id;
        const classIndex = Number(id.slice(1)) % 4;
        if (!usedVotesCard) {
          // one card exercises the multi-label vote path
          board.setMulti(id, true);
          board.toggleClass(id, classIndex);
          board.toggleClass(id, (classIndex + 1) % 4);
          usedVotesCard = true;
          const votes = [[...board.cards.get(id)!.selected]];
          await board.submit(id, "web-tester");
          posted.set(id, { hard: null, votes });
        } else if (!doubleClicked) {
          board.toggleClass(id, classIndex);
          doubleClicked = true;
          const [a, b] = await Promise.all([
            board.submit(id, "web-tester"),
            board.submit(id, "web-tester"),
          ]);
          assert.deepEqual([a, b].sort(), ["done", "submitting"]);
          posted.set(id, { hard: classIndex, votes: null });
        } else {
          board.toggleClass(id, classIndex);
          await board.submit(id, "web-tester");
          posted.set(id, { hard: classIndex, votes: null });
        }
      }
      await sleep(100);
    }

    while (!existsSync(labelsPath)) {
      assert.ok(Date.now() < deadline, "labels file never appeared");
      await sleep(100);
    }
    await sleep(200); // the helper finishes the write before printing DONE
    const committed = JSON.parse(readFileSync(labelsPath, "utf8")) as Record<
      string,
      { hard: number | null; votes: number[][] | null; annotator_ids: string[] }
    >;

    assert.equal(Object.keys(committed).length, 5); // init 1 + 2 rounds of 2
    assert.deepEqual(new Set(Object.keys(committed)), new Set(posted.keys()));
    for (const [id, record] of Object.entries(committed)) {
      const sent = posted.get(id)!;
      assert.equal(record.hard, sent.hard, `${id} hard`);
      if (sent.votes === null) {
        assert.equal(record.votes, null, `${id} votes`);
      } else {
        assert.deepEqual(record.votes, sent.votes, `${id} votes`);
      }
      assert.deepEqual(record.annotator_ids, ["web-tester"]);
    }
  } finally {
    child.kill("SIGKILL");
  }
});
