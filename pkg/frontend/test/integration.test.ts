/**
 * End-to-end annotator flow against a live guard service.
 *
 * Spawns the service and a queue-mode active-learning run, then drives the
 * review exactly as the browser UI does: server-fetched labels, the keyboard
 * mapping, the optimistic state machine, and the API client. Verifies that
 * stats update and that each growth round of the loop consumed exactly the
 * set of accepted decisions.
 */

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { GuardApi } from "../src/api.js";
import { actionForKey } from "../src/keyboard.js";
import {
  QueueState,
  beginDecision,
  decisionSucceeded,
  focusedItem,
  initialState,
  refreshItems,
} from "../src/state.js";

const PORT = 8917;
const BASE = `http://127.0.0.1:${PORT}`;

let workdir: string;
let serveProc: ChildProcess | undefined;
let loopProc: ChildProcess | undefined;
let loopExit: Promise<number>;

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

async function waitForHealth(api: GuardApi, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const health = await api.health();
      if (health.status === "ok") return;
    } catch {
      // not up yet
    }
    await sleep(150);
  }
  throw new Error("guard service never became healthy");
}

beforeAll(() => {
  workdir = mkdtempSync(join(tmpdir(), "sfw-guard-ui-"));
  const fixture = spawnSync(
    "python3",
    [join(__dirname, "make_fixture.py"), workdir],
    { encoding: "utf-8" },
  );
  if (fixture.status !== 0) {
    throw new Error(`fixture generation failed: ${fixture.stderr}`);
  }

  serveProc = spawn("python3", [
    "-m", "sfw_guard.cli", "serve",
    "--model", join(workdir, "model.json"),
    "--queue", join(workdir, "queue.jsonl"),
    "--port", String(PORT),
  ], { stdio: "ignore" });

  loopProc = spawn("python3", [
    "-m", "sfw_guard.cli", "al-run",
    "--labeled", join(workdir, "labeled.jsonl"),
    "--unlabeled", join(workdir, "unlabeled.jsonl"),
    "--test", join(workdir, "test.jsonl"),
    "--output", join(workdir, "final.json"),
    "--review-mode", "queue",
    "--queue", join(workdir, "queue.jsonl"),
    "--run-log", join(workdir, "run.jsonl"),
    "--target-accuracy", "0.95", "--confidence", "0.9", "--max-rounds", "4",
    "--ngram", "1,1", "--no-stopwords",
    "--epochs", "400", "--learning-rate", "3.0", "--l2-lambda", "1e-5",
    "--poll-interval", "0.1", "--review-timeout", "180", "--seed", "0",
  ], { stdio: "ignore" });
  loopExit = new Promise((resolve) => loopProc!.on("exit", (code) => resolve(code ?? -1)));
}, 120_000);

afterAll(() => {
  loopProc?.kill();
  serveProc?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("annotator flow against the live service", () => {
  it("reviews queue-mode rounds via the keyboard path and the loop consumes exactly the accepted set", async () => {
    const api = new GuardApi(BASE);
    await waitForHealth(api, 60_000);

    // labels always come from the service, never invented client-side
    const labels = await api.labels();
    expect(labels).toHaveLength(9);

    let state: QueueState = initialState();
    const acceptedByRound = new Map<number, number>();
    const rejectedByRound = new Map<number, number>();
    let decisions = 0;
    let loopDone = false;
    void loopExit.then(() => {
      loopDone = true;
    });

    const deadline = Date.now() + 150_000;
    while (!loopDone && Date.now() < deadline) {
      const items = await api.queue(50);
      state = refreshItems(state, items);

      while (focusedItem(state)) {
        const item = focusedItem(state)!;
        // deterministic annotator: reject every 10th item, relabel (to the
        // service-proposed label) every 7th, accept the rest
        const n = Number(item.id.replace(/\D/g, "") || "0");
        let key: string;
        if (n % 10 === 3) key = "x";
        else if (n % 7 === 2) key = String(labels.indexOf(item.proposed) + 1);
        else key = " ";

        const action = actionForKey(key, labels.length);
        expect(action).not.toBeNull();
        let begun;
        if (action!.type === "accept") begun = beginDecision(state, item.id, "accept");
        else if (action!.type === "reject") begun = beginDecision(state, item.id, "reject");
        else if (action!.type === "relabel")
          begun = beginDecision(state, item.id, "relabel", labels[action!.labelIndex]);
        else break;
        expect(begun).not.toBeNull();
        state = begun!.state;

        const result = await api.decide(
          begun!.decision.id,
          begun!.decision.action,
          begun!.decision.label,
        );
        if (result.kind === "ok") {
          state = decisionSucceeded(state, item.id);
          decisions += 1;
          const bucket = result.state === "rejected" ? rejectedByRound : acceptedByRound;
          bucket.set(item.round, (bucket.get(item.round) ?? 0) + 1);
        } else if (result.kind === "conflict" || result.kind === "gone") {
          state = decisionSucceeded(state, item.id); // authoritative elsewhere
        } else {
          throw new Error(`decision failed: ${JSON.stringify(result)}`);
        }
      }
      await sleep(100);
    }

    expect(loopDone).toBe(true);
    expect(await loopExit).toBe(0);
    expect(decisions).toBeGreaterThan(0);

    // stats reflect the decisions we made
    const stats = await api.stats();
    const statsAccepted = (stats.by_state.accepted ?? 0) + (stats.by_state.relabeled ?? 0);
    const trackedAccepted = [...acceptedByRound.values()].reduce((a, b) => a + b, 0);
    const trackedRejected = [...rejectedByRound.values()].reduce((a, b) => a + b, 0);
    expect(statsAccepted).toBe(trackedAccepted);
    expect(stats.by_state.rejected ?? 0).toBe(trackedRejected);
    expect(stats.by_state.pending ?? 0).toBe(0);

    // every growth round of the loop consumed exactly the accepted set
    const rounds = readFileSync(join(workdir, "run.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line) as {
        round: number;
        labeled_before: number;
        labeled_after: number;
        accepted: number;
        rejected: number;
        accuracy: number;
      });
    for (const round of rounds) {
      if (round.accepted > 0 || round.rejected > 0) {
        expect(round.accepted).toBe(acceptedByRound.get(round.round) ?? 0);
        expect(round.rejected).toBe(rejectedByRound.get(round.round) ?? 0);
        expect(round.labeled_after).toBe(round.labeled_before + round.accepted);
      }
    }
    expect(rounds[rounds.length - 1]!.accuracy).toBeGreaterThanOrEqual(0.95);
  }, 180_000);
});
