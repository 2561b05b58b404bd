// Session-runner end-to-end tests against the real study service.

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { StudyClient } from "../src/api.js";
import { SessionRunner, fetchPreloader } from "../src/session.js";
import { ServiceHandle, fetchReport, startService } from "./service.js";

let service: ServiceHandle;

beforeAll(async () => {
  service = await startService(8931);
}, 90_000);

afterAll(() => {
  service?.stop();
});

function runner(token: string, events = {}) {
  const client = new StudyClient(service.baseUrl);
  return new SessionRunner(client, fetchPreloader(fetch), events, token);
}

describe("full session", () => {
  it("walks all 46 trials and persists exactly 46 responses", async () => {
    const progress: Array<[number, number]> = [];
    let completed = false;
    const r = runner("participant-full", {
      onProgress: (a: number, n: number) => progress.push([a, n]),
      onComplete: () => (completed = true),
    });
    await r.start();
    expect(r.session.n_trials).toBe(46);
    while (!r.complete) {
      const ok = await r.choose(Math.random() < 0.5 ? "left" : "right");
      expect(ok).toBe(true);
    }
    expect(completed).toBe(true);
    expect(progress.at(-1)).toEqual([46, 46]);

    const report = await fetchReport(service.baseUrl);
    const mySession = r.session.session_id;
    const res = await fetch(`${service.baseUrl}/trials/${mySession}/45`);
    expect((await res.json()).answered).toBe(true);
    const totalResponses = Object.values(report.per_pair)
      .flatMap((t) => Object.values(t))
      .reduce((a, b) => a + b, 0);
    expect(totalResponses).toBeGreaterThanOrEqual(46);
  }, 120_000);

  it("rapid double choice records exactly one response", async () => {
    const r = runner("participant-doubleclick");
    await r.start();
    const firstPair = r.trial!.pair_id;
    // two clicks in the same tick: the lock must swallow the second
    const [first, second] = await Promise.all([r.choose("left"), r.choose("right")]);
    expect([first, second].filter(Boolean)).toHaveLength(1);
    expect(r.answered).toBe(1);
    // the server also rejects a forced duplicate for the same pair
    const client = new StudyClient(service.baseUrl);
    const dup = await client.postResponse(r.session.session_id, firstPair, "right");
    expect(dup.status).toBe(409);
  }, 60_000);

  it("resumes at the first unanswered trial after a refresh", async () => {
    const token = "participant-refresh";
    const first = runner(token);
    await first.start();
    for (let i = 0; i < 5; i++) await first.choose("left");
    expect(first.answered).toBe(5);

    // simulate a refresh: brand-new runner, same participant token
    const second = runner(token);
    await second.start();
    expect(second.session.session_id).toBe(first.session.session_id);
    expect(second.answered).toBe(5);
    expect(second.trial!.index).toBe(second.session.first_unanswered);
    expect(second.trial!.answered).toBe(false);
    for (let i = 0; i < 5; i++) expect(second.session.trials[i].answered).toBe(true);
  }, 60_000);

  it("queues responses across a network failure and flushes in order", async () => {
    let failNext = 0;
    const flaky: typeof fetch = async (input, init) => {
      const url = String(input);
      if (url.endsWith("/responses") && failNext > 0) {
        failNext -= 1;
        throw new TypeError("network down");
      }
      return fetch(input, init);
    };
    const client = new StudyClient(service.baseUrl, flaky);
    const queueSizes: number[] = [];
    const r = new SessionRunner(client, fetchPreloader(fetch), {
      onQueueChange: (n: number) => queueSizes.push(n),
    }, "participant-offline", 50);
    await r.start();
    failNext = 2;
    await r.choose("left");
    await r.choose("right");
    expect(r.pendingQueue).toBeGreaterThan(0);
    await r.choose("left"); // flushes the queue before submitting
    expect(r.pendingQueue).toBe(0);
    expect(r.answered).toBe(3);
    const check = await fetch(`${service.baseUrl}/trials/${r.session.session_id}/0`);
    expect((await check.json()).answered).toBe(true);
  }, 60_000);
});
