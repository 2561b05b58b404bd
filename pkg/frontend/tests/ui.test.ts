// @vitest-environment jsdom
//
// Headless-browser test: the DOM layer drives a complete session against the
// real service. jsdom never fires image onload, so preloading is injected
// with the HTTP-backed preloader (which also verifies every image URL
// resolves before the trial unlocks).

import { afterAll, afterEach, beforeAll, describe, expect, it } from "vitest";

import { StudyClient } from "../src/api.js";
import { fetchPreloader } from "../src/session.js";
import { StudyUi } from "../src/ui.js";
import { ServiceHandle, startService } from "./service.js";

let service: ServiceHandle;
let mounted: StudyUi[] = [];

beforeAll(async () => {
  service = await startService(8932);
}, 90_000);

afterEach(async () => {
  // drain in-flight trial advances, then drop handlers so tests stay isolated
  for (const ui of mounted) {
    await waitFor(() => ui.runner.choosable || ui.runner.complete || ui.runner.trial === null, 15_000).catch(() => {});
    ui.dispose();
  }
  mounted = [];
});

afterAll(() => {
  service?.stop();
});

function mountUi(token: string): StudyUi {
  const container = document.createElement("div");
  document.body.appendChild(container);
  const client = new StudyClient(service.baseUrl);
  const ui = new StudyUi(container, client, {
    preload: fetchPreloader(fetch),
    participantToken: token,
  });
  mounted.push(ui);
  return ui;
}

async function waitFor(cond: () => boolean, ms = 10_000): Promise<void> {
  const deadline = Date.now() + ms;
  while (!cond()) {
    if (Date.now() > deadline) throw new Error("condition not met in time");
    await new Promise((r) => setTimeout(r, 25));
  }
}

describe("study UI in a headless DOM", () => {
  it("completes a 46-trial session by clicking, progress reaches 46/46", async () => {
    const ui = mountUi("ui-participant");
    await ui.start();
    const progress = () => document.querySelector(".study-progress-text")!.textContent;
    expect(progress()).toBe("0/46");

    for (let i = 0; i < 46; i++) {
      await waitFor(() => ui.runner.choosable);
      const selector = i % 2 === 0 ? ".study-left" : ".study-right";
      (document.querySelector(selector) as HTMLElement).click();
      await waitFor(() => ui.runner.answered === i + 1);
    }
    expect(progress()).toBe("46/46");
    expect(document.querySelector(".study-complete")!.textContent).toContain("Thank you");
  }, 120_000);

  it("never reveals method labels to the participant", async () => {
    const ui = mountUi("ui-labels");
    await ui.start();
    await waitFor(() => ui.runner.choosable);
    const text = document.body.textContent ?? "";
    expect(text).not.toContain("ours");
    expect(text).not.toContain("baseline");
    for (const img of document.querySelectorAll(".study-pair img")) {
      const src = img.getAttribute("src") ?? "";
      expect(src).not.toContain("ours");
      expect(src).not.toContain("baseline");
      expect(img.getAttribute("alt")).toBe("");
    }
  }, 60_000);

  it("ignores clicks while images are still loading", async () => {
    const ui = mountUi("ui-preload");
    // no start() yet: nothing is choosable, clicks must be no-ops
    const imgs = document.querySelectorAll(".study-left");
    (imgs[imgs.length - 1] as HTMLElement).click();
    expect(ui.runner.answered).toBe(0);
    await ui.start();
    await waitFor(() => ui.runner.choosable);
    expect(ui.runner.answered).toBe(0);
  }, 60_000);

  it("arrow keys choose sides", async () => {
    const ui = mountUi("ui-keys");
    await ui.start();
    await waitFor(() => ui.runner.choosable);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowLeft" }));
    await waitFor(() => ui.runner.answered === 1);
    await waitFor(() => ui.runner.choosable);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowRight" }));
    await waitFor(() => ui.runner.answered === 2);
    // drain the in-flight advance to the next trial before teardown
    await waitFor(() => ui.runner.choosable || ui.runner.complete);
  }, 60_000);
});
