// Session runner: walks the server-ordered trials, one forced choice each.
//
// Guarantees the UI layer relies on:
//  - a trial only becomes choosable after both of its images preloaded
//  - at most one response per trial leaves this client (rapid double
//    choices are swallowed by a lock; server 409s are skipped forward)
//  - network failures queue the response locally and retry in order
//  - reconnecting with the same participant token resumes at the first
//    unanswered trial

import { StudyClient, SessionInfo, TrialView } from "./api.js";

export type Preloader = (url: string) => Promise<void>;

export interface RunnerEvents {
  onTrial?: (trial: TrialView) => void;
  onProgress?: (answered: number, total: number) => void;
  onComplete?: () => void;
  onQueueChange?: (pending: number) => void;
}

interface QueuedResponse {
  pairId: string;
  side: "left" | "right";
}

export class SessionRunner {
  session!: SessionInfo;
  trial: TrialView | null = null;
  answered = 0;
  private ready = false;
  private submitting = false;
  private queue: QueuedResponse[] = [];
  private flushTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly client: StudyClient,
    private readonly preload: Preloader,
    private readonly events: RunnerEvents = {},
    private readonly participantToken?: string,
    private readonly retryMs = 1000,
  ) {}

  get complete(): boolean {
    return this.session !== undefined && this.answered >= this.session.n_trials;
  }

  get pendingQueue(): number {
    return this.queue.length;
  }

  get choosable(): boolean {
    return this.ready && !this.submitting && !this.complete && this.trial !== null;
  }

  async start(): Promise<void> {
    this.session = await this.client.createSession(this.participantToken);
    this.answered = Object.keys(this.session.answered).length;
    this.events.onProgress?.(this.answered, this.session.n_trials);
    await this.showTrial(this.session.first_unanswered);
  }

  private async showTrial(index: number): Promise<void> {
    if (index >= this.session.n_trials) {
      this.trial = null;
      this.events.onComplete?.();
      return;
    }
    this.ready = false;
    const trial = this.session.trials[index] ?? (await this.client.getTrial(this.session.session_id, index));
    if (trial.answered) {
      await this.showTrial(index + 1);
      return;
    }
    const base = this.client.baseUrl.replace(/\/$/, "");
    // a trial is interactable only once both images are fully loaded
    for (let attempt = 0; ; attempt++) {
      try {
        await Promise.all([this.preload(base + trial.left_url), this.preload(base + trial.right_url)]);
        break;
      } catch (err) {
        if (attempt >= 2) throw err;
        await new Promise((r) => setTimeout(r, this.retryMs));
      }
    }
    this.trial = trial;
    this.ready = true;
    this.events.onTrial?.(trial);
  }

  async choose(side: "left" | "right"): Promise<boolean> {
    if (!this.choosable || this.trial === null) return false; // lock: ignore double clicks
    this.submitting = true;
    const trial = this.trial;
    try {
      await this.flushQueue();
      const result = await this.client.postResponse(this.session.session_id, trial.pair_id, side);
      if (result.status !== 201 && result.status !== 409) {
        throw new Error(`unexpected status ${result.status}`);
      }
      // 409 means this pair was already answered (e.g. a parallel tab);
      // either way the pair is now settled, so progress advances
      this.answered += 1;
    } catch {
      // network failure: queue locally, count it, and move on
      this.queue.push({ pairId: trial.pair_id, side });
      this.answered += 1;
      this.events.onQueueChange?.(this.queue.length);
      this.scheduleFlush();
    } finally {
      this.submitting = false;
    }
    this.events.onProgress?.(this.answered, this.session.n_trials);
    await this.showTrial(trial.index + 1);
    return true;
  }

  private scheduleFlush(): void {
    if (this.flushTimer !== null) return;
    this.flushTimer = setTimeout(async () => {
      this.flushTimer = null;
      try {
        await this.flushQueue();
      } catch {
        this.scheduleFlush();
      }
    }, this.retryMs);
  }

  async flushQueue(): Promise<void> {
    while (this.queue.length > 0) {
      const next = this.queue[0];
      const result = await this.client.postResponse(this.session.session_id, next.pairId, next.side);
      if (result.status !== 201 && result.status !== 409) {
        throw new Error(`flush failed with ${result.status}`);
      }
      this.queue.shift();
      this.events.onQueueChange?.(this.queue.length);
    }
  }
}

// Browser preloader: resolves when the image element has fully decoded.
export function imagePreloader(url: string): Promise<void> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve();
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

// Test/headless preloader: verifies the bytes are reachable over HTTP.
export function fetchPreloader(fetchImpl: typeof fetch): Preloader {
  return async (url: string) => {
    const res = await fetchImpl(url);
    if (!res.ok) throw new Error(`failed to load ${url}: ${res.status}`);
    await res.arrayBuffer();
  };
}
