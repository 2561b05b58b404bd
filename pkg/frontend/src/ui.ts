// DOM layer: two patches side by side, one click (or arrow key) per trial.
//
// The participant never sees method labels; patches render at their native
// 256-px size with integer scaling only, so resampling cannot contaminate
// judgments.

import { StudyClient, TrialView } from "./api.js";
import { Preloader, SessionRunner, imagePreloader } from "./session.js";

export interface StudyUiOptions {
  preload?: Preloader;
  participantToken?: string;
}

const STYLE = `
  .study-root { font-family: sans-serif; max-width: 600px; margin: 2rem auto; text-align: center; }
  .study-pair { display: flex; gap: 16px; justify-content: center; }
  .study-pair img {
    width: 256px; height: 256px;
    image-rendering: pixelated;
    cursor: pointer;
    border: 2px solid transparent;
  }
  .study-pair img:hover { border-color: #4477ff; }
  .study-progress-track { background: #eee; height: 8px; border-radius: 4px; margin: 12px 0; }
  .study-progress-fill { background: #4477ff; height: 8px; border-radius: 4px; width: 0; }
  .study-complete { font-size: 1.4rem; padding: 3rem 0; }
  .study-queue-note { color: #996600; font-size: 0.85rem; min-height: 1.2em; }
`;

export class StudyUi {
  readonly runner: SessionRunner;
  private readonly client: StudyClient;
  private root: HTMLElement;
  private leftImg!: HTMLImageElement;
  private refImg!: HTMLImageElement;
  private rightImg!: HTMLImageElement;
  private progressText!: HTMLElement;
  private progressFill!: HTMLElement;
  private queueNote!: HTMLElement;
  private prompt!: HTMLElement;
  private keyHandler: (e: KeyboardEvent) => void;

  constructor(container: HTMLElement, client: StudyClient, opts: StudyUiOptions = {}) {
    this.root = container;
    this.client = client;
    this.runner = new SessionRunner(
      client,
      opts.preload ?? imagePreloader,
      {
        onTrial: (t) => this.renderTrial(t),
        onProgress: (a, n) => this.renderProgress(a, n),
        onComplete: () => this.renderComplete(),
        onQueueChange: (n) => this.renderQueue(n),
      },
      opts.participantToken,
    );
    this.keyHandler = (e: KeyboardEvent) => {
      if (e.key === "ArrowLeft") this.chooseSafely("left");
      if (e.key === "ArrowRight") this.chooseSafely("right");
    };
    this.mount();
  }

  private chooseSafely(side: "left" | "right"): void {
    this.runner.choose(side).catch((err) => console.error("trial advance failed:", err));
  }

  private mount(): void {
    const style = document.createElement("style");
    style.textContent = STYLE;
    document.head.appendChild(style);

    this.root.classList.add("study-root");
    this.root.innerHTML = "";

    this.prompt = document.createElement("p");
    this.prompt.textContent = "Click the image that looks better to you.";
    this.root.appendChild(this.prompt);

    const pairBox = document.createElement("div");
    pairBox.className = "study-pair";
    this.leftImg = document.createElement("img");
    this.leftImg.alt = "";
    this.leftImg.className = "study-left";
    this.leftImg.addEventListener("click", () => this.chooseSafely("left"));
    this.refImg = document.createElement("img");
    this.refImg.alt = "";
    this.refImg.className = "study-reference";
    this.refImg.style.display = "none"; // only for sessions that show the original
    this.rightImg = document.createElement("img");
    this.rightImg.alt = "";
    this.rightImg.className = "study-right";
    this.rightImg.addEventListener("click", () => this.chooseSafely("right"));
    pairBox.append(this.leftImg, this.refImg, this.rightImg);
    this.root.appendChild(pairBox);

    const track = document.createElement("div");
    track.className = "study-progress-track";
    this.progressFill = document.createElement("div");
    this.progressFill.className = "study-progress-fill";
    track.appendChild(this.progressFill);
    this.root.appendChild(track);

    this.progressText = document.createElement("div");
    this.progressText.className = "study-progress-text";
    this.root.appendChild(this.progressText);

    this.queueNote = document.createElement("div");
    this.queueNote.className = "study-queue-note";
    this.root.appendChild(this.queueNote);

    document.addEventListener("keydown", this.keyHandler);
  }

  async start(): Promise<void> {
    await this.runner.start();
  }

  dispose(): void {
    document.removeEventListener("keydown", this.keyHandler);
    this.root.remove();
  }

  private renderTrial(trial: TrialView): void {
    const prefix = this.client.baseUrl.replace(/\/$/, "");
    this.leftImg.src = prefix + trial.left_url;
    this.rightImg.src = prefix + trial.right_url;
    if (trial.reference_url) {
      this.refImg.src = prefix + trial.reference_url;
      this.refImg.style.display = "";
    } else {
      this.refImg.style.display = "none";
    }
  }

  private renderProgress(answered: number, total: number): void {
    this.progressText.textContent = `${answered}/${total}`;
    this.progressFill.style.width = total ? `${Math.round((100 * answered) / total)}%` : "0";
  }

  private renderComplete(): void {
    document.removeEventListener("keydown", this.keyHandler);
    const done = document.createElement("div");
    done.className = "study-complete";
    done.textContent = "All done. Thank you for participating!";
    this.prompt.replaceWith(done);
    this.leftImg.remove();
    this.refImg.remove();
    this.rightImg.remove();
  }

  private renderQueue(pending: number): void {
    this.queueNote.textContent = pending > 0 ? `reconnecting: ${pending} answer(s) queued` : "";
  }
}
