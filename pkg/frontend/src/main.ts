// Bootstrap: connect to the study service and run one participant session.
//
// The participant token persists in localStorage, so a mid-session refresh
// resumes at the first unanswered trial.

import { StudyClient } from "./api.js";
import { StudyUi } from "./ui.js";

const TOKEN_KEY = "study-participant-token";

function participantToken(): string {
  let token = localStorage.getItem(TOKEN_KEY);
  if (!token) {
    token = Math.random().toString(36).slice(2) + Date.now().toString(36);
    localStorage.setItem(TOKEN_KEY, token);
  }
  return token;
}

export async function boot(container: HTMLElement, baseUrl?: string): Promise<StudyUi> {
  const url = baseUrl ?? (window as { STUDY_SERVICE_URL?: string }).STUDY_SERVICE_URL ?? "";
  const ui = new StudyUi(container, new StudyClient(url), {
    participantToken: participantToken(),
  });
  await ui.start();
  return ui;
}

if (typeof document !== "undefined" && document.getElementById("study-app")) {
  void boot(document.getElementById("study-app") as HTMLElement);
}
