// Typed client for the study service's HTTP JSON API.

export interface TrialView {
  pair_id: string;
  index: number;
  total: number;
  left_url: string;
  right_url: string;
  reference_url?: string; // present only when the service shows the original
  answered: boolean;
  side: string | null;
}

export interface SessionInfo {
  session_id: string;
  participant_token: string;
  n_trials: number;
  first_unanswered: number;
  answered: Record<string, string>;
  trials: TrialView[];
}

export interface ResponseResult {
  status: number; // 201 recorded, 409 conflict
  answered_count?: number;
  complete?: boolean;
}

export type FetchLike = typeof fetch;

export class StudyClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async createSession(participantToken?: string): Promise<SessionInfo> {
    const res = await this.fetchImpl(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ participant_token: participantToken ?? null }),
    });
    if (!res.ok) throw new Error(`session creation failed: ${res.status}`);
    return (await res.json()) as SessionInfo;
  }

  async getTrial(sessionId: string, index: number): Promise<TrialView> {
    const res = await this.fetchImpl(this.url(`/trials/${sessionId}/${index}`));
    if (!res.ok) throw new Error(`trial fetch failed: ${res.status}`);
    return (await res.json()) as TrialView;
  }

  async postResponse(sessionId: string, pairId: string, side: "left" | "right"): Promise<ResponseResult> {
    const res = await this.fetchImpl(this.url("/responses"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, pair_id: pairId, side }),
    });
    if (res.status === 201) {
      const body = (await res.json()) as { answered_count: number; complete: boolean };
      return { status: 201, ...body };
    }
    return { status: res.status };
  }
}
