/** Typed client for the annotation service HTTP API. */

export interface Candidate {
  text: string;
  score: number;
  rank: number;
}

export interface SessionStats {
  T: number;
  num_selections: number;
  accumulated_edits: number;
  accumulated_levd: number;
  manual_levd: number;
  mode: string;
}

export interface SessionInfo {
  session_id: string;
  image_id: string;
  k: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type Fetch = typeof fetch;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: Fetch = fetch,
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchImpl(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const doc = (await response.json()) as { detail?: unknown };
        if (doc.detail !== undefined) detail = JSON.stringify(doc.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(imageId: string): Promise<SessionInfo> {
    return this.post("/sessions", { image_id: imageId });
  }

  async suggest(sessionId: string, text: string, cursor: number): Promise<Candidate[]> {
    const doc = await this.post<{ candidates: Candidate[] }>(
      `/sessions/${sessionId}/suggest`,
      { text, cursor },
    );
    return doc.candidates;
  }

  async snapshot(sessionId: string, text: string, cursor: number, ts: number): Promise<boolean> {
    const doc = await this.post<{ stored: boolean }>(`/sessions/${sessionId}/snapshot`, {
      text,
      cursor,
      ts,
    });
    return doc.stored;
  }

  async selection(sessionId: string, rank: number, text: string, ts: number): Promise<void> {
    await this.post(`/sessions/${sessionId}/selection`, { rank, text, ts });
  }

  submit(sessionId: string, text: string, ts: number): Promise<SessionStats> {
    return this.post(`/sessions/${sessionId}/submit`, { text, ts });
  }

  async exportSessions(): Promise<string> {
    const response = await this.fetchImpl(this.base + "/export");
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.text();
  }

  imageUrl(imageId: string): string {
    return `${this.base}/images/${encodeURIComponent(imageId)}`;
  }
}
