/** Typed client for the three annotation-service endpoints. */

export interface FeatureSummary {
  dims: number;
  min: number;
  max: number;
  mean: number;
  head: number[];
}

export interface QueryEntry {
  sample_id: string;
  feature_summary: FeatureSummary;
  audio_ref: string | null;
  class_names: string[];
  iteration: number;
}

export interface Progress {
  iteration: number;
  labeled: number;
  pending: number;
  unlabeled: number;
  budget: number;
  class_count: number;
  class_names: string[];
  terminal: boolean;
  ua: number | null;
  wa: number | null;
}

export interface LabelPost {
  sample_id: string;
  annotator_id: string;
  hard?: number;
  votes?: number[][];
  idempotency_key: string;
}

export type PostResult =
  | { ok: true; data: { status: string; sample_id: string } }
  | { ok: false; status: number; error: string };

type FetchFn = typeof fetch;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchFn = fetch,
    private readonly token: string | null = null,
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token !== null) headers["X-Annotator-Token"] = this.token;
    return headers;
  }

  async getQueries(): Promise<QueryEntry[]> {
    const response = await this.fetchFn(`${this.base}/api/queries`, {
      headers: this.headers(),
    });
    if (!response.ok) throw new Error(`queries: HTTP ${response.status}`);
    return (await response.json()) as QueryEntry[];
  }

  async getProgress(): Promise<Progress> {
    const response = await this.fetchFn(`${this.base}/api/progress`, {
      headers: this.headers(),
    });
    if (!response.ok) throw new Error(`progress: HTTP ${response.status}`);
    return (await response.json()) as Progress;
  }

  async postLabel(body: LabelPost): Promise<PostResult> {
    const response = await this.fetchFn(`${this.base}/api/labels`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(body),
    });
    const payload = (await response.json()) as Record<string, unknown>;
    if (response.ok) {
      return { ok: true, data: payload as { status: string; sample_id: string } };
    }
    return {
      ok: false,
      status: response.status,
      error: typeof payload.error === "string" ? payload.error : `HTTP ${response.status}`,
    };
  }
}
