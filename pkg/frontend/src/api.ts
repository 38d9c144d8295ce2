/**
 * Typed client for the gends HTTP JSON API.
 *
 * Every service interaction in the UI goes through this one class; the
 * fetch implementation is injectable so contract tests can run against a
 * mocked service without any backend.
 */

export interface ReplyEntity {
  surface: string;
  type: string;
  predicate: string;
  /** Token offset of the surface inside `tokens`. */
  position: number;
  /** Number of tokens the surface occupies. */
  length: number;
  entity_id: string;
  /** Probability the entity scorer assigned to this candidate. */
  prob: number;
  /** Knowledge-gate probability at the emitting step. */
  gate: number;
}

export interface ReplyResponse {
  response_text: string;
  tokens: string[];
  entities: ReplyEntity[];
  /** Per decode step: probability the step was handed to the entity scorer. */
  gate_trace: number[];
  score: number;
  model_version: string;
  session_id?: string;
}

export interface ReplyOptions {
  mode?: "greedy" | "beam";
  beam_width?: number;
  max_len?: number;
  session_id?: string;
}

export interface HealthResponse {
  status: string;
  model_version?: string;
}

export interface EntityRow {
  id: string;
  type: string;
  surface: string;
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

/** Status 0 means the request never reached the service (network error). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get retryable(): boolean {
    return this.status === 0 || this.status >= 500;
  }
}

async function errorFrom(res: Response): Promise<ApiError> {
  let message = `${res.status} ${res.statusText}`.trim();
  try {
    const body = (await res.json()) as { error?: string };
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(res.status, message);
}

export class GendsClient {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {
    this.base = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `cannot reach the service: ${String(err)}`);
    }
    if (!res.ok) throw await errorFrom(res);
    return res;
  }

  async health(): Promise<HealthResponse> {
    const res = await this.request("/health");
    return (await res.json()) as HealthResponse;
  }

  async reply(message: string, options: ReplyOptions = {}): Promise<ReplyResponse> {
    const res = await this.request("/reply", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ message, ...options }),
    });
    return (await res.json()) as ReplyResponse;
  }

  async searchEntities(q: string, limit = 20): Promise<EntityRow[]> {
    const params = new URLSearchParams({ q, limit: String(limit) });
    const res = await this.request(`/kb/entities?${params}`);
    const body = (await res.json()) as { entities: EntityRow[] };
    return body.entities;
  }
}
