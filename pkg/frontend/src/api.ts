/** Typed client for the chat service JSON API.
 *
 * The UI is a pure client: every token it ever displays came back from one
 * of these five endpoints.
 */

export type DecodeMode = "map" | "sample";

export interface DecodeSettings {
  mode: DecodeMode;
  beam_width: number;
  temperature: number;
  seed: number;
  max_len?: number;
}

export const DEFAULT_SETTINGS: DecodeSettings = {
  mode: "map",
  beam_width: 5,
  temperature: 1.0,
  seed: 0,
};

export interface TurnResponse {
  text: string;
  token_ids: number[];
  log_prob: number;
  turn_index: number;
}

export interface ModelInfo {
  variant: string;
  dims: { d_h: number; d_ctx: number; d_e: number };
  vocab_size: number;
  vocab_hash: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }

  /** The service answers 404 for sessions it no longer holds. */
  get sessionExpired(): boolean {
    return this.status === 404;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) {
      let detail = `HTTP ${res.status}`;
      try {
        const payload = await res.json();
        if (payload && typeof payload.detail === "string") detail = payload.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    if (res.status === 204) return undefined as T;
    return (await res.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request("GET", "/model");
  }

  async createSession(settings?: Partial<DecodeSettings>): Promise<string> {
    const body = await this.request<{ session_id: string }>(
      "POST",
      "/sessions",
      settings ?? {},
    );
    return body.session_id;
  }

  sendTurn(
    sessionId: string,
    text: string,
    settings?: Partial<DecodeSettings>,
  ): Promise<TurnResponse> {
    return this.request("POST", `/sessions/${sessionId}/turns`, {
      text,
      ...(settings ?? {}),
    });
  }

  deleteSession(sessionId: string): Promise<void> {
    return this.request("DELETE", `/sessions/${sessionId}`);
  }
}
