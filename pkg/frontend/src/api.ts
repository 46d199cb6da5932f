import type {
  AgentReplyPayload,
  HistoryResponse,
  ModelsResponse,
  SessionCreated,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly kind: string,
    detail: string,
  ) {
    super(detail || kind);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client for the /v1 API; one instance per backend origin. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  imageUrl(path: string): string {
    return this.baseUrl + path;
  }

  private async parse<T>(response: Response): Promise<T> {
    if (!response.ok) {
      let kind = `http_${response.status}`;
      let detail = "";
      try {
        const body = (await response.json()) as { error?: string; detail?: string };
        kind = body.error ?? kind;
        detail = body.detail ?? "";
      } catch {
        // non-JSON error body; keep the status-derived kind
      }
      throw new ApiError(response.status, kind, detail);
    }
    return (await response.json()) as T;
  }

  async listModels(): Promise<ModelsResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/models`);
    return this.parse<ModelsResponse>(response);
  }

  async createSession(modelId: string): Promise<SessionCreated> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ model_id: modelId }),
    });
    return this.parse<SessionCreated>(response);
  }

  async sendMessage(
    sessionId: string,
    text: string,
    image?: File,
  ): Promise<AgentReplyPayload> {
    const url = `${this.baseUrl}/v1/sessions/${sessionId}/messages`;
    let init: RequestInit;
    if (image) {
      const form = new FormData();
      form.append("text", text);
      form.append("image", image, image.name);
      init = { method: "POST", body: form };
    } else {
      init = {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text }),
      };
    }
    const response = await this.fetchFn(url, init);
    return this.parse<AgentReplyPayload>(response);
  }

  async history(sessionId: string): Promise<HistoryResponse> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/sessions/${sessionId}/history`,
    );
    return this.parse<HistoryResponse>(response);
  }
}
