/** Thin typed client for the engine's HTTP endpoints. */

import type {
  CatalogEntry,
  CustomBlockDoc,
  Diagnostic,
  GraphDoc,
  Inspection,
  MetricsResponse,
  OptimizerDoc,
  ProjectDoc,
  SessionView,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly detail?: unknown,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface PutGraphBody {
  graph: GraphDoc;
  dataset_path?: string | null;
  optimizer?: OptimizerDoc | null;
  seed?: number;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    let parsed: unknown = null;
    const text = await response.text();
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = null;
      }
    }
    if (!response.ok) {
      const envelope = parsed as { error?: { code?: string; message?: string; detail?: unknown } } | null;
      const err = envelope?.error;
      throw new ApiError(
        response.status,
        err?.code ?? "http-error",
        err?.message ?? `${method} ${path} failed with ${response.status}`,
        err?.detail,
      );
    }
    return parsed as T;
  }

  catalog(): Promise<{ blocks: CatalogEntry[] }> {
    return this.request("GET", "/api/blocks");
  }

  registerCustom(doc: CustomBlockDoc): Promise<{ kind: CatalogEntry }> {
    return this.request("POST", "/api/blocks/custom", doc);
  }

  getGraph(): Promise<ProjectDoc> {
    return this.request("GET", "/api/graph");
  }

  putGraph(body: PutGraphBody): Promise<ProjectDoc> {
    return this.request("PUT", "/api/graph", body);
  }

  validate(): Promise<{ diagnostics: Diagnostic[] }> {
    return this.request("POST", "/api/graph/validate", {});
  }

  merge(blockIds: string[], name: string): Promise<ProjectDoc & { superblock_id: string }> {
    return this.request("POST", "/api/graph/merge", { block_ids: blockIds, name });
  }

  expand(blockId: string): Promise<ProjectDoc> {
    return this.request("POST", "/api/graph/expand", { block_id: blockId });
  }

  saveCustom(blockId: string, name?: string): Promise<{ kind: CatalogEntry }> {
    return this.request("POST", "/api/graph/save-custom", { block_id: blockId, name });
  }

  createSession(optimizer?: Partial<OptimizerDoc>): Promise<{ session_id: string; status: string }> {
    return this.request("POST", "/api/session", optimizer ? { optimizer } : {});
  }

  train(sessionId: string): Promise<{ session_id: string; status: string }> {
    return this.request("POST", `/api/session/${sessionId}/train`);
  }

  stop(sessionId: string): Promise<SessionView> {
    return this.request("POST", `/api/session/${sessionId}/stop`);
  }

  session(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/api/session/${sessionId}`);
  }

  metrics(sessionId: string, sinceEpoch: number): Promise<MetricsResponse> {
    return this.request("GET", `/api/session/${sessionId}/metrics?since_epoch=${sinceEpoch}`);
  }

  inspect(sessionId: string, blockId: string): Promise<Inspection> {
    return this.request("GET", `/api/session/${sessionId}/block/${blockId}`);
  }
}
