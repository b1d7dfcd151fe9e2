/** Thin typed client for the annotation service HTTP API.
 *
 * Configuration is a single base URL (empty string = same origin). Errors
 * surface as ApiError with the HTTP status so the UI can distinguish a
 * missing image (404, skippable) from a transient failure (retryable).
 */

import type { Verdict } from "./labels.js";

export interface Progress {
  done: number;
  total: number;
}

export interface NextItem {
  image_id: string | null;
  image_url?: string;
  done?: boolean;
  progress: Progress;
}

export interface AnnotateResponse {
  status: string;
  progress: Progress;
}

export interface Stats {
  per_annotator: Record<string, number>;
  per_class_kept: Record<string, number>;
  images_total: number;
  images_final: number;
  submissions: number;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`, null);
    }
    if (!response.ok) {
      throw new ApiError(`${path} failed with HTTP ${response.status}`, response.status);
    }
    return (await response.json()) as T;
  }

  next(annotator: string): Promise<NextItem> {
    return this.request<NextItem>(
      `/api/next?annotator=${encodeURIComponent(annotator)}`,
    );
  }

  annotate(imageId: string, annotator: string, verdict: Verdict): Promise<AnnotateResponse> {
    return this.request<AnnotateResponse>("/api/annotate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, annotator, verdict }),
    });
  }

  stats(): Promise<Stats> {
    return this.request<Stats>("/api/stats");
  }
}
