/** Thin fetch wrapper for the curation service /api/v1 endpoints. */

import type {
  DialoguePage,
  QueueFilters,
  RecordView,
  ReviewRequest,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private fetchFn: FetchLike;

  constructor(
    public baseUrl: string = '',
    fetchFn?: FetchLike,
  ) {
    // bind so an injected window.fetch keeps its receiver
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}/api/v1${path}`, init);
    if (!response.ok) {
      let code = 'http_error';
      let message = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body; keep defaults
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  listDialogues(filters: QueueFilters = {}, page = 1, pageSize = 50): Promise<DialoguePage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (filters.status) params.set('status', filters.status);
    if (filters.concept) params.set('concept', filters.concept);
    if (filters.flagged !== undefined) params.set('flagged', String(filters.flagged));
    return this.request<DialoguePage>(`/dialogues?${params.toString()}`);
  }

  getDialogue(recordId: string): Promise<RecordView> {
    return this.request<RecordView>(`/dialogues/${encodeURIComponent(recordId)}`);
  }

  review(recordId: string, body: ReviewRequest): Promise<RecordView> {
    return this.request<RecordView>(`/dialogues/${encodeURIComponent(recordId)}/review`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  imageUrl(digest: string): string {
    return `${this.baseUrl}/api/v1/images/${digest}`;
  }

  exportUrl(approvedOnly = true, mode = 'full'): string {
    return `${this.baseUrl}/api/v1/export?approved_only=${approvedOnly}&mode=${mode}`;
  }
}
