/**
 * Coordinates the API client and the queue state. One POST per decision;
 * optimistic status first, then reconcile with the server's response. A 409
 * means the record changed server-side: the stale view is replaced by a fresh
 * fetch and the caller shows a reload-and-retry banner.
 */

import { ApiClient, ApiError } from './api.js';
import { ReviewQueue, editTextIsValid } from './queue.js';
import type { Phase, QueueFilters, RecordView, ReviewAction } from './types.js';

export interface SubmitResult {
  ok: boolean;
  conflict: boolean;
  message?: string;
  view?: RecordView;
}

export interface EditPayload {
  turnPhase: Phase;
  editedAnswer: string;
  note?: string;
}

export class ReviewController {
  readonly queue = new ReviewQueue();

  constructor(
    private api: ApiClient,
    public reviewer: string,
  ) {}

  async refresh(filters: QueueFilters = {}): Promise<void> {
    const first = await this.api.listDialogues(filters, 1, 200);
    const items = [...first.items];
    let page = 2;
    while (items.length < first.total) {
      const more = await this.api.listDialogues(filters, page, 200);
      if (more.items.length === 0) break;
      items.push(...more.items);
      page += 1;
    }
    this.queue.load(items);
  }

  async submit(
    recordId: string,
    action: ReviewAction,
    edit?: EditPayload,
  ): Promise<SubmitResult> {
    if (action === 'edit') {
      if (!edit || !editTextIsValid(edit.editedAnswer)) {
        return { ok: false, conflict: false, message: 'edited answer must be non-empty' };
      }
    }
    this.queue.markPending(recordId, action);
    try {
      const view = await this.api.review(recordId, {
        action,
        reviewer: this.reviewer,
        turn_phase: edit?.turnPhase,
        edited_answer: edit?.editedAnswer,
        note: edit?.note,
      });
      this.queue.reconcile(view);
      return { ok: true, conflict: false, view };
    } catch (error) {
      this.queue.rollback(recordId);
      if (error instanceof ApiError && error.isConflict) {
        // stale record: pull the server's current view so retry starts fresh
        try {
          const fresh = await this.api.getDialogue(recordId);
          this.queue.reconcile(fresh);
        } catch {
          // record may be gone entirely; leave the queue as-is
        }
        return { ok: false, conflict: true, message: error.message };
      }
      const message = error instanceof Error ? error.message : String(error);
      return { ok: false, conflict: false, message };
    }
  }

  imageUrl(view: RecordView): string | undefined {
    const image = view.record.images[0];
    return image ? this.api.imageUrl(image.digest) : undefined;
  }
}
