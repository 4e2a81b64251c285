/**
 * Pure review-queue state: what the reviewer sees is a function of the
 * server's records plus any local not-yet-confirmed actions. No I/O here.
 *
 * Flagged records (vote ties, contrastive post-check failures) sort to the
 * top of the queue; within each group the server order (created_at,
 * record_id) is kept.
 */

import type {
  ProgressCounters,
  RecordView,
  ReviewStatus,
  ReviewAction,
} from './types.js';

export interface PendingAction {
  action: ReviewAction;
  submittedAt: number;
}

export function queueOrder(a: RecordView, b: RecordView): number {
  const aFlagged = a.flags.length > 0 ? 0 : 1;
  const bFlagged = b.flags.length > 0 ? 0 : 1;
  if (aFlagged !== bFlagged) return aFlagged - bFlagged;
  if (a.created_at !== b.created_at) return a.created_at < b.created_at ? -1 : 1;
  return a.record_id < b.record_id ? -1 : a.record_id > b.record_id ? 1 : 0;
}

const ACTION_TO_STATUS: Record<ReviewAction, ReviewStatus> = {
  approve: 'approved',
  reject: 'rejected',
  edit: 'edited',
};

export function editTextIsValid(text: string): boolean {
  return text.trim().length > 0;
}

export class ReviewQueue {
  private items: RecordView[] = [];
  private pending = new Map<string, PendingAction>();
  private cursor = 0;

  load(items: RecordView[]): void {
    this.items = [...items].sort(queueOrder);
    this.pending.clear();
    if (this.cursor >= this.items.length) {
      this.cursor = Math.max(0, this.items.length - 1);
    }
  }

  get size(): number {
    return this.items.length;
  }

  get position(): number {
    return this.items.length === 0 ? 0 : this.cursor + 1;
  }

  current(): RecordView | undefined {
    return this.items[this.cursor];
  }

  byId(recordId: string): RecordView | undefined {
    return this.items.find((item) => item.record_id === recordId);
  }

  next(): RecordView | undefined {
    if (this.cursor < this.items.length - 1) this.cursor += 1;
    return this.current();
  }

  prev(): RecordView | undefined {
    if (this.cursor > 0) this.cursor -= 1;
    return this.current();
  }

  goTo(recordId: string): void {
    const index = this.items.findIndex((item) => item.record_id === recordId);
    if (index >= 0) this.cursor = index;
  }

  /** Status as the reviewer should see it: local pending action wins. */
  visibleStatus(recordId: string): ReviewStatus | undefined {
    const item = this.byId(recordId);
    if (!item) return undefined;
    const pending = this.pending.get(recordId);
    return pending ? ACTION_TO_STATUS[pending.action] : item.status;
  }

  hasPending(recordId: string): boolean {
    return this.pending.has(recordId);
  }

  /** Record an optimistic action before the server confirms it. */
  markPending(recordId: string, action: ReviewAction, now = Date.now()): void {
    this.pending.set(recordId, { action, submittedAt: now });
  }

  /** Server confirmed: replace local state with the authoritative view. */
  reconcile(view: RecordView): void {
    this.pending.delete(view.record_id);
    const index = this.items.findIndex((item) => item.record_id === view.record_id);
    if (index >= 0) {
      this.items[index] = view;
    } else {
      this.items.push(view);
      this.items.sort(queueOrder);
    }
  }

  /** Server refused (or errored): drop the optimistic state. */
  rollback(recordId: string): void {
    this.pending.delete(recordId);
  }

  counters(): ProgressCounters {
    const counts: ProgressCounters = {
      total: this.items.length,
      pending: 0,
      approved: 0,
      rejected: 0,
      edited: 0,
      flagged: 0,
    };
    for (const item of this.items) {
      const status = this.visibleStatus(item.record_id) ?? item.status;
      counts[status] += 1;
      if (item.flags.length > 0) counts.flagged += 1;
    }
    return counts;
  }
}
