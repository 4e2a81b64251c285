/** DTOs for the curation service /api/v1 JSON payloads. */

export type Phase = 'caption' | 'contrastive' | 'target';

export type ReviewStatus = 'pending' | 'approved' | 'rejected' | 'edited';

export type ReviewAction = 'approve' | 'reject' | 'edit';

export interface Turn {
  phase: Phase;
  question: string;
  answer: string;
  loss_weight: number;
  provenance: string;
}

export interface VoteSummary {
  m: number;
  winner_bucket: string;
  tie_flag: boolean;
}

export interface TrainingRecord {
  schema_version: string;
  record_id: string;
  images: { locator: string; media_type: string; digest: string }[];
  concept: { id: string; target: string; unrelated: string; category: string };
  turns: Turn[];
  synthesis: {
    seed: number;
    template_index: number | null;
    vote: VoteSummary | null;
    flags: string[];
  };
  review: {
    status: ReviewStatus;
    reviewer: string | null;
    timestamp: string | null;
    note: string | null;
  };
}

/** One queue entry as returned by GET /dialogues. */
export interface RecordView {
  record_id: string;
  status: ReviewStatus;
  flags: string[];
  created_at: string;
  updated_at: string;
  record: TrainingRecord;
}

export interface DialoguePage {
  items: RecordView[];
  page: number;
  page_size: number;
  total: number;
}

export interface QueueFilters {
  status?: ReviewStatus;
  concept?: string;
  flagged?: boolean;
}

export interface ReviewRequest {
  action: ReviewAction;
  turn_phase?: Phase;
  edited_answer?: string;
  reviewer: string;
  note?: string;
}

export interface ProgressCounters {
  total: number;
  pending: number;
  approved: number;
  rejected: number;
  edited: number;
  flagged: number;
}
