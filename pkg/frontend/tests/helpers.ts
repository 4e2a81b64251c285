import type { RecordView, ReviewStatus, TrainingRecord } from '../src/types.js';

export function makeRecord(
  id: string,
  options: { status?: ReviewStatus; flags?: string[]; createdAt?: string; concept?: string } = {},
): RecordView {
  const status = options.status ?? 'pending';
  const record: TrainingRecord = {
    schema_version: 'sdft/1',
    record_id: id,
    images: [
      { locator: `images/${id}.png`, media_type: 'png', digest: 'a'.repeat(64) },
    ],
    concept: {
      id: options.concept ?? 'warming',
      target: 'global warming',
      unrelated: 'transportation',
      category: 'abstract_concept',
    },
    turns: [
      {
        phase: 'caption',
        question: 'Describe this image.',
        answer: 'A scene.',
        loss_weight: 0.2,
        provenance: 'base_model',
      },
      {
        phase: 'contrastive',
        question: 'How does this image relate to transportation?',
        answer: 'No, it is unrelated.',
        loss_weight: 0.3,
        provenance: 'majority_vote',
      },
      {
        phase: 'target',
        question: 'How does this image relate to global warming?',
        answer: 'Step by step, it embodies it.',
        loss_weight: 0.5,
        provenance: 'synthesis_model',
      },
    ],
    synthesis: {
      seed: 1,
      template_index: 2,
      vote: { m: 3, winner_bucket: 'negation', tie_flag: false },
      flags: options.flags ?? [],
    },
    review: { status, reviewer: null, timestamp: null, note: null },
  };
  return {
    record_id: id,
    status,
    flags: options.flags ?? [],
    created_at: options.createdAt ?? '2026-01-01T00:00:00+00:00',
    updated_at: options.createdAt ?? '2026-01-01T00:00:00+00:00',
    record,
  };
}

export type Responder = (init?: RequestInit) => { status: number; body: unknown };

/** Route table keyed by "METHOD pathAndQuery" prefix match, later entries win. */
export function fakeFetch(
  routes: [string, Responder][],
  log: { method: string; url: string; body?: unknown }[] = [],
): (input: string, init?: RequestInit) => Promise<Response> {
  return async (input, init) => {
    const method = init?.method ?? 'GET';
    log.push({
      method,
      url: input,
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    });
    for (let i = routes.length - 1; i >= 0; i -= 1) {
      const [key, responder] = routes[i];
      const spaceIndex = key.indexOf(' ');
      const routeMethod = key.slice(0, spaceIndex);
      const routePath = key.slice(spaceIndex + 1);
      if (routeMethod === method && input.includes(routePath)) {
        const { status, body } = responder(init);
        return new Response(JSON.stringify(body), {
          status,
          headers: { 'Content-Type': 'application/json' },
        });
      }
    }
    return new Response(JSON.stringify({ code: 'unknown_route', message: input }), {
      status: 404,
      headers: { 'Content-Type': 'application/json' },
    });
  };
}

export function pageOf(items: RecordView[]) {
  return { items, page: 1, page_size: 200, total: items.length };
}
