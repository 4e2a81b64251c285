/**
 * Live round-trip against a running curation service; set SDFT_API_URL to
 * enable (e.g. SDFT_API_URL=http://127.0.0.1:8792). Expects a store holding
 * exactly 3 pending records. Approves two, edits one, then checks the
 * approved-only export: 3 records, the edited one carrying human_edit.
 */

import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { ReviewController } from '../src/controller.js';

const baseUrl = process.env.SDFT_API_URL;

describe.skipIf(!baseUrl)('review round-trip against a live service', () => {
  it('approve 2 + edit 1 yields an approved-only export of 3', async () => {
    const api = new ApiClient(baseUrl!);
    const controller = new ReviewController(api, 'ui-roundtrip');

    await controller.refresh({ status: 'pending' });
    expect(controller.queue.size).toBe(3);

    const first = controller.queue.current()!;
    const firstResult = await controller.submit(first.record_id, 'approve');
    expect(firstResult.ok).toBe(true);

    const second = controller.queue.next()!;
    const secondResult = await controller.submit(second.record_id, 'approve');
    expect(secondResult.ok).toBe(true);

    const third = controller.queue.next()!;
    const editResult = await controller.submit(third.record_id, 'edit', {
      turnPhase: 'target',
      editedAnswer: 'Reviewed and corrected through the UI.',
    });
    expect(editResult.ok).toBe(true);
    expect(editResult.view?.status).toBe('edited');

    const response = await fetch(api.exportUrl(true, 'full'));
    expect(response.status).toBe(200);
    const lines = (await response.text())
      .split('\n')
      .filter((line) => line.trim())
      .map((line) => JSON.parse(line));
    expect(lines).toHaveLength(3);

    const statuses = lines.map((record) => record.review.status).sort();
    expect(statuses).toEqual(['approved', 'approved', 'edited']);

    const edited = lines.find((record) => record.review.status === 'edited');
    const target = edited.turns.find((turn: { phase: string }) => turn.phase === 'target');
    expect(target.provenance).toBe('human_edit');
    expect(target.answer).toBe('Reviewed and corrected through the UI.');
  });
});
