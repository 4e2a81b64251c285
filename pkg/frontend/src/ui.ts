/**
 * DOM rendering for the review queue: the current record's image beside its
 * three labeled Q/A turns (with loss weights), vote summary and flags, plus
 * approve / reject / edit controls and keyboard shortcuts.
 *
 * Shortcuts: a approve, r reject, e edit focused turn, n/j next, p/k previous.
 */

import { ReviewController } from './controller.js';
import type { Phase, QueueFilters, RecordView, ReviewStatus } from './types.js';

const PHASE_LABELS: Record<Phase, string> = {
  caption: 'Caption grounding',
  contrastive: 'Contrastive (should refuse)',
  target: 'Target knowledge',
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ReviewApp {
  private root!: HTMLElement;
  private banner!: HTMLElement;
  private filters: QueueFilters = {};

  constructor(private controller: ReviewController) {}

  async mount(rootId: string): Promise<void> {
    const root = document.getElementById(rootId);
    if (!root) throw new Error(`no element #${rootId}`);
    this.root = root;
    document.addEventListener('keydown', (event) => this.onKey(event));
    await this.reload();
  }

  async reload(): Promise<void> {
    await this.controller.refresh(this.filters);
    this.render();
  }

  private async onKey(event: KeyboardEvent): Promise<void> {
    if (event.target instanceof HTMLTextAreaElement || event.target instanceof HTMLInputElement) {
      return; // typing in the edit box
    }
    const current = this.controller.queue.current();
    if (!current) return;
    switch (event.key) {
      case 'a':
        await this.decide(current.record_id, 'approve');
        break;
      case 'r':
        await this.decide(current.record_id, 'reject');
        break;
      case 'n':
      case 'j':
        this.controller.queue.next();
        this.render();
        break;
      case 'p':
      case 'k':
        this.controller.queue.prev();
        this.render();
        break;
      default:
        return;
    }
  }

  private async decide(recordId: string, action: 'approve' | 'reject'): Promise<void> {
    this.render(); // optimistic state is visible immediately
    const result = await this.controller.submit(recordId, action);
    if (result.conflict) {
      this.showBanner(
        `This record changed on the server (${result.message}). It was reloaded - please retry.`,
      );
    } else if (!result.ok) {
      this.showBanner(`Review failed: ${result.message}`);
    } else {
      this.hideBanner();
      this.controller.queue.next();
    }
    this.render();
  }

  private async submitEdit(recordId: string, phase: Phase, text: string): Promise<void> {
    const result = await this.controller.submit(recordId, 'edit', {
      turnPhase: phase,
      editedAnswer: text,
    });
    if (result.conflict) {
      this.showBanner('Record changed server-side; reloaded. Please reapply your edit.');
    } else if (!result.ok) {
      this.showBanner(`Edit rejected: ${result.message}`);
    } else {
      this.hideBanner();
    }
    this.render();
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.style.display = 'block';
  }

  private hideBanner(): void {
    if (this.banner) this.banner.style.display = 'none';
  }

  private render(): void {
    const queue = this.controller.queue;
    this.root.textContent = '';

    this.banner = el('div', 'banner');
    this.banner.style.display = 'none';
    this.root.appendChild(this.banner);

    this.root.appendChild(this.renderToolbar());

    const current = queue.current();
    if (!current) {
      this.root.appendChild(el('p', 'empty', 'No dialogues match the current filters.'));
      return;
    }
    this.root.appendChild(this.renderRecord(current));
  }

  private renderToolbar(): HTMLElement {
    const queue = this.controller.queue;
    const counters = queue.counters();
    const bar = el('div', 'toolbar');
    bar.appendChild(
      el(
        'span',
        'progress',
        `${queue.position}/${counters.total} - pending ${counters.pending}, ` +
          `approved ${counters.approved}, rejected ${counters.rejected}, ` +
          `edited ${counters.edited}, flagged ${counters.flagged}`,
      ),
    );

    const statusSelect = el('select');
    for (const value of ['', 'pending', 'approved', 'rejected', 'edited']) {
      const option = el('option', undefined, value === '' ? 'all statuses' : value);
      option.setAttribute('value', value);
      if ((this.filters.status ?? '') === value) option.setAttribute('selected', '');
      statusSelect.appendChild(option);
    }
    statusSelect.addEventListener('change', async () => {
      this.filters.status = (statusSelect.value || undefined) as ReviewStatus | undefined;
      await this.reload();
    });
    bar.appendChild(statusSelect);

    const flaggedToggle = el('button', undefined,
      this.filters.flagged ? 'show all' : 'only flagged');
    flaggedToggle.addEventListener('click', async () => {
      this.filters.flagged = this.filters.flagged ? undefined : true;
      await this.reload();
    });
    bar.appendChild(flaggedToggle);

    const refresh = el('button', undefined, 'refresh');
    refresh.addEventListener('click', () => this.reload());
    bar.appendChild(refresh);
    return bar;
  }

  private renderRecord(view: RecordView): HTMLElement {
    const queue = this.controller.queue;
    const container = el('div', 'record');

    const header = el('div', 'record-header');
    header.appendChild(el('h2', undefined, view.record.concept.target));
    header.appendChild(
      el('span', `status status-${queue.visibleStatus(view.record_id)}`,
        queue.visibleStatus(view.record_id) ?? view.status),
    );
    for (const flag of view.flags) {
      header.appendChild(el('span', 'flag', flag));
    }
    const vote = view.record.synthesis.vote;
    if (vote) {
      header.appendChild(
        el('span', 'vote',
          `vote m=${vote.m} -> ${vote.winner_bucket}${vote.tie_flag ? ' (tie)' : ''}`),
      );
    }
    container.appendChild(header);

    const body = el('div', 'record-body');
    const imageUrl = this.controller.imageUrl(view);
    if (imageUrl) {
      const img = el('img', 'record-image');
      img.setAttribute('src', imageUrl);
      img.setAttribute('alt', view.record.concept.target);
      body.appendChild(img);
    }

    const turns = el('div', 'turns');
    for (const turn of view.record.turns) {
      // server order preserved: render in array order
      const panel = el('div', `turn turn-${turn.phase}`);
      panel.appendChild(
        el('h3', undefined, `${PHASE_LABELS[turn.phase]} (weight ${turn.loss_weight})`),
      );
      panel.appendChild(el('p', 'question', `Q: ${turn.question}`));
      panel.appendChild(el('p', 'answer', `A: ${turn.answer}`));
      panel.appendChild(el('p', 'provenance', `source: ${turn.provenance}`));

      const editArea = el('textarea', 'edit-area');
      editArea.value = turn.answer;
      const editButton = el('button', undefined, `save edit (${turn.phase})`);
      editButton.addEventListener('click', () => {
        void this.submitEdit(view.record_id, turn.phase, editArea.value);
      });
      panel.appendChild(editArea);
      panel.appendChild(editButton);
      turns.appendChild(panel);
    }
    body.appendChild(turns);
    container.appendChild(body);

    const actions = el('div', 'actions');
    const approve = el('button', 'approve', 'approve (a)');
    approve.addEventListener('click', () => void this.decide(view.record_id, 'approve'));
    const reject = el('button', 'reject', 'reject (r)');
    reject.addEventListener('click', () => void this.decide(view.record_id, 'reject'));
    const next = el('button', undefined, 'next (n)');
    next.addEventListener('click', () => {
      queue.next();
      this.render();
    });
    const prev = el('button', undefined, 'previous (p)');
    prev.addEventListener('click', () => {
      queue.prev();
      this.render();
    });
    actions.append(approve, reject, prev, next);
    container.appendChild(actions);
    return container;
  }
}
