// Deferral queue: card rendering plus the per-card submission state machine.
// A card disables on the first click and stays disabled once the server
// acknowledges; a duplicate submission surfaces the server's
// already-resolved answer inline instead of pretending it worked.

import type { ApiClient } from './api.js';
import { escapeHtml } from './feed.js';
import type { DeferralView } from './types.js';

export type CardPhase = 'pending' | 'submitting' | 'acked' | 'error';

export interface CardState {
  phase: CardPhase;
  message: string;
}

export class DeferralPanel {
  private cards = new Map<number, CardState>();

  constructor(private readonly api: ApiClient) {}

  cardState(id: number): CardState {
    return this.cards.get(id) ?? { phase: 'pending', message: '' };
  }

  /** One decision per card: repeat submissions are refused locally. */
  async submit(
    id: number,
    decision: 'approve' | 'deny',
    rationale: string,
  ): Promise<CardState> {
    const current = this.cardState(id);
    if (current.phase === 'submitting' || current.phase === 'acked') {
      return current;
    }
    this.cards.set(id, { phase: 'submitting', message: '' });
    try {
      const result = await this.api.submitDecision(id, decision, rationale);
      const next: CardState = result.ok
        ? { phase: 'acked', message: `${decision} submitted` }
        : { phase: 'error', message: result.error ?? 'rejected' };
      this.cards.set(id, next);
      return next;
    } catch (err) {
      const next: CardState = { phase: 'error', message: String(err) };
      this.cards.set(id, next);
      return next;
    }
  }

  render(deferrals: DeferralView[]): string {
    if (deferrals.length === 0) {
      return '<div class="deferral-empty">no deferrals</div>';
    }
    return deferrals.map((d) => this.renderCard(d)).join('\n');
  }

  private renderCard(d: DeferralView): string {
    const card = this.cardState(d.deferral_id);
    const resolved = d.status !== 'pending';
    const disabled = resolved || card.phase === 'submitting' || card.phase === 'acked'
      ? ' disabled' : '';
    const statusBadge = resolved
      ? `<span class="badge badge-${d.status}">${d.status}</span>`
      : '<span class="badge badge-pending">pending</span>';
    const inline = card.phase === 'error'
      ? `<div class="card-error">${escapeHtml(card.message)}</div>`
      : card.phase === 'acked'
        ? `<div class="card-ack">${escapeHtml(card.message)}</div>`
        : '';
    return `<div class="deferral-card" data-id="${d.deferral_id}">
      <div class="card-head">#${d.deferral_id} ${escapeHtml(d.requester)} ${statusBadge}</div>
      <div class="card-body">
        <div>subject <b>${escapeHtml(d.subject)}</b></div>
        <div>confidence <b>${d.confidence.toFixed(2)}</b></div>
        <div>proposed <b>${escapeHtml(d.proposed)}</b>${
          d.proposed_target ? ` on <b>${escapeHtml(d.proposed_target)}</b>` : ''}</div>
        <div>deadline t=${escapeHtml(d.deadline)}</div>
        ${d.rationale ? `<div>rationale: ${escapeHtml(d.rationale)}</div>` : ''}
      </div>
      <div class="card-actions">
        <input type="text" class="rationale" placeholder="rationale" ${disabled}>
        <button class="approve" data-id="${d.deferral_id}"${disabled}>approve</button>
        <button class="deny" data-id="${d.deferral_id}"${disabled}>deny</button>
      </div>
      ${inline}
    </div>`;
  }
}
