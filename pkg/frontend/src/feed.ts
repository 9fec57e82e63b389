// Event feed model: (t, seq)-ordered record list with the alert-grade
// default filter and out-of-order (gap) detection. A gap means the stream
// and our cursor disagree; the owner should re-request a snapshot and
// resume from its last_event_id.

import { compareEventIds } from './api.js';
import type { TraceEvent } from './types.js';

// the operator only needs alert-grade events by default; the full trace is a toggle
export const ALERT_KINDS = new Set([
  'detection',
  'deferral-created',
  'deferral-resolved',
  'deferral-expired',
  'acting-alone',
  'honeypot-isolated',
  'flow-blocked',
  'coa-log-only',
  'verification-failed',
  'quarantine',
  'overwrite-sent',
  'agent-installed',
  'boundary-check',
  'self-destruct',
  'transfer-denied',
  'infiltration',
]);

export interface FeedEntry {
  id: string;
  event: TraceEvent;
}

export class EventFeed {
  readonly entries: FeedEntry[] = [];
  alertsOnly = true;
  lastId = '';
  private gapped = false;

  /** Returns false when the record arrived out of order (gap detected). */
  push(event: TraceEvent, id: string): boolean {
    if (this.lastId && compareEventIds(id, this.lastId) <= 0) {
      this.gapped = true;
      return false;
    }
    this.entries.push({ id, event });
    this.lastId = id;
    return true;
  }

  hasGap(): boolean {
    return this.gapped;
  }

  /** Reset after a snapshot re-sync; keeps entries up to the snapshot cursor. */
  resync(snapshotLastId: string): void {
    this.gapped = false;
    if (snapshotLastId && this.lastId &&
        compareEventIds(this.lastId, snapshotLastId) > 0) {
      // drop anything past the authoritative cursor; the stream will replay it
      while (this.entries.length &&
             compareEventIds(this.entries[this.entries.length - 1].id, snapshotLastId) > 0) {
        this.entries.pop();
      }
      this.lastId = this.entries.length
        ? this.entries[this.entries.length - 1].id
        : '';
    }
  }

  visible(): FeedEntry[] {
    if (!this.alertsOnly) return this.entries;
    return this.entries.filter((e) => ALERT_KINDS.has(e.event.kind));
  }
}

export function renderFeed(feed: EventFeed): string {
  const rows = feed.visible().slice(-200).map(({ event }) => {
    const alert = ALERT_KINDS.has(event.kind) ? ' feed-alert' : '';
    const who = event.agent ?? event.node ?? '-';
    return `<div class="feed-row${alert}">
      <span class="feed-t">${event.t.toFixed(3)}</span>
      <span class="feed-kind">${escapeHtml(event.kind)}</span>
      <span class="feed-who">${escapeHtml(who)}</span>
      <span class="feed-details">${escapeHtml(JSON.stringify(event.details))}</span>
    </div>`;
  });
  if (rows.length === 0) {
    return '<div class="feed-empty">no events yet</div>';
  }
  return rows.join('\n');
}

export function escapeHtml(value: string): string {
  return value
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}
