// Console wiring: snapshot poll + event stream into the three panels.
// Every mutation flows through the decision endpoint; on stream gaps we
// re-request a snapshot and resume the stream from its cursor.

import { ApiClient } from './api.js';
import { DeferralPanel } from './deferrals.js';
import { EventFeed, renderFeed } from './feed.js';
import { renderAgents, renderNodes } from './topology.js';
import type { StateSnapshot } from './types.js';

const base = window.location.origin;
const api = new ApiClient(base);
const feed = new EventFeed();
const deferrals = new DeferralPanel(api);

let snapshot: StateSnapshot | null = null;
let stopStream: (() => void) | null = null;

function el(id: string): HTMLElement {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id}`);
  return found;
}

function render(): void {
  if (!snapshot) return;
  el('status').innerHTML =
    `<b>${snapshot.scenario ?? ''}</b> · ${snapshot.status} · t=${snapshot.time}` +
    (snapshot.paused_on
      ? ` · waiting on deferral #${snapshot.paused_on.deferral_id}` : '');
  el('deferrals').innerHTML = deferrals.render(snapshot.deferrals);
  el('nodes').innerHTML = renderNodes(snapshot.nodes);
  el('agents').innerHTML = renderAgents(snapshot.agents);
  el('feed').innerHTML = renderFeed(feed);
}

async function refreshSnapshot(): Promise<void> {
  try {
    snapshot = await api.getState();
    el('banner').textContent = '';
  } catch {
    el('banner').textContent = 'server unreachable';
  }
  render();
}

function startStream(fromId: string): void {
  stopStream?.();
  stopStream = api.streamEvents(
    (event, id) => {
      if (!feed.push(event, id)) return;
      if (feed.hasGap()) {
        void resyncAfterGap();
        return;
      }
      render();
    },
    { lastId: fromId, onError: () => setTimeout(() => startStream(feed.lastId), 1000) },
  );
}

async function resyncAfterGap(): Promise<void> {
  const state = await api.getState();
  snapshot = state;
  feed.resync(state.last_event_id ?? '');
  startStream(feed.lastId);
  render();
}

function wireActions(): void {
  el('deferrals').addEventListener('click', (raw) => {
    const target = raw.target as HTMLElement;
    if (target.tagName !== 'BUTTON') return;
    const id = Number(target.dataset.id);
    const decision = target.classList.contains('approve') ? 'approve' : 'deny';
    const card = target.closest('.deferral-card');
    const rationale =
      (card?.querySelector('.rationale') as HTMLInputElement | null)?.value ?? '';
    void deferrals.submit(id, decision, rationale).then(async () => {
      await refreshSnapshot();
    });
    render();
  });
  el('filter-toggle').addEventListener('change', (raw) => {
    feed.alertsOnly = !(raw.target as HTMLInputElement).checked;
    render();
  });
}

async function start(): Promise<void> {
  wireActions();
  await refreshSnapshot();
  startStream('');
  setInterval(refreshSnapshot, 1000);
}

void start();
