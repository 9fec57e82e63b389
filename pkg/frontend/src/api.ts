// HTTP client for the operator bridge: snapshot poll, decision submission,
// and a fetch-based server-sent-event reader that works in both browser and
// node (node 20 has no EventSource, and we need explicit resume control).

import type { DecisionResult, StateSnapshot, TraceEvent } from './types.js';

export class ApiClient {
  constructor(private readonly base: string) {}

  async getState(): Promise<StateSnapshot> {
    const response = await fetch(`${this.base}/state`);
    if (!response.ok) throw new Error(`state fetch failed: ${response.status}`);
    return (await response.json()) as StateSnapshot;
  }

  async submitDecision(
    deferralId: number,
    decision: 'approve' | 'deny',
    rationale: string,
  ): Promise<DecisionResult> {
    const response = await fetch(`${this.base}/decisions`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ deferral_id: deferralId, decision, rationale }),
    });
    return (await response.json()) as DecisionResult;
  }

  async fetchTrace(): Promise<TraceEvent[]> {
    const response = await fetch(`${this.base}/trace`);
    if (!response.ok) throw new Error(`trace fetch failed: ${response.status}`);
    const text = await response.text();
    return text
      .split('\n')
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as TraceEvent);
  }

  /**
   * Stream trace records. `lastId` is the server's composite cursor
   * "<micros>-<seq>"; pass the previous value to resume without gaps.
   * Returns a stop function.
   */
  streamEvents(
    onEvent: (event: TraceEvent, id: string) => void,
    options: { lastId?: string; onError?: (err: unknown) => void } = {},
  ): () => void {
    const controller = new AbortController();
    let lastId = options.lastId ?? '';
    const run = async () => {
      const url = lastId
        ? `${this.base}/events?since=${encodeURIComponent(lastId)}`
        : `${this.base}/events`;
      const response = await fetch(url, { signal: controller.signal });
      if (!response.ok || !response.body) {
        throw new Error(`event stream failed: ${response.status}`);
      }
      const reader = response.body.getReader();
      const decoder = new TextDecoder();
      let buffer = '';
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let boundary;
        while ((boundary = buffer.indexOf('\n\n')) >= 0) {
          const frame = buffer.slice(0, boundary);
          buffer = buffer.slice(boundary + 2);
          const parsed = parseSseFrame(frame);
          if (parsed) {
            lastId = parsed.id;
            onEvent(parsed.event, parsed.id);
          }
        }
      }
    };
    run().catch((err) => {
      if (!controller.signal.aborted) options.onError?.(err);
    });
    return () => controller.abort();
  }
}

export function parseSseFrame(
  frame: string,
): { id: string; event: TraceEvent } | null {
  let id = '';
  let data = '';
  for (const line of frame.split('\n')) {
    if (line.startsWith('id: ')) id = line.slice(4).trim();
    else if (line.startsWith('data: ')) data = line.slice(6);
  }
  if (!data) return null;
  return { id, event: JSON.parse(data) as TraceEvent };
}

/** Composite cursor comparison: ids are "<micros>-<seq>", ordered lexicographically on the pair. */
export function compareEventIds(a: string, b: string): number {
  const [am, as] = a.split('-').map(Number);
  const [bm, bs] = b.split('-').map(Number);
  if (am !== bm) return am - bm;
  return as - bs;
}
