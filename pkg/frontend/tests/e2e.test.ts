// End-to-end console checks against a real interactive server: the deferral
// surfaces in a snapshot, approve drives the proposed action, deny yields
// log-only, and a double submit resolves exactly once.

import { spawn, type ChildProcess } from 'node:child_process';
import { afterEach, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { EventFeed } from '../src/feed.js';
import type { StateSnapshot, TraceEvent } from '../src/types.js';

const PYTHON = process.env.BLUESIM_PYTHON ?? 'python3';

interface Server {
  child: ChildProcess;
  base: string;
}

let running: Server | null = null;

async function startServer(): Promise<Server> {
  const child = spawn(PYTHON, [
    '-m', 'bluesim.cli', 'interactive', 'table1-semi',
    '--listen', '127.0.0.1:0', '--wall-timeout', '120', '--linger', '60',
  ], { stdio: ['ignore', 'pipe', 'pipe'] });
  const base = await new Promise<string>((resolve, reject) => {
    let buffer = '';
    const timer = setTimeout(() => reject(new Error(`server never listened: ${buffer}`)), 30_000);
    child.stdout!.on('data', (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/listening on (http:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    child.on('exit', (code) => reject(new Error(`server exited early: ${code}`)));
  });
  running = { child, base };
  return running;
}

afterEach(() => {
  running?.child.kill('SIGKILL');
  running = null;
});

async function waitFor<T>(
  probe: () => Promise<T | null>, timeoutMs = 60_000, stepMs = 50,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const result = await probe().catch(() => null);
    if (result !== null) return result;
    if (Date.now() > deadline) throw new Error('timed out waiting');
    await new Promise((r) => setTimeout(r, stepMs));
  }
}

async function waitForPause(api: ApiClient): Promise<StateSnapshot> {
  return waitFor(async () => {
    const state = await api.getState();
    return state.paused_on ? state : null;
  });
}

async function waitForFinish(api: ApiClient): Promise<StateSnapshot> {
  return waitFor(async () => {
    const state = await api.getState();
    return state.status === 'finished' ? state : null;
  });
}

describe('console against a live interactive server', () => {
  it('surfaces the deferral, approve triggers the proposed action, double submit resolves once', async () => {
    const { base } = await startServer();
    const api = new ApiClient(base);

    const paused = await waitForPause(api);
    const deferral = paused.paused_on!;
    expect(deferral.proposed).toBe('honeypot-isolate');
    expect(paused.deferrals.some(
      (d) => d.deferral_id === deferral.deferral_id && d.status === 'pending',
    )).toBe(true);

    const first = await api.submitDecision(deferral.deferral_id, 'approve', 'contain');
    expect(first.ok).toBe(true);
    const second = await api.submitDecision(deferral.deferral_id, 'approve', 'again');
    expect(second.ok).toBe(false);
    expect(second.error).toBe('already-resolved');

    await waitForFinish(api);
    const trace = await api.fetchTrace();
    const resolutions = trace.filter((e) => e.kind === 'deferral-resolved');
    expect(resolutions).toHaveLength(1);
    expect(resolutions[0].details.decision).toBe('approve');
    expect(trace.some((e) => e.kind === 'honeypot-isolated')).toBe(true);

    // causality: the detection precedes its deferral card's creation
    const detectionIndex = trace.findIndex((e) => e.kind === 'detection');
    const deferralIndex = trace.findIndex((e) => e.kind === 'deferral-created');
    expect(detectionIndex).toBeGreaterThanOrEqual(0);
    expect(detectionIndex).toBeLessThan(deferralIndex);
  }, 180_000);

  it('deny yields log-only with no destructive action', async () => {
    const { base } = await startServer();
    const api = new ApiClient(base);

    const paused = await waitForPause(api);
    const result = await api.submitDecision(
      paused.paused_on!.deferral_id, 'deny', 'hold fire');
    expect(result.ok).toBe(true);

    await waitForFinish(api);
    const trace = await api.fetchTrace();
    expect(trace.some((e) => e.kind === 'coa-log-only')).toBe(true);
    for (const kind of ['honeypot-isolated', 'flow-blocked', 'quarantine',
                        'overwrite-sent']) {
      expect(trace.some((e) => e.kind === kind)).toBe(false);
    }
    const snapshot = await api.getState();
    expect(snapshot.deferrals[0].status).toBe('denied');
  }, 180_000);

  it('event stream delivers ordered records and resumes without gaps', async () => {
    const { base } = await startServer();
    const api = new ApiClient(base);

    const feed = new EventFeed();
    const seen: TraceEvent[] = [];
    const stop = api.streamEvents((event, id) => {
      feed.push(event, id);
      seen.push(event);
    });

    const paused = await waitForPause(api);
    await waitFor(async () => (seen.length >= 5 ? true : null));
    stop();
    expect(feed.hasGap()).toBe(false);
    const resumePoint = feed.lastId;

    await api.submitDecision(paused.paused_on!.deferral_id, 'approve', 'go');
    await waitForFinish(api);

    // resume from the cursor: nothing duplicated, nothing missing
    const resumed = new EventFeed();
    resumed.lastId = resumePoint;
    const stop2 = api.streamEvents((event, id) => resumed.push(event, id),
                                   { lastId: resumePoint });
    await waitFor(async () =>
      resumed.entries.some((e) => e.event.kind === 'repo-sync') ? true : null);
    stop2();
    expect(resumed.hasGap()).toBe(false);

    const trace = await api.fetchTrace();
    const firstIds = new Set(feed.entries.map((e) => e.id));
    const total = feed.entries.length + resumed.entries.length;
    expect(resumed.entries.every((e) => !firstIds.has(e.id))).toBe(true);
    expect(total).toBe(trace.length);
  }, 180_000);
});
