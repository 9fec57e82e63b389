// Wire types mirrored from the simulator's operator bridge. The server is
// the source of truth; the console never invents state of its own.

export interface DeferralView {
  deferral_id: number;
  requester: string;
  subject: string;
  confidence: number;
  proposed: string;
  proposed_target: string | null;
  enqueued_at: string;
  deadline: string;
  status: 'pending' | 'approved' | 'denied' | 'expired';
  rationale: string;
}

export interface NodeView {
  id: string;
  kind: string;
  isolation: boolean;
  in_bounds: boolean;
  agents: string[];
  compromised: boolean;
  blocked: boolean;
}

export interface AgentView {
  id: string;
  node: string;
  phase: string;
  quarantined: boolean;
  honeypot_active: boolean;
  mode: string;
}

export interface StateSnapshot {
  status: 'starting' | 'running' | 'paused' | 'finished';
  time: string;
  scenario?: string;
  paused_on: DeferralView | null;
  deferrals: DeferralView[];
  nodes: NodeView[];
  agents: AgentView[];
  last_event_id?: string;
}

export interface TraceEvent {
  t: number;
  seq: number;
  node: string | null;
  agent: string | null;
  kind: string;
  details: Record<string, unknown>;
}

export interface DecisionResult {
  ok: boolean;
  error?: string;
}
