// Topology status panel: node grid plus agent roster from the snapshot.

import { escapeHtml } from './feed.js';
import type { AgentView, NodeView } from './types.js';

export function renderNodes(nodes: NodeView[]): string {
  return nodes.map((node) => {
    const flags = [
      node.compromised ? 'compromised' : '',
      node.blocked ? 'blocked' : '',
      node.isolation ? 'isolated-container' : '',
      node.in_bounds ? '' : 'out-of-bounds',
    ].filter(Boolean);
    const cls = node.compromised ? ' node-compromised'
      : node.blocked ? ' node-blocked' : '';
    return `<div class="node-card${cls}">
      <div class="node-id">${escapeHtml(node.id)} <small>${escapeHtml(node.kind)}</small></div>
      <div class="node-agents">${node.agents.map(escapeHtml).join(', ') || '-'}</div>
      ${flags.length ? `<div class="node-flags">${flags.join(' · ')}</div>` : ''}
    </div>`;
  }).join('\n');
}

export function renderAgents(agents: AgentView[]): string {
  const rows = agents.map((agent) => {
    const marks = [
      agent.quarantined ? 'quarantined' : '',
      agent.honeypot_active ? 'honeypot' : '',
    ].filter(Boolean).join(' ');
    return `<tr class="${agent.quarantined ? 'agent-quarantined' : ''}">
      <td>${escapeHtml(agent.id)}</td>
      <td>${escapeHtml(agent.node)}</td>
      <td>${escapeHtml(agent.phase)}</td>
      <td>${escapeHtml(agent.mode)}</td>
      <td>${marks}</td>
    </tr>`;
  });
  return `<table class="agents">
    <thead><tr><th>agent</th><th>node</th><th>phase</th><th>mode</th><th></th></tr></thead>
    <tbody>${rows.join('\n')}</tbody>
  </table>`;
}
