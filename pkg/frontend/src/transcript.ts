/**
 * Pure rendering: the transcript, entity highlights, and gate bars.
 *
 * Everything here maps data to HTML strings with no DOM access, so the
 * whole visual contract is testable in isolation and the UI can always be
 * rebuilt from the ordered turn list alone.
 */

import type { ReplyEntity, ReplyResponse } from "./api.js";

export interface ChatTurn {
  author: "user" | "model" | "error";
  text: string;
  /** Model turns only. */
  tokens?: string[];
  entities?: ReplyEntity[];
  gateTrace?: number[];
  modelVersion?: string;
  /** Error turns only: the message a retry should resend. */
  failedMessage?: string;
  timestamp: number;
}

export function userTurn(text: string, now = Date.now()): ChatTurn {
  return { author: "user", text, timestamp: now };
}

export function modelTurn(reply: ReplyResponse, now = Date.now()): ChatTurn {
  return {
    author: "model",
    text: reply.response_text,
    tokens: reply.tokens,
    entities: reply.entities,
    gateTrace: reply.gate_trace,
    modelVersion: reply.model_version,
    timestamp: now,
  };
}

export function errorTurn(
  message: string,
  failedMessage: string,
  now = Date.now(),
): ChatTurn {
  return { author: "error", text: message, failedMessage, timestamp: now };
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export interface Segment {
  tokens: string[];
  /** Present when the tokens are one knowledge-word surface. */
  entity?: ReplyEntity;
}

/**
 * Split a token list into plain and entity segments using the declared
 * (position, length) spans.  Spans are trusted but clamped: out-of-range
 * or overlapping spans never crash the renderer, they just lose the part
 * that does not fit.
 */
export function segmentTokens(
  tokens: string[],
  entities: ReplyEntity[],
): Segment[] {
  const sorted = [...entities].sort((a, b) => a.position - b.position);
  const segments: Segment[] = [];
  let cursor = 0;
  for (const ent of sorted) {
    const start = Math.max(ent.position, cursor);
    const end = Math.min(ent.position + ent.length, tokens.length);
    if (end <= start) continue;
    if (start > cursor) segments.push({ tokens: tokens.slice(cursor, start) });
    segments.push({ tokens: tokens.slice(start, end), entity: ent });
    cursor = end;
  }
  if (cursor < tokens.length) segments.push({ tokens: tokens.slice(cursor) });
  return segments;
}

function renderModelText(turn: ChatTurn): string {
  const tokens = turn.tokens ?? [];
  const parts = segmentTokens(tokens, turn.entities ?? []).map((seg) => {
    const text = escapeHtml(seg.tokens.join(" "));
    if (!seg.entity) return text;
    const ent = seg.entity;
    const title = `${ent.entity_id} (${ent.type} via ${ent.predicate}), ` +
      `p_e ${ent.prob.toFixed(2)}, gate ${ent.gate.toFixed(2)}`;
    return `<mark class="entity" data-entity-id="${escapeHtml(ent.entity_id)}"` +
      ` title="${escapeHtml(title)}">${text}</mark>`;
  });
  return parts.join(" ");
}

/**
 * One cell per decode step; the fill opacity is the gate probability, so
 * knowledge-driven steps read as solid and common-word steps as faint.
 */
export function renderGateBar(gateTrace: number[]): string {
  if (gateTrace.length === 0) return "";
  const cells = gateTrace
    .map((g) => {
      const clamped = Math.max(0, Math.min(1, g));
      return `<span class="gate-cell" style="opacity:${clamped.toFixed(2)}"` +
        ` title="gate ${clamped.toFixed(2)}"></span>`;
    })
    .join("");
  return `<div class="gate-bar" aria-label="knowledge gate per step">${cells}</div>`;
}

export function renderTurn(turn: ChatTurn, index: number): string {
  if (turn.author === "user") {
    return `<div class="turn user" data-index="${index}">` +
      `<div class="bubble">${escapeHtml(turn.text)}</div></div>`;
  }
  if (turn.author === "error") {
    return `<div class="turn error" data-index="${index}"><div class="bubble">` +
      `<span class="error-text">${escapeHtml(turn.text)}</span> ` +
      `<button class="retry" data-retry="${escapeHtml(turn.failedMessage ?? "")}">` +
      `retry</button></div></div>`;
  }
  const gate = renderGateBar(turn.gateTrace ?? []);
  return `<div class="turn model" data-index="${index}">` +
    `<div class="bubble selectable">${renderModelText(turn)}${gate}</div></div>`;
}

export function renderTranscript(turns: ChatTurn[]): string {
  return turns.map(renderTurn).join("");
}

/** Side panel: what the entity scorer decided in the selected turn. */
export function renderInspector(turn: ChatTurn | null): string {
  if (turn === null || turn.author !== "model") {
    return `<p class="hint">select a model turn to inspect it</p>`;
  }
  const emissions = turn.entities ?? [];
  if (emissions.length === 0) {
    return `<p class="hint">no knowledge words used</p>`;
  }
  const rows = emissions
    .map((ent) =>
      `<tr class="inspector-row" data-surface="${escapeHtml(ent.surface)}">` +
      `<td>${escapeHtml(ent.surface)}</td><td>${escapeHtml(ent.type)}</td>` +
      `<td>${escapeHtml(ent.predicate)}</td><td>${ent.prob.toFixed(2)}</td>` +
      `<td>${ent.gate.toFixed(2)}</td></tr>`,
    )
    .join("");
  return `<table class="inspector">` +
    `<thead><tr><th>entity</th><th>type</th><th>predicate</th>` +
    `<th>p_e</th><th>gate</th></tr></thead><tbody>${rows}</tbody></table>`;
}
