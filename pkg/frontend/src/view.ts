/** Pure projections from session state to HTML strings.
 *
 * Every diagnostic string is rendered verbatim (HTML-escaped only) and
 * tagged with a data-field attribute so tests can diff the rendered text
 * against the served session state and its log. The view never mutates
 * or invents diagnostic content.
 */

import type {
  ObservationItem,
  SessionState,
  TurnRecord,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function field(name: string, text: string, tag = "span", extra = ""): string {
  return `<${tag} data-field="${name}"${extra}>${escapeHtml(text)}</${tag}>`;
}

export function renderStageBadge(state: SessionState): string {
  const status = state.status ?? state.stage;
  return `<span class="badge badge-${escapeHtml(status)}" data-field="status">${escapeHtml(status)}</span>`;
}

export function renderRoiCard(ref: string, provenanceHint?: string): string {
  // refs have the shape slide:level:x:y; no pixels are served, so the card
  // shows coordinates (an image resolver can be layered on later).
  const parts = ref.split(":");
  const coords = parts.length === 4 ? `(${parts[2]}, ${parts[3]})` : ref;
  const level = parts.length === 4 ? parts[1] : "";
  return [
    `<div class="roi-card">`,
    field("roi-ref", ref, "code"),
    `<div class="roi-meta">${escapeHtml(level)} ${escapeHtml(coords)}` +
      (provenanceHint ? ` · ${escapeHtml(provenanceHint)}` : "") +
      `</div>`,
    `</div>`,
  ].join("");
}

export function renderRoiGallery(state: SessionState): string {
  const refs: string[] = [];
  if (state.screening) refs.push(...state.screening.rois);
  for (const turn of state.turns) refs.push(...turn.rois);
  for (const item of state.observations) refs.push(...item.rois);
  const unique = [...new Set(refs)];
  if (unique.length === 0) return `<div class="roi-gallery empty">no regions selected</div>`;
  return `<div class="roi-gallery">${unique.map((r) => renderRoiCard(r)).join("")}</div>`;
}

export function renderDifferential(state: SessionState): string {
  if (state.differential.length === 0) return "";
  const items = state.differential
    .map((d, i) =>
      `<li><span class="rank">${i + 1}.</span> ${field("differential-item", d)}</li>`)
    .join("");
  return `<section class="differential"><h3>Differential diagnosis</h3><ol>${items}</ol></section>`;
}

export function renderTurn(turn: TurnRecord): string {
  const parts: string[] = [`<article class="turn turn-${escapeHtml(turn.stage)}">`];
  parts.push(`<header>turn ${turn.index} · ${escapeHtml(turn.stage)} · ${escapeHtml(turn.timestamp)}</header>`);
  if (turn.parsed.think) {
    parts.push(
      `<details class="think"><summary>model reasoning (collapsed; not a finding)</summary>` +
        field("think", turn.parsed.think, "pre") +
        `</details>`,
    );
  }
  if (turn.parsed.answer) {
    parts.push(field("answer", turn.parsed.answer, "pre", ` class="answer"`));
  } else {
    parts.push(field("raw-response", turn.raw_response, "pre", ` class="answer raw"`));
  }
  if (turn.rois.length > 0) {
    parts.push(`<div class="turn-rois">${turn.rois.map((r) => renderRoiCard(r)).join("")}</div>`);
  }
  parts.push(`</article>`);
  return parts.join("");
}

export function renderTimeline(state: SessionState): string {
  return `<section class="timeline">${state.turns.map(renderTurn).join("")}</section>`;
}

export function renderObservations(state: SessionState): string {
  if (state.observations.length === 0) return "";
  const items = state.observations
    .map((o: ObservationItem) =>
      `<li><code>${escapeHtml(o.tool)}</code> ${field("observation-text", o.text)}</li>`)
    .join("");
  return `<section class="observations"><h3>Slide observations</h3><ul>${items}</ul></section>`;
}

export function renderExamResults(state: SessionState): string {
  if (state.exam_results.length === 0) return "";
  const items = state.exam_results
    .map((e) => {
      const simulated = e.source.startsWith("oracle")
        ? ` <em class="simulated">(simulated)</em>` : "";
      return `<li>${field("exam-result-text", e.text, "pre")}${simulated}</li>`;
    })
    .join("");
  return `<section class="exam-results"><h3>Examination results</h3><ul>${items}</ul></section>`;
}

export function renderExamForm(state: SessionState): string {
  const status = state.status ?? "";
  if (status !== "awaiting_exams" || state.pending_exams.length === 0) return "";
  const rows = state.pending_exams
    .map(
      (exam, i) =>
        `<label>${field("pending-exam", exam)}` +
        `<input name="exam-${i}" data-exam="${escapeHtml(exam)}" placeholder="result"/></label>`,
    )
    .join("");
  return (
    `<form class="exam-form" id="exam-form">` +
    `<h3>Pending examinations</h3>${rows}` +
    `<button type="submit">Submit results</button>` +
    `<div class="form-error" id="exam-form-error"></div>` +
    `</form>`
  );
}

export function renderFinalBanner(state: SessionState): string {
  if (state.stage === "aborted") {
    return `<div class="final banner-aborted">session aborted: ${escapeHtml(state.abort_cause ?? "unknown cause")}</div>`;
  }
  if (state.stage !== "done") return "";
  if (state.final_diagnosis) {
    return (
      `<div class="final banner-done"><h2>Final diagnosis</h2>` +
      field("final-diagnosis", state.final_diagnosis, "div", ` class="diagnosis"`) +
      `</div>`
    );
  }
  return `<div class="final banner-inconclusive">inconclusive; last differential stands</div>`;
}

export function renderSessionView(state: SessionState): string {
  return [
    `<div class="session" data-session="${escapeHtml(state.session_id)}">`,
    `<header class="session-header">`,
    `<h1>Session ${escapeHtml(state.session_id)}</h1>`,
    `<div>slide ${field("slide-id", state.slide_id, "code")} · round ${state.rounds} · ${renderStageBadge(state)}</div>`,
    `</header>`,
    `<section class="case-info"><h3>Case information</h3>${field("case-info", state.case_info, "pre")}</section>`,
    renderFinalBanner(state),
    renderDifferential(state),
    renderExamForm(state),
    renderObservations(state),
    renderExamResults(state),
    renderTimeline(state),
    `<section class="rois"><h3>Region gallery</h3>${renderRoiGallery(state)}</section>`,
    `</div>`,
  ].join("\n");
}

/** All rendered diagnostic strings by field name, HTML-unescaped: the
 * no-fabrication check compares these byte-for-byte with served state. */
export function extractRenderedFields(html: string): Map<string, string[]> {
  const out = new Map<string, string[]>();
  const pattern = /data-field="([^"]+)"[^>]*>([\s\S]*?)<\/(?:span|pre|div|code)>/g;
  let match: RegExpExecArray | null;
  while ((match = pattern.exec(html)) !== null) {
    const name = match[1];
    const text = unescapeHtml(match[2]);
    if (!out.has(name)) out.set(name, []);
    out.get(name)!.push(text);
  }
  return out;
}

export function unescapeHtml(text: string): string {
  return text
    .replace(/&#39;/g, "'")
    .replace(/&quot;/g, '"')
    .replace(/&gt;/g, ">")
    .replace(/&lt;/g, "<")
    .replace(/&amp;/g, "&");
}
