// DOM builders for the review console. Rendering is read-only: the
// flag decisions and scores arrive precomputed from the server, and
// every mutation goes back through the gateway client in app.ts.

import {
  attributionPercent,
  gaugePercent,
  reasonLabel,
  segmentByMatches,
} from "./format.js";
import type {
  BiasReport,
  PendingEntry,
  ResultRecord,
  Ticket,
  UncertaintyReport,
} from "./types.js";

// Server-side defaults, used only as reference marks on the gauges.
// The authoritative flagged booleans come with each report.
export const PPL_THRESHOLD = 10.0;
export const STD_THRESHOLD = 0.05;

const PUBMED_URL = "https://pubmed.ncbi.nlm.nih.gov/";

export interface CardHandlers {
  onFeedback(ticket: Ticket, text: string): void;
  onApprove(ticket: Ticket): void;
}

export function renderPending(
  container: HTMLElement,
  entries: PendingEntry[],
  handlers: CardHandlers,
): void {
  container.textContent = "";
  if (entries.length === 0) {
    const empty = el("p", "empty-state");
    empty.textContent = "No pending reviews.";
    container.appendChild(empty);
    return;
  }
  for (const entry of entries) {
    container.appendChild(renderCard(entry, handlers));
  }
}

export function renderCard(
  entry: PendingEntry,
  handlers: CardHandlers,
): HTMLElement {
  const { ticket, result } = entry;
  const card = el("article", "card");
  card.dataset.ticketId = ticket.ticket_id;

  card.appendChild(cardHeader(ticket, result));
  card.appendChild(questionSection(result));
  const steps = stepsSection(result);
  if (steps) {
    card.appendChild(steps);
  }
  card.appendChild(answerSection(result));
  card.appendChild(evidenceSection(result));

  const uncertainty = result.refined_uncertainty ?? result.base_uncertainty;
  if (uncertainty) {
    card.appendChild(uncertaintySection(uncertainty));
  }
  const bias = result.refined_bias ?? result.base_bias;
  if (bias) {
    card.appendChild(biasSection(bias));
    if (bias.attributions && bias.attributions.length > 0) {
      card.appendChild(attributionSection(bias.attributions));
    }
  }

  card.appendChild(feedbackForm(ticket, handlers));
  return card;
}

function cardHeader(ticket: Ticket, result: ResultRecord): HTMLElement {
  const header = el("header", "card-header");
  const badge = el("span", `badge reason-${ticket.reason}`);
  badge.textContent = reasonLabel(ticket.reason);
  header.appendChild(badge);

  const id = el("code", "ticket-id");
  id.textContent = ticket.ticket_id;
  header.appendChild(id);

  const status = el("span", "result-status");
  status.textContent = result.status;
  header.appendChild(status);

  const when = el("span", "created-at");
  when.textContent = new Date(ticket.created_at).toLocaleString();
  header.appendChild(when);
  return header;
}

function questionSection(result: ResultRecord): HTMLElement {
  const section = el("section", "question");
  section.appendChild(heading("Question"));
  const p = el("p");
  p.textContent = result.query.text;
  section.appendChild(p);
  return section;
}

function stepsSection(result: ResultRecord): HTMLElement | null {
  const response = result.base_response;
  if (!response || response.steps.length === 0) {
    return null;
  }
  const section = el("section", "steps");
  section.appendChild(heading("Reasoning steps"));
  const list = el("ol");
  for (const [, text] of response.steps) {
    const item = el("li");
    item.textContent = text;
    list.appendChild(item);
  }
  section.appendChild(list);
  if (!response.chain_complete) {
    const note = el("p", "chain-note");
    note.textContent = response.missing_part
      ? `Chain incomplete: missing ${response.missing_part}.`
      : "Chain incomplete.";
    section.appendChild(note);
  }
  return section;
}

// The text the tickets refer to: the latest refined response when one
// exists, otherwise the base response. Bias highlights use the report
// computed over that same text.
function answerSection(result: ResultRecord): HTMLElement {
  const section = el("section", "answer");
  const refined = result.refined_response !== null;
  section.appendChild(heading(refined ? "Response after refinement" : "Response"));
  const text = result.refined_response ?? result.base_response?.full_text ?? "";
  const bias = refined ? result.refined_bias : result.base_bias;
  const p = el("p", "answer-text");
  for (const segment of segmentByMatches(text, bias?.lexical_matches ?? [])) {
    if (segment.match) {
      const mark = el("mark", "bias-term");
      mark.textContent = segment.text;
      mark.title = segment.match.category;
      p.appendChild(mark);
    } else {
      p.appendChild(document.createTextNode(segment.text));
    }
  }
  section.appendChild(p);
  return section;
}

function evidenceSection(result: ResultRecord): HTMLElement {
  const section = el("section", "evidence");
  section.appendChild(heading("Evidence"));
  const bundle = result.evidence;
  if (!bundle || bundle.items.length === 0) {
    const note = el("p", "evidence-note");
    note.textContent = "No citations retrieved.";
    section.appendChild(note);
    return section;
  }
  const list = el("ul", "citations");
  for (const item of bundle.items) {
    const li = el("li");
    const link = el("a", "citation") as HTMLAnchorElement;
    link.href = `${PUBMED_URL}${encodeURIComponent(item.pmid)}/`;
    link.target = "_blank";
    link.rel = "noopener";
    link.textContent = `[${item.rank}] PMID ${item.pmid}`;
    li.appendChild(link);
    list.appendChild(li);
  }
  section.appendChild(list);
  if (bundle.fallback_used) {
    const note = el("p", "evidence-note");
    note.textContent = "Retrieval fell back; response was generated without citations.";
    section.appendChild(note);
  }
  return section;
}

function uncertaintySection(report: UncertaintyReport): HTMLElement {
  const section = el("section", "uncertainty");
  section.appendChild(heading("Uncertainty"));
  section.appendChild(
    gauge(
      "perplexity",
      report.perplexity,
      PPL_THRESHOLD,
      report.perplexity > PPL_THRESHOLD,
    ),
  );
  section.appendChild(
    gauge(
      "dispersion",
      report.similarity_std,
      STD_THRESHOLD,
      report.similarity_std > STD_THRESHOLD,
    ),
  );
  const meta = el("p", "report-meta");
  meta.textContent =
    `${report.sample_count} samples, ` +
    `mean similarity ${report.mean_pairwise_similarity.toFixed(3)}` +
    (report.flagged ? ", flagged" : "");
  section.appendChild(meta);
  return section;
}

function gauge(
  label: string,
  value: number,
  threshold: number,
  over: boolean,
): HTMLElement {
  const row = el("div", over ? "gauge over" : "gauge");
  const name = el("span", "gauge-label");
  name.textContent = `${label} ${value.toFixed(3)} / ${threshold}`;
  row.appendChild(name);
  const track = el("div", "gauge-track");
  const fill = el("div", "gauge-fill");
  fill.style.width = `${gaugePercent(value, threshold).toFixed(2)}%`;
  track.appendChild(fill);
  const marker = el("div", "gauge-marker");
  track.appendChild(marker);
  row.appendChild(track);
  return row;
}

function biasSection(report: BiasReport): HTMLElement {
  const section = el("section", "bias");
  section.appendChild(heading("Bias"));
  const valence = el("p", "report-meta");
  valence.textContent =
    `sentiment valence ${report.sentiment_valence.toFixed(3)}` +
    (report.flagged ? ", flagged" : "");
  section.appendChild(valence);
  if (report.lexical_matches.length > 0) {
    const list = el("ul", "bias-matches");
    for (const match of report.lexical_matches) {
      const li = el("li");
      li.textContent = `"${match.term}" (${match.category})`;
      list.appendChild(li);
    }
    section.appendChild(list);
  }
  return section;
}

// Signed horizontal bars, one per token. Colour encodes sign only;
// magnitude is the bar length.
function attributionSection(attributions: [string, number][]): HTMLElement {
  const section = el("section", "attribution");
  section.appendChild(heading("Token attribution"));
  const maxAbs = Math.max(...attributions.map(([, w]) => Math.abs(w)));
  for (const [token, weight] of attributions) {
    const row = el("div", "attr-row");
    const name = el("span", "attr-token");
    name.textContent = token;
    row.appendChild(name);
    const track = el("div", "attr-track");
    const bar = el("div", weight < 0 ? "attr-bar attr-neg" : "attr-bar attr-pos");
    bar.style.width = `${attributionPercent(weight, maxAbs).toFixed(2)}%`;
    track.appendChild(bar);
    row.appendChild(track);
    const num = el("span", "attr-weight");
    num.textContent = weight.toFixed(3);
    row.appendChild(num);
    section.appendChild(row);
  }
  return section;
}

function feedbackForm(ticket: Ticket, handlers: CardHandlers): HTMLElement {
  const section = el("section", "feedback");
  const textarea = el("textarea", "feedback-text") as HTMLTextAreaElement;
  textarea.placeholder = "Expert feedback for the next refinement round";
  textarea.rows = 3;
  section.appendChild(textarea);

  const actions = el("div", "feedback-actions");
  const send = button("Send feedback", "send-feedback");
  send.addEventListener("click", () => {
    const text = textarea.value.trim();
    if (text) {
      handlers.onFeedback(ticket, text);
    }
  });
  actions.appendChild(send);

  const approve = button("Approve", "approve");
  approve.addEventListener("click", () => handlers.onApprove(ticket));
  actions.appendChild(approve);
  section.appendChild(actions);
  return section;
}

function heading(text: string): HTMLElement {
  const h = el("h3");
  h.textContent = text;
  return h;
}

function button(label: string, className: string): HTMLButtonElement {
  const b = el("button", className) as HTMLButtonElement;
  b.type = "button";
  b.textContent = label;
  return b;
}

function el(tag: string, className?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  return node;
}
