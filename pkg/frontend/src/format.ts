// Pure helpers behind the renderer: offset conversion, text
// segmentation for highlights, gauge and bar geometry.

import type { LexicalMatch, TicketReason } from "./types.js";

const REASON_LABELS: Record<TicketReason, string> = {
  high_perplexity: "high perplexity",
  high_dispersion: "high dispersion",
  bias_flagged: "bias flagged",
  incomplete_reasoning: "incomplete reasoning",
};

export function reasonLabel(reason: TicketReason): string {
  return REASON_LABELS[reason] ?? reason;
}

const encoder = new TextEncoder();

// Match offsets count UTF-8 bytes; JS strings index UTF-16 units.
export function byteToCharIndex(text: string, byteOffset: number): number {
  let bytes = 0;
  let chars = 0;
  for (const ch of text) {
    if (bytes >= byteOffset) {
      break;
    }
    bytes += encoder.encode(ch).length;
    chars += ch.length;
  }
  return chars;
}

export interface TextSegment {
  text: string;
  match: LexicalMatch | null;
}

/**
 * Split text into plain and matched segments for highlighting.
 * Lexicon terms are ASCII, so a matched span covers term.length chars.
 * Overlapping matches keep the earlier one.
 */
export function segmentByMatches(
  text: string,
  matches: LexicalMatch[],
): TextSegment[] {
  const sorted = [...matches].sort((a, b) => a.offset - b.offset);
  const segments: TextSegment[] = [];
  let cursor = 0;
  for (const match of sorted) {
    const start = byteToCharIndex(text, match.offset);
    if (start < cursor) {
      continue;
    }
    const end = Math.min(start + match.term.length, text.length);
    if (start > cursor) {
      segments.push({ text: text.slice(cursor, start), match: null });
    }
    segments.push({ text: text.slice(start, end), match });
    cursor = end;
  }
  if (cursor < text.length) {
    segments.push({ text: text.slice(cursor), match: null });
  }
  return segments;
}

// Gauge fill percentage; the threshold sits at the 50% mark so a
// reading at exactly the threshold half-fills the bar.
export function gaugePercent(value: number, threshold: number): number {
  if (threshold <= 0 || value <= 0) {
    return 0;
  }
  return Math.min(100, (value / threshold) * 50);
}

// Bar length for one token attribution, relative to the largest
// magnitude in the same report.
export function attributionPercent(weight: number, maxAbs: number): number {
  if (maxAbs <= 0) {
    return 0;
  }
  return Math.min(100, (Math.abs(weight) / maxAbs) * 100);
}
