// Fixture payloads shaped exactly like the gateway's JSON.

import type {
  PendingEntry,
  ResultRecord,
  Ticket,
} from "../src/types.js";

export const BIASED_ANSWER =
  "This treatment is a guaranteed cure and it always works for every patient.";

export const FULL_TEXT =
  "Step 1: Review the cited evidence.\n" +
  "Step 2: Weigh effect sizes against side effects.\n" +
  "Step 3: State the conclusion.\n" +
  "Based on the above steps, here is the final answer:\n" +
  BIASED_ANSWER;

// FULL_TEXT is pure ASCII, so char index equals UTF-8 byte offset
function asciiOffset(term: string): number {
  const index = FULL_TEXT.indexOf(term);
  if (index < 0) {
    throw new Error(`fixture term not found: ${term}`);
  }
  return index;
}

export function makeTicket(overrides: Partial<Ticket> = {}): Ticket {
  return {
    ticket_id: "q1:bias_flagged",
    result_id: "q1",
    reason: "bias_flagged",
    created_at: "2026-08-22T10:15:00+00:00",
    state: "pending",
    feedback: null,
    ...overrides,
  };
}

export function makeResult(overrides: Partial<ResultRecord> = {}): ResultRecord {
  return {
    result_id: "q1",
    query: {
      id: "q1",
      text: "Does this treatment cure the condition?",
      expertise: "patient",
      received_at: "2026-08-22T10:14:58+00:00",
    },
    status: "pending_review",
    created_at: "2026-08-22T10:14:58+00:00",
    evidence: {
      query_text: "Does this treatment cure the condition?",
      items: [
        { pmid: "12345", rank: 1 },
        { pmid: "67890", rank: 2 },
      ],
      fallback_used: false,
    },
    base_response: {
      full_text: FULL_TEXT,
      steps: [
        [1, "Review the cited evidence."],
        [2, "Weigh effect sizes against side effects."],
        [3, "State the conclusion."],
      ],
      final_answer: BIASED_ANSWER,
      regeneration_count: 0,
      chain_complete: true,
      missing_part: null,
      prompt: "Question: Does this treatment cure the condition?",
      output: {
        text: "(full generation)",
        token_logprobs: [
          ["This", -0.2],
          ["treatment", -0.4],
        ],
      },
    },
    base_uncertainty: {
      sample_count: 5,
      mean_pairwise_similarity: 0.93,
      similarity_std: 0.012,
      perplexity: 3.4,
      flagged: false,
      round: 0,
    },
    base_bias: {
      lexical_matches: [
        {
          term: "guaranteed cure",
          category: "overpromising",
          offset: asciiOffset("guaranteed cure"),
        },
        {
          term: "always",
          category: "absolutist",
          offset: asciiOffset("always"),
        },
      ],
      sentiment_valence: 0.42,
      flagged: true,
      attributions: [
        ["guaranteed", 0.61],
        ["cure", 0.34],
        ["always", 0.22],
        ["patient", -0.08],
      ],
      round: 0,
    },
    base_relevance: 0.81,
    refined_response: null,
    refined_uncertainty: null,
    refined_bias: null,
    refinement_rounds: 0,
    stage_latencies: [
      ["evidence_retrieval", 12.0],
      ["generation", 31.5],
      ["uncertainty", 18.2],
      ["bias", 2.1],
      ["review", 0.4],
    ],
    total_latency_ms: 64.2,
    error: null,
    ...overrides,
  };
}

export function twoTicketFixture(): PendingEntry[] {
  const biased = makeResult();
  const uncertain = makeResult({
    result_id: "q2",
    query: {
      id: "q2",
      text: "How quickly does the medication act?",
      expertise: "clinician",
      received_at: "2026-08-22T10:20:00+00:00",
    },
    base_bias: {
      lexical_matches: [],
      sentiment_valence: 0.05,
      flagged: false,
      attributions: null,
      round: 0,
    },
    base_uncertainty: {
      sample_count: 5,
      mean_pairwise_similarity: 0.88,
      similarity_std: 0.004,
      perplexity: 12.6,
      flagged: true,
      round: 0,
    },
  });
  return [
    { ticket: makeTicket(), result: biased },
    {
      ticket: makeTicket({
        ticket_id: "q2:high_perplexity",
        result_id: "q2",
        reason: "high_perplexity",
      }),
      result: uncertain,
    },
  ];
}
