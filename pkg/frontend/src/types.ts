// Wire types for the gateway v1 API. Field names match the JSON the
// server emits, which is also the persisted result record format.

export type TicketReason =
  | "high_perplexity"
  | "high_dispersion"
  | "bias_flagged"
  | "incomplete_reasoning";

export type TicketState = "pending" | "feedback_received" | "closed";

export interface Ticket {
  ticket_id: string;
  result_id: string;
  reason: TicketReason;
  created_at: string;
  state: TicketState;
  feedback: string | null;
}

export interface EvidenceItem {
  pmid: string;
  rank: number;
}

export interface EvidenceBundle {
  query_text: string;
  items: EvidenceItem[];
  fallback_used: boolean;
}

export interface GenerationOutput {
  text: string;
  token_logprobs: [string, number][];
}

export interface ReasonedResponse {
  full_text: string;
  steps: [number, string][];
  final_answer: string;
  regeneration_count: number;
  chain_complete: boolean;
  missing_part: string | null;
  prompt: string;
  output: GenerationOutput;
}

export interface UncertaintyReport {
  sample_count: number;
  mean_pairwise_similarity: number;
  similarity_std: number;
  perplexity: number;
  flagged: boolean;
  round: number;
}

export type BiasCategory =
  | "absolutist"
  | "stigmatizing"
  | "alarmist"
  | "overpromising";

export interface LexicalMatch {
  term: string;
  category: BiasCategory;
  // byte offset of the match start in the UTF-8 encoding of the
  // scanned text, not a JS string index
  offset: number;
}

export interface BiasReport {
  lexical_matches: LexicalMatch[];
  sentiment_valence: number;
  flagged: boolean;
  attributions: [string, number][] | null;
  round: number;
}

export interface QueryRecord {
  id: string;
  text: string;
  expertise: "patient" | "clinician";
  received_at: string;
}

export type ResultStatus =
  | "completed"
  | "completed_after_refinement"
  | "pending_review"
  | "failed";

export interface ResultRecord {
  result_id: string;
  query: QueryRecord;
  status: ResultStatus;
  created_at: string;
  evidence: EvidenceBundle | null;
  base_response: ReasonedResponse | null;
  base_uncertainty: UncertaintyReport | null;
  base_bias: BiasReport | null;
  base_relevance: number | null;
  refined_response: string | null;
  refined_uncertainty: UncertaintyReport | null;
  refined_bias: BiasReport | null;
  refinement_rounds: number;
  stage_latencies: [string, number][];
  total_latency_ms: number;
  error: string | null;
}

export interface PendingEntry {
  ticket: Ticket;
  result: ResultRecord;
}

export interface FeedbackResponse {
  ticket_id: string;
  state: TicketState;
  result: ResultRecord;
}
