"""Query pipeline: retrieval, reasoning, assessment, refinement, review.

A query moves through fixed stages. Evidence retrieval never fails
(an unreachable PubMed degrades to an empty bundle). Generation produces
a step-structured response; uncertainty and bias assessments follow and
decide whether the refinement loop runs. Responses that remain flagged
after refinement are escalated to the human review queue when review is
enabled. Every result is persisted as pretty-printed JSON.

Stage latencies cover each executed stage exactly once; the persist step
itself is not a timed stage because the record is frozen before writing.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .backends import Backend, GenerationOutput, BackendDescriptor, build_backend
from .bias import (
    BiasCategory,
    BiasReport,
    LexicalMatch,
    classify_bias,
    load_bias_lexicon,
    load_sentiment_lexicon,
)
from .config import PipelineConfig
from .errors import MedorcError, PersistenceError, TicketStateError
from .evidence import EvidenceBundle, EvidenceItem, PubMedClient
from .reasoning import (
    ReasonedResponse,
    generate_reasoned_response,
    load_few_shot,
    render_evidence_block,
)
from .refinement import RefinementRequest, refine_and_reassess
from .uncertainty import (
    UncertaintyReport,
    build_uncertainty_report,
    mc_uncertainty,
    relevance,
)

log = logging.getLogger(__name__)

# canonical stage names, in execution order
STAGE_ORDER = (
    "evidence_retrieval",
    "generation",
    "uncertainty",
    "bias",
    "refinement",
    "review",
)


class Expertise(str, Enum):
    PATIENT = "patient"
    CLINICIAN = "clinician"


class ResultStatus(str, Enum):
    COMPLETED = "completed"
    COMPLETED_AFTER_REFINEMENT = "completed_after_refinement"
    PENDING_REVIEW = "pending_review"
    FAILED = "failed"


class TicketReason(str, Enum):
    HIGH_PERPLEXITY = "high_perplexity"
    HIGH_DISPERSION = "high_dispersion"
    BIAS_FLAGGED = "bias_flagged"
    INCOMPLETE_REASONING = "incomplete_reasoning"


class TicketState(str, Enum):
    PENDING = "pending"
    FEEDBACK_RECEIVED = "feedback_received"
    CLOSED = "closed"


# Expert approval sentinel: feedback consisting of exactly this string
# closes the ticket without another refinement pass.
APPROVAL_SENTINEL = "APPROVED"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    expertise: Expertise = Expertise.PATIENT
    received_at: datetime = field(
        default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        if not self.id:
            raise ValueError("query id must be non-empty")
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


def new_query(text: str, expertise: Expertise | str = Expertise.PATIENT,
              now: datetime | None = None) -> Query:
    kwargs = {}
    if now is not None:
        kwargs["received_at"] = now
    return Query(
        id=uuid.uuid4().hex[:12],
        text=text,
        expertise=Expertise(expertise),
        **kwargs,
    )


@dataclass
class ReviewTicket:
    ticket_id: str
    result_id: str
    reason: TicketReason
    created_at: datetime
    state: TicketState = TicketState.PENDING
    feedback: str | None = None

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "result_id": self.result_id,
            "reason": self.reason.value,
            "created_at": self.created_at.isoformat(),
            "state": self.state.value,
            "feedback": self.feedback,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReviewTicket":
        return cls(
            ticket_id=doc["ticket_id"],
            result_id=doc["result_id"],
            reason=TicketReason(doc["reason"]),
            created_at=datetime.fromisoformat(doc["created_at"]),
            state=TicketState(doc["state"]),
            feedback=doc.get("feedback"),
        )


@dataclass
class PipelineResult:
    query: Query
    status: ResultStatus
    created_at: datetime
    evidence: EvidenceBundle | None = None
    base_response: ReasonedResponse | None = None
    base_uncertainty: UncertaintyReport | None = None
    base_bias: BiasReport | None = None
    base_relevance: float | None = None
    refined_response: str | None = None
    refined_uncertainty: UncertaintyReport | None = None
    refined_bias: BiasReport | None = None
    refinement_rounds: int = 0
    stage_latencies: list = field(default_factory=list)
    total_latency_ms: float = 0.0
    error: str | None = None
    persist_error: str | None = field(default=None, compare=False)
    persisted_paths: list = field(default_factory=list, compare=False)

    @property
    def result_id(self) -> str:
        return self.query.id

    def final_text(self) -> str | None:
        if self.refined_response is not None:
            return self.refined_response
        if self.base_response is not None:
            return self.base_response.full_text
        return None

    def to_dict(self) -> dict:
        return {
            "result_id": self.result_id,
            "query": {
                "id": self.query.id,
                "text": self.query.text,
                "expertise": self.query.expertise.value,
                "received_at": self.query.received_at.isoformat(),
            },
            "status": self.status.value,
            "created_at": self.created_at.isoformat(),
            "evidence": _evidence_to_dict(self.evidence),
            "base_response": _response_to_dict(self.base_response),
            "base_uncertainty": _uncertainty_to_dict(self.base_uncertainty),
            "base_bias": _bias_to_dict(self.base_bias),
            "base_relevance": self.base_relevance,
            "refined_response": self.refined_response,
            "refined_uncertainty": _uncertainty_to_dict(self.refined_uncertainty),
            "refined_bias": _bias_to_dict(self.refined_bias),
            "refinement_rounds": self.refinement_rounds,
            "stage_latencies": [[name, ms] for name, ms in self.stage_latencies],
            "total_latency_ms": self.total_latency_ms,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineResult":
        q = doc["query"]
        return cls(
            query=Query(
                id=q["id"],
                text=q["text"],
                expertise=Expertise(q["expertise"]),
                received_at=datetime.fromisoformat(q["received_at"]),
            ),
            status=ResultStatus(doc["status"]),
            created_at=datetime.fromisoformat(doc["created_at"]),
            evidence=_evidence_from_dict(doc["evidence"]),
            base_response=_response_from_dict(doc["base_response"]),
            base_uncertainty=_uncertainty_from_dict(doc["base_uncertainty"]),
            base_bias=_bias_from_dict(doc["base_bias"]),
            base_relevance=doc["base_relevance"],
            refined_response=doc["refined_response"],
            refined_uncertainty=_uncertainty_from_dict(doc["refined_uncertainty"]),
            refined_bias=_bias_from_dict(doc["refined_bias"]),
            refinement_rounds=doc["refinement_rounds"],
            stage_latencies=[
                (name, ms) for name, ms in doc["stage_latencies"]],
            total_latency_ms=doc["total_latency_ms"],
            error=doc.get("error"),
        )


def _evidence_to_dict(bundle: EvidenceBundle | None) -> dict | None:
    if bundle is None:
        return None
    return {
        "query_text": bundle.query_text,
        "items": [{"pmid": item.pmid, "rank": item.rank}
                  for item in bundle.items],
        "fallback_used": bundle.fallback_used,
    }


def _evidence_from_dict(doc: dict | None) -> EvidenceBundle | None:
    if doc is None:
        return None
    return EvidenceBundle(
        query_text=doc["query_text"],
        items=tuple(EvidenceItem(pmid=i["pmid"], rank=i["rank"])
                    for i in doc["items"]),
        fallback_used=doc["fallback_used"],
    )


def _response_to_dict(resp: ReasonedResponse | None) -> dict | None:
    if resp is None:
        return None
    return {
        "full_text": resp.full_text,
        "steps": [[n, text] for n, text in resp.steps],
        "final_answer": resp.final_answer,
        "regeneration_count": resp.regeneration_count,
        "chain_complete": resp.chain_complete,
        "missing_part": resp.missing_part,
        "prompt": resp.prompt,
        "output": {
            "text": resp.output.text,
            "token_logprobs": [[tok, lp]
                               for tok, lp in resp.output.token_logprobs],
        },
    }


def _response_from_dict(doc: dict | None) -> ReasonedResponse | None:
    if doc is None:
        return None
    return ReasonedResponse(
        full_text=doc["full_text"],
        steps=tuple((n, text) for n, text in doc["steps"]),
        final_answer=doc["final_answer"],
        regeneration_count=doc["regeneration_count"],
        chain_complete=doc["chain_complete"],
        missing_part=doc["missing_part"],
        prompt=doc["prompt"],
        output=GenerationOutput(
            text=doc["output"]["text"],
            token_logprobs=tuple(
                (tok, lp) for tok, lp in doc["output"]["token_logprobs"]),
        ),
    )


def _uncertainty_to_dict(report: UncertaintyReport | None) -> dict | None:
    if report is None:
        return None
    return {
        "sample_count": report.sample_count,
        "mean_pairwise_similarity": report.mean_pairwise_similarity,
        "similarity_std": report.similarity_std,
        "perplexity": report.perplexity,
        "flagged": report.flagged,
        "round": report.round,
    }


def _uncertainty_from_dict(doc: dict | None) -> UncertaintyReport | None:
    if doc is None:
        return None
    return UncertaintyReport(
        sample_count=doc["sample_count"],
        mean_pairwise_similarity=doc["mean_pairwise_similarity"],
        similarity_std=doc["similarity_std"],
        perplexity=doc["perplexity"],
        flagged=doc["flagged"],
        round=doc["round"],
    )


def _bias_to_dict(report: BiasReport | None) -> dict | None:
    if report is None:
        return None
    return {
        "lexical_matches": [
            {"term": m.term, "category": m.category.value, "offset": m.offset}
            for m in report.lexical_matches
        ],
        "sentiment_valence": report.sentiment_valence,
        "flagged": report.flagged,
        "attributions": (
            None if report.attributions is None
            else [[tok, weight] for tok, weight in report.attributions]
        ),
        "round": report.round,
    }


def _bias_from_dict(doc: dict | None) -> BiasReport | None:
    if doc is None:
        return None
    return BiasReport(
        lexical_matches=tuple(
            LexicalMatch(term=m["term"], category=BiasCategory(m["category"]),
                         offset=m["offset"])
            for m in doc["lexical_matches"]
        ),
        sentiment_valence=doc["sentiment_valence"],
        flagged=doc["flagged"],
        attributions=(
            None if doc["attributions"] is None
            else tuple((tok, weight) for tok, weight in doc["attributions"])
        ),
        round=doc["round"],
    )


def persist_result(result: PipelineResult, results_dir: str | Path,
                   now: datetime | None = None) -> Path:
    """Write the result as JSON under a timestamped, collision-safe name."""
    if now is None:
        now = datetime.now(timezone.utc)
    directory = Path(results_dir)
    stamp = now.astimezone(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    stem = f"result_{stamp}_{result.result_id}"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{stem}.json"
        suffix = 0
        while path.exists():
            suffix += 1
            path = directory / f"{stem}_{suffix}.json"
        payload = json.dumps(result.to_dict(), indent=2, ensure_ascii=False)
        path.write_text(payload + "\n", encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"could not persist result: {exc}") from exc
    return path


def load_result(path: str | Path) -> PipelineResult:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise PersistenceError(f"could not load result: {exc}") from exc
    return PipelineResult.from_dict(doc)


class ReviewQueue:
    """Ticket store persisted as one JSON object per line.

    The whole file is rewritten on every change; tickets stay in
    insertion order. All mutation goes through the owning orchestrator's
    lock, so the queue itself only guards its own file writes.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._tickets: dict[str, ReviewTicket] = {}
        self._io_lock = threading.Lock()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                ticket = ReviewTicket.from_dict(json.loads(line))
                self._tickets[ticket.ticket_id] = ticket

    def __len__(self) -> int:
        return len(self._tickets)

    def get(self, ticket_id: str) -> ReviewTicket | None:
        return self._tickets.get(ticket_id)

    def add(self, ticket: ReviewTicket):
        self._tickets[ticket.ticket_id] = ticket
        self.save()

    def all_tickets(self) -> list[ReviewTicket]:
        return list(self._tickets.values())

    def pending(self) -> list[ReviewTicket]:
        return [t for t in self._tickets.values()
                if t.state is not TicketState.CLOSED]

    def for_result(self, result_id: str) -> list[ReviewTicket]:
        return [t for t in self._tickets.values()
                if t.result_id == result_id]

    def save(self):
        lines = [json.dumps(t.to_dict(), ensure_ascii=False)
                 for t in self._tickets.values()]
        with self._io_lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(
                "".join(line + "\n" for line in lines), encoding="utf-8")


class _StageTimer:
    def __init__(self, result: PipelineResult):
        self.result = result
        self.started = time.perf_counter()

    def record(self, stage: str, t0: float):
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        self.result.stage_latencies.append((stage, elapsed_ms))

    def finish(self):
        self.result.total_latency_ms = (
            time.perf_counter() - self.started) * 1000.0


class Orchestrator:
    """Owns the backends, the results registry, and the review queue."""

    def __init__(self, config: PipelineConfig,
                 reasoning_backend: Backend | None = None,
                 refinement_backend: Backend | None = None,
                 evidence_client: PubMedClient | None = None,
                 clock=None):
        self.config = config
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.reasoning_backend = reasoning_backend or build_backend(
            _descriptor(config.reasoning_backend))
        self.refinement_backend = refinement_backend or build_backend(
            _descriptor(config.refinement_backend))
        self.evidence_client = evidence_client or PubMedClient(
            base_url=config.esearch_base_url)
        self.bias_lexicon = load_bias_lexicon(config.bias_lexicon_path)
        self.sentiment_lexicon = load_sentiment_lexicon(
            config.sentiment_lexicon_path)
        self.few_shot = load_few_shot(config.fewshot_path)
        self.results: dict[str, PipelineResult] = {}
        self.queue = ReviewQueue(config.queue_path)
        self._lock = threading.RLock()
        self._restore_results()

    def _restore_results(self):
        """Reload persisted results so review flows survive restarts.

        Lexicographic filename order puts the newest snapshot of each
        result last, so later loads win.
        """
        directory = Path(self.config.results_dir)
        if not directory.is_dir():
            return
        for path in sorted(directory.glob("result_*.json")):
            try:
                result = load_result(path)
            except PersistenceError:
                log.warning("skipping unreadable result file %s", path)
                continue
            result.persisted_paths.append(str(path))
            self.results[result.result_id] = result

    # -- pipeline ---------------------------------------------------------

    def process_query(self, query: Query) -> PipelineResult:
        cfg = self.config
        result = PipelineResult(
            query=query,
            status=ResultStatus.FAILED,
            created_at=self.clock(),
        )
        with self._lock:
            self.results[query.id] = result
        timer = _StageTimer(result)
        params = cfg.generation_params()
        try:
            t0 = time.perf_counter()
            bundle = self.evidence_client.search(query.text, retmax=cfg.retmax)
            result.evidence = bundle
            timer.record("evidence_retrieval", t0)

            t0 = time.perf_counter()
            base = generate_reasoned_response(
                self.reasoning_backend, query.text, bundle,
                few_shot=self.few_shot, params=params,
                max_regenerations=cfg.max_regenerations)
            result.base_response = base
            timer.record("generation", t0)

            t0 = time.perf_counter()
            dispersion = mc_uncertainty(
                self.reasoning_backend, base.prompt, cfg.mc_samples, params)
            result.base_uncertainty = build_uncertainty_report(
                dispersion, base.output.logprobs,
                ppl_threshold=cfg.ppl_threshold,
                std_threshold=cfg.similarity_std_threshold)
            result.base_relevance = relevance(query.text, base.full_text)
            timer.record("uncertainty", t0)

            t0 = time.perf_counter()
            result.base_bias = classify_bias(
                base.full_text, self.bias_lexicon, self.sentiment_lexicon,
                valence_threshold=cfg.valence_threshold)
            timer.record("bias", t0)

            self._run_refinement_loop(result, params, timer)
            self._run_review_stage(result, timer)
        except MedorcError as exc:
            result.status = ResultStatus.FAILED
            result.error = f"{type(exc).__name__}: {exc}"
            log.warning("pipeline failed for %s: %s", query.id, result.error)
        timer.finish()
        self._persist(result)
        return result

    def _run_refinement_loop(self, result: PipelineResult, params, timer):
        cfg = self.config
        unc = result.base_uncertainty
        bias = result.base_bias
        current_text = result.base_response.full_text
        rounds = 0
        t0 = time.perf_counter()
        while (unc.flagged or bias.flagged) and rounds < cfg.max_refinement_rounds:
            rounds += 1
            if rounds == 1 and (result.evidence.fallback_used
                                or cfg.refinement_requery_always):
                fresh = self.evidence_client.search(
                    result.query.text, retmax=cfg.retmax)
                if not fresh.fallback_used:
                    result.evidence = fresh
            request = RefinementRequest(
                original_response=current_text,
                evidence_block=render_evidence_block(result.evidence),
                expert_feedback=None,
                round=rounds,
            )
            outcome = refine_and_reassess(
                self.refinement_backend, request, params,
                mc_samples=cfg.mc_samples,
                ppl_threshold=cfg.ppl_threshold,
                std_threshold=cfg.similarity_std_threshold,
                bias_lexicon=self.bias_lexicon,
                sentiment_lexicon=self.sentiment_lexicon,
                valence_threshold=cfg.valence_threshold)
            current_text = outcome.refined_text
            unc = outcome.uncertainty
            bias = outcome.bias
            result.refined_response = current_text
            result.refined_uncertainty = unc
            result.refined_bias = bias
            result.refinement_rounds = rounds
        if rounds > 0:
            timer.record("refinement", t0)

    def _final_reports(self, result: PipelineResult):
        unc = result.refined_uncertainty or result.base_uncertainty
        bias = result.refined_bias or result.base_bias
        return unc, bias

    def _escalation_reasons(self, result: PipelineResult) -> list[TicketReason]:
        cfg = self.config
        unc, bias = self._final_reports(result)
        reasons = []
        if unc.perplexity > cfg.ppl_threshold:
            reasons.append(TicketReason.HIGH_PERPLEXITY)
        if unc.similarity_std > cfg.similarity_std_threshold:
            reasons.append(TicketReason.HIGH_DISPERSION)
        if bias.flagged:
            reasons.append(TicketReason.BIAS_FLAGGED)
        if not result.base_response.chain_complete:
            reasons.append(TicketReason.INCOMPLETE_REASONING)
        return reasons

    def _run_review_stage(self, result: PipelineResult, timer):
        unc, bias = self._final_reports(result)
        still_flagged = unc.flagged or bias.flagged
        reasons = self._escalation_reasons(result)
        if result.refinement_rounds > 0:
            result.status = ResultStatus.COMPLETED_AFTER_REFINEMENT
        else:
            result.status = ResultStatus.COMPLETED
        if reasons and self.config.review_enabled:
            t0 = time.perf_counter()
            if still_flagged and result.refinement_rounds > 0:
                log.warning(
                    "response for %s still flagged after refinement; "
                    "escalating to expert review", result.result_id)
            for reason in reasons:
                self.escalate(result, reason)
            timer.record("review", t0)

    # -- review -----------------------------------------------------------

    def escalate(self, result: PipelineResult,
                 reason: TicketReason) -> ReviewTicket:
        """Open a review ticket; idempotent per (result, reason)."""
        if not self.config.review_enabled:
            raise ValueError("review is disabled in this configuration")
        with self._lock:
            ticket_id = f"{result.result_id}:{reason.value}"
            existing = self.queue.get(ticket_id)
            if existing is not None:
                return existing
            ticket = ReviewTicket(
                ticket_id=ticket_id,
                result_id=result.result_id,
                reason=reason,
                created_at=self.clock(),
            )
            self.queue.add(ticket)
            result.status = ResultStatus.PENDING_REVIEW
            return ticket

    def apply_expert_feedback(self, ticket_id: str,
                              feedback: str) -> PipelineResult:
        """Feed expert guidance back through refinement, or approve as-is.

        Raises TicketStateError for closed tickets and KeyError for
        unknown ticket ids.
        """
        if not feedback.strip():
            raise ValueError("feedback must be non-empty")
        with self._lock:
            ticket = self.queue.get(ticket_id)
            if ticket is None:
                raise KeyError(f"no such ticket: {ticket_id}")
            if ticket.state is TicketState.CLOSED:
                raise TicketStateError(
                    f"ticket {ticket_id} is closed and cannot take feedback")
            result = self.results.get(ticket.result_id)
            if result is None:
                raise KeyError(f"no such result: {ticket.result_id}")
            ticket.feedback = feedback

            if feedback == APPROVAL_SENTINEL:
                self._close_result_tickets(result)
                result.status = ResultStatus.COMPLETED_AFTER_REFINEMENT
                self.queue.save()
                self._persist(result)
                return result

            request = RefinementRequest(
                original_response=result.final_text(),
                evidence_block=render_evidence_block(result.evidence),
                expert_feedback=feedback,
                round=result.refinement_rounds + 1,
            )
            cfg = self.config
            outcome = refine_and_reassess(
                self.refinement_backend, request, cfg.generation_params(),
                mc_samples=cfg.mc_samples,
                ppl_threshold=cfg.ppl_threshold,
                std_threshold=cfg.similarity_std_threshold,
                bias_lexicon=self.bias_lexicon,
                sentiment_lexicon=self.sentiment_lexicon,
                valence_threshold=cfg.valence_threshold)
            result.refined_response = outcome.refined_text
            result.refined_uncertainty = outcome.uncertainty
            result.refined_bias = outcome.bias
            result.refinement_rounds += 1
            if outcome.uncertainty.flagged or outcome.bias.flagged:
                ticket.state = TicketState.FEEDBACK_RECEIVED
            else:
                self._close_result_tickets(result)
                result.status = ResultStatus.COMPLETED_AFTER_REFINEMENT
            self.queue.save()
            self._persist(result)
            return result

    def _close_result_tickets(self, result: PipelineResult):
        for ticket in self.queue.for_result(result.result_id):
            if ticket.state is not TicketState.CLOSED:
                ticket.state = TicketState.CLOSED

    # -- lookup and persistence -------------------------------------------

    def get_result(self, result_id: str) -> PipelineResult | None:
        with self._lock:
            return self.results.get(result_id)

    def pending_reviews(self) -> list[tuple[ReviewTicket, PipelineResult]]:
        with self._lock:
            out = []
            for ticket in self.queue.pending():
                result = self.results.get(ticket.result_id)
                if result is not None:
                    out.append((ticket, result))
            return out

    def _persist(self, result: PipelineResult):
        try:
            path = persist_result(result, self.config.results_dir,
                                  now=self.clock())
            result.persisted_paths.append(str(path))
            result.persist_error = None
        except PersistenceError as exc:
            result.persist_error = str(exc)
            log.error("persist failed for %s: %s", result.result_id, exc)


def _descriptor(backend_config) -> BackendDescriptor:
    return BackendDescriptor(
        name=backend_config.name,
        endpoint=backend_config.endpoint,
        capacity=backend_config.capacity,
    )
