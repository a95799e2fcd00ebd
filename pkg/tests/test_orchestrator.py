"""Pipeline orchestration: stage flow, refinement, review, persistence."""

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import pytest

from medorc.backends import Backend, BackendDescriptor, CannedResponse
from medorc.errors import TicketStateError, TransportError
from medorc.evidence import EvidenceBundle
from medorc.orchestrator import (
    APPROVAL_SENTINEL,
    Expertise,
    Orchestrator,
    PipelineResult,
    Query,
    ResultStatus,
    ReviewQueue,
    STAGE_ORDER,
    TicketReason,
    TicketState,
    load_result,
    new_query,
    persist_result,
)
from medorc.reasoning import NO_EVIDENCE_SENTENCE
from scenarios import (
    BIASED_REFINED,
    BIASED_TEXT,
    CLEAN_REFINED,
    COMPLETE_CLEAN,
    DIVERGENT_REFINED,
    DIVERGENT_SET,
    FakeEvidenceClient,
    HIGH_PPL_CLEAN,
    INCOMPLETE_NEAR,
    make_bundle,
    make_orch,
)

UTC = timezone.utc


class FailingBackend(Backend):
    def __init__(self):
        super().__init__(BackendDescriptor("reasoning"))

    def generate(self, prompt, params):
        self._require_lease()
        raise TransportError("backend unreachable")


def stage_names(result):
    return [name for name, _ in result.stage_latencies]


def _is_subsequence(sub, full):
    pos = 0
    for name in sub:
        while pos < len(full) and full[pos] != name:
            pos += 1
        if pos == len(full):
            return False
        pos += 1
    return True


# -- query objects --------------------------------------------------------


def test_query_requires_text():
    with pytest.raises(ValueError):
        Query(id="q", text="   ")


def test_new_query_assigns_ids_and_expertise():
    a = new_query("What causes anemia?", "clinician")
    b = new_query("What causes anemia?")
    assert a.id != b.id
    assert a.expertise is Expertise.CLINICIAN
    assert b.expertise is Expertise.PATIENT
    assert a.received_at.tzinfo is not None


# -- scenario: clean pass-through -----------------------------------------


def test_clean_query_completes(tmp_path):
    orch = make_orch(tmp_path)
    result = orch.process_query(new_query("Does exercise lower blood pressure?"))
    assert result.status is ResultStatus.COMPLETED
    assert result.refinement_rounds == 0
    assert result.refined_response is None
    assert result.base_response.chain_complete
    assert result.base_uncertainty.flagged is False
    assert result.base_uncertainty.similarity_std == pytest.approx(0.0)
    assert result.base_bias.flagged is False
    assert -1.0 <= result.base_relevance <= 1.0
    assert stage_names(result) == [
        "evidence_retrieval", "generation", "uncertainty", "bias"]
    assert all(ms >= 0 for _, ms in result.stage_latencies)
    assert result.total_latency_ms > 0
    assert len(orch.queue) == 0
    assert orch.get_result(result.result_id) is result


def test_clean_result_round_trips(tmp_path):
    orch = make_orch(tmp_path)
    result = orch.process_query(new_query("Does exercise lower blood pressure?"))
    assert len(result.persisted_paths) == 1
    loaded = load_result(result.persisted_paths[0])
    assert loaded == result


# -- scenario: flagged uncertainty, one clean refinement round ------------


def test_high_perplexity_triggers_one_refinement(tmp_path):
    orch = make_orch(tmp_path, reasoning=[HIGH_PPL_CLEAN])
    result = orch.process_query(new_query("Is this drug effective?"))
    assert result.base_uncertainty.perplexity == pytest.approx(12.0, rel=1e-12)
    assert result.base_uncertainty.flagged is True
    assert result.base_bias.flagged is False
    assert result.status is ResultStatus.COMPLETED_AFTER_REFINEMENT
    assert result.refinement_rounds == 1
    assert result.refined_response == CLEAN_REFINED
    assert result.refined_uncertainty.flagged is False
    assert result.refined_uncertainty.round == 1
    assert result.refined_bias.round == 1
    assert stage_names(result) == [
        "evidence_retrieval", "generation", "uncertainty", "bias", "refinement"]
    assert len(orch.queue) == 0


# -- scenario: persistent bias escalates to review ------------------------


def test_persistent_bias_escalates(tmp_path):
    orch = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                     refinement=[BIASED_REFINED])
    result = orch.process_query(new_query("Does this cure work?"))
    assert result.base_bias.flagged is True
    matched = {m.term for m in result.base_bias.lexical_matches}
    assert "guaranteed cure" in matched
    assert result.refinement_rounds == 2
    assert result.refined_bias.flagged is True
    assert result.status is ResultStatus.PENDING_REVIEW
    tickets = orch.queue.pending()
    assert [t.reason for t in tickets] == [TicketReason.BIAS_FLAGGED]
    assert tickets[0].state is TicketState.PENDING
    assert tickets[0].ticket_id == f"{result.result_id}:bias_flagged"
    assert stage_names(result) == [
        "evidence_retrieval", "generation", "uncertainty", "bias",
        "refinement", "review"]


def test_flagged_result_round_trips(tmp_path):
    orch = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                     refinement=[BIASED_REFINED])
    result = orch.process_query(new_query("Does this cure work?"))
    loaded = load_result(result.persisted_paths[0])
    assert loaded == result
    assert loaded.refined_bias.flagged is True


def test_review_disabled_preserves_flags(tmp_path):
    orch = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                     refinement=[BIASED_REFINED], review_enabled=False)
    result = orch.process_query(new_query("Does this cure work?"))
    assert result.status is ResultStatus.COMPLETED_AFTER_REFINEMENT
    assert result.refined_bias.flagged is True
    assert len(orch.queue) == 0


def test_two_reasons_open_two_tickets(tmp_path):
    orch = make_orch(
        tmp_path,
        reasoning=[CannedResponse(BIASED_TEXT, logprob=-math.log(12.0))],
        refinement=[CannedResponse(BIASED_REFINED, logprob=-math.log(12.0))])
    result = orch.process_query(new_query("Does this cure work?"))
    assert result.status is ResultStatus.PENDING_REVIEW
    reasons = {t.reason for t in orch.queue.pending()}
    assert reasons == {TicketReason.HIGH_PERPLEXITY, TicketReason.BIAS_FLAGGED}
    assert len(orch.queue) == 2


def test_high_dispersion_ticket(tmp_path):
    orch = make_orch(tmp_path, reasoning=DIVERGENT_SET,
                     refinement=DIVERGENT_REFINED)
    result = orch.process_query(new_query("How do vaccines work?"))
    assert result.base_uncertainty.similarity_std > 0.05
    assert result.base_bias.flagged is False
    assert result.status is ResultStatus.PENDING_REVIEW
    reasons = {t.reason for t in orch.queue.pending()}
    assert reasons == {TicketReason.HIGH_DISPERSION}


# -- scenario: incomplete reasoning ---------------------------------------


def test_incomplete_reasoning_opens_ticket(tmp_path):
    orch = make_orch(tmp_path, reasoning=[INCOMPLETE_NEAR])
    result = orch.process_query(new_query("Why drink water?"))
    assert result.base_response.chain_complete is False
    assert result.base_response.missing_part == "Step 3"
    assert result.base_uncertainty.flagged is False
    assert result.refinement_rounds == 0
    assert result.status is ResultStatus.PENDING_REVIEW
    reasons = {t.reason for t in orch.queue.pending()}
    assert reasons == {TicketReason.INCOMPLETE_REASONING}
    assert "refinement" not in stage_names(result)


def test_incomplete_with_review_disabled_completes(tmp_path):
    orch = make_orch(tmp_path, reasoning=[INCOMPLETE_NEAR],
                     review_enabled=False)
    result = orch.process_query(new_query("Why drink water?"))
    assert result.status is ResultStatus.COMPLETED
    assert result.base_response.chain_complete is False
    assert len(orch.queue) == 0


def test_regeneration_recovers_then_completes(tmp_path):
    orch = make_orch(tmp_path, reasoning=[INCOMPLETE_NEAR, COMPLETE_CLEAN])
    result = orch.process_query(new_query("Why drink water?"))
    assert result.base_response.regeneration_count == 1
    assert result.base_response.chain_complete
    assert result.status is ResultStatus.COMPLETED


# -- evidence handling ----------------------------------------------------


def test_fallback_bundle_requeried_in_refinement(tmp_path):
    client = FakeEvidenceClient(
        [EvidenceBundle.empty("q"), make_bundle()])
    orch = make_orch(tmp_path, reasoning=[HIGH_PPL_CLEAN], evidence=client)
    result = orch.process_query(new_query("Is this drug effective?"))
    assert len(client.calls) == 2
    assert result.evidence.fallback_used is False
    assert NO_EVIDENCE_SENTENCE in result.base_response.prompt


def test_good_bundle_not_requeried(tmp_path):
    client = FakeEvidenceClient()
    orch = make_orch(tmp_path, reasoning=[HIGH_PPL_CLEAN], evidence=client)
    orch.process_query(new_query("Is this drug effective?"))
    assert len(client.calls) == 1


def test_requery_always_switch(tmp_path):
    client = FakeEvidenceClient([make_bundle(), make_bundle()])
    orch = make_orch(tmp_path, reasoning=[HIGH_PPL_CLEAN], evidence=client,
                     refinement_requery_always=True)
    orch.process_query(new_query("Is this drug effective?"))
    assert len(client.calls) == 2


def test_retmax_passed_through(tmp_path):
    client = FakeEvidenceClient()
    orch = make_orch(tmp_path, evidence=client, retmax=5)
    orch.process_query(new_query("How do vaccines work?"))
    assert client.calls == [("How do vaccines work?", 5)]


# -- failure path ---------------------------------------------------------


def test_backend_failure_persists_partial_record(tmp_path):
    orch = make_orch(tmp_path, reasoning=FailingBackend())
    result = orch.process_query(new_query("Will this fail?"))
    assert result.status is ResultStatus.FAILED
    assert "TransportError" in result.error
    assert result.base_response is None
    assert result.evidence is not None
    assert stage_names(result) == ["evidence_retrieval"]
    assert len(result.persisted_paths) == 1
    assert load_result(result.persisted_paths[0]) == result
    assert orch.reasoning_backend.outstanding_leases == 0


def test_no_lease_leaks_after_mixed_runs(tmp_path):
    orch = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                     refinement=[BIASED_REFINED])
    for _ in range(3):
        orch.process_query(new_query("Does this cure work?"))
    assert orch.reasoning_backend.outstanding_leases == 0
    assert orch.refinement_backend.outstanding_leases == 0


# -- persistence ----------------------------------------------------------


def test_persist_filename_shape(tmp_path):
    fixed = datetime(2025, 1, 2, 3, 4, 5, tzinfo=UTC)
    orch = make_orch(tmp_path, clock=lambda: fixed)
    query = Query(id="q1", text="Does exercise lower blood pressure?",
                  received_at=fixed)
    result = orch.process_query(query)
    expected = tmp_path / "results" / "result_20250102T030405Z_q1.json"
    assert result.persisted_paths == [str(expected)]
    assert expected.exists()


def test_persist_collision_suffix(tmp_path):
    fixed = datetime(2025, 1, 2, 3, 4, 5, tzinfo=UTC)
    orch = make_orch(tmp_path, clock=lambda: fixed)
    query = Query(id="q1", text="Does exercise lower blood pressure?",
                  received_at=fixed)
    result = orch.process_query(query)
    again = persist_result(result, tmp_path / "results", now=fixed)
    assert again.name == "result_20250102T030405Z_q1_1.json"
    third = persist_result(result, tmp_path / "results", now=fixed)
    assert third.name == "result_20250102T030405Z_q1_2.json"


def test_persisted_document_is_json_object(tmp_path):
    orch = make_orch(tmp_path)
    result = orch.process_query(new_query("Does exercise lower blood pressure?"))
    doc = json.loads(
        (tmp_path / "results").glob("*.json").__next__().read_text())
    assert doc["result_id"] == result.result_id
    assert doc["status"] == "completed"
    assert doc["query"]["text"] == "Does exercise lower blood pressure?"


def test_persist_error_recorded_not_raised(tmp_path):
    blocker = tmp_path / "results"
    blocker.write_text("a file where the directory should be")
    orch = make_orch(tmp_path)
    result = orch.process_query(new_query("Does exercise lower blood pressure?"))
    assert result.status is ResultStatus.COMPLETED
    assert result.persist_error is not None
    assert result.persisted_paths == []


# -- review queue ---------------------------------------------------------


def test_escalate_is_idempotent(tmp_path):
    orch = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                     refinement=[BIASED_REFINED])
    result = orch.process_query(new_query("Does this cure work?"))
    first = orch.queue.pending()[0]
    second = orch.escalate(result, TicketReason.BIAS_FLAGGED)
    assert second is first
    assert len(orch.queue) == 1


def test_escalate_requires_review_enabled(tmp_path):
    orch = make_orch(tmp_path, review_enabled=False)
    result = orch.process_query(new_query("Does exercise lower blood pressure?"))
    with pytest.raises(ValueError):
        orch.escalate(result, TicketReason.BIAS_FLAGGED)


def test_queue_file_is_jsonl_and_reloads(tmp_path):
    orch = make_orch(
        tmp_path,
        reasoning=[CannedResponse(BIASED_TEXT, logprob=-math.log(12.0))],
        refinement=[CannedResponse(BIASED_REFINED, logprob=-math.log(12.0))])
    orch.process_query(new_query("Does this cure work?"))
    lines = [line for line in
             (tmp_path / "results" / "review_queue.jsonl")
             .read_text().splitlines() if line]
    assert len(lines) == 2
    for line in lines:
        json.loads(line)
    reloaded = ReviewQueue(tmp_path / "results" / "review_queue.jsonl")
    assert reloaded.all_tickets() == orch.queue.all_tickets()


# -- expert feedback ------------------------------------------------------


def _escalated(tmp_path, **overrides):
    orch = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                     refinement=[BIASED_REFINED], **overrides)
    result = orch.process_query(new_query("Does this cure work?"))
    ticket = orch.queue.pending()[0]
    return orch, result, ticket


def test_feedback_still_flagged_keeps_ticket_open(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    rounds_before = result.refinement_rounds
    updated = orch.apply_expert_feedback(
        ticket.ticket_id, "Remove the absolutist wording.")
    assert updated is result
    assert ticket.state is TicketState.FEEDBACK_RECEIVED
    assert ticket.feedback == "Remove the absolutist wording."
    assert result.status is ResultStatus.PENDING_REVIEW
    assert result.refinement_rounds == rounds_before + 1
    assert len(result.persisted_paths) == 2


def test_feedback_clean_closes_and_completes(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    orch.refinement_backend.add_canned("Rewrite the response", [CLEAN_REFINED])
    orch.apply_expert_feedback(ticket.ticket_id, "Cite the evidence labels.")
    assert ticket.state is TicketState.CLOSED
    assert result.status is ResultStatus.COMPLETED_AFTER_REFINEMENT
    assert result.refined_response == CLEAN_REFINED
    assert orch.queue.pending() == []


def test_feedback_allowed_after_feedback_received(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    orch.apply_expert_feedback(ticket.ticket_id, "First try.")
    assert ticket.state is TicketState.FEEDBACK_RECEIVED
    orch.refinement_backend.add_canned("Rewrite the response", [CLEAN_REFINED])
    orch.apply_expert_feedback(ticket.ticket_id, "Second try.")
    assert ticket.state is TicketState.CLOSED


def test_feedback_on_closed_ticket_rejected(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    orch.apply_expert_feedback(ticket.ticket_id, APPROVAL_SENTINEL)
    assert ticket.state is TicketState.CLOSED
    with pytest.raises(TicketStateError):
        orch.apply_expert_feedback(ticket.ticket_id, "Too late.")


def test_feedback_unknown_ticket(tmp_path):
    orch = make_orch(tmp_path)
    with pytest.raises(KeyError):
        orch.apply_expert_feedback("nope:bias_flagged", "hello")


def test_feedback_must_be_non_empty(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    with pytest.raises(ValueError):
        orch.apply_expert_feedback(ticket.ticket_id, "   ")


def test_approval_closes_without_refinement(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    rounds_before = result.refinement_rounds
    refined_before = result.refined_response
    orch.apply_expert_feedback(ticket.ticket_id, APPROVAL_SENTINEL)
    assert ticket.state is TicketState.CLOSED
    assert ticket.feedback == APPROVAL_SENTINEL
    assert result.status is ResultStatus.COMPLETED_AFTER_REFINEMENT
    assert result.refinement_rounds == rounds_before
    assert result.refined_response == refined_before
    assert len(result.persisted_paths) == 2


def test_clean_feedback_closes_all_open_tickets(tmp_path):
    orch = make_orch(
        tmp_path,
        reasoning=[CannedResponse(BIASED_TEXT, logprob=-math.log(12.0))],
        refinement=[CannedResponse(BIASED_REFINED, logprob=-math.log(12.0))])
    result = orch.process_query(new_query("Does this cure work?"))
    tickets = orch.queue.pending()
    assert len(tickets) == 2
    orch.refinement_backend.add_canned("Rewrite the response", [CLEAN_REFINED])
    orch.apply_expert_feedback(tickets[0].ticket_id, "Soften the claims.")
    assert all(t.state is TicketState.CLOSED for t in tickets)
    assert orch.queue.pending() == []
    assert result.status is ResultStatus.COMPLETED_AFTER_REFINEMENT


def test_restart_restores_results_for_feedback(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    # a fresh orchestrator over the same directories sees the same state
    orch2 = make_orch(tmp_path, reasoning=[BIASED_TEXT],
                      refinement=[CLEAN_REFINED])
    restored = orch2.get_result(result.result_id)
    assert restored == result
    assert orch2.queue.get(ticket.ticket_id) is not None
    updated = orch2.apply_expert_feedback(ticket.ticket_id, "Soften claims.")
    assert updated.status is ResultStatus.COMPLETED_AFTER_REFINEMENT
    assert orch2.queue.get(ticket.ticket_id).state is TicketState.CLOSED


def test_feedback_repersists_updated_record(tmp_path):
    orch, result, ticket = _escalated(tmp_path)
    orch.refinement_backend.add_canned("Rewrite the response", [CLEAN_REFINED])
    orch.apply_expert_feedback(ticket.ticket_id, "Cite the evidence labels.")
    newest = result.persisted_paths[-1]
    loaded = load_result(newest)
    assert loaded == result
    assert loaded.status is ResultStatus.COMPLETED_AFTER_REFINEMENT


# -- cross-cutting invariants ---------------------------------------------


def _scenario_results(tmp_path):
    out = []
    orch_a = make_orch(tmp_path / "a")
    out.append(orch_a.process_query(new_query("Does exercise help?")))
    orch_b = make_orch(tmp_path / "b", reasoning=[HIGH_PPL_CLEAN])
    out.append(orch_b.process_query(new_query("Is this drug effective?")))
    orch_c = make_orch(tmp_path / "c", reasoning=[BIASED_TEXT],
                       refinement=[BIASED_REFINED])
    out.append(orch_c.process_query(new_query("Does this cure work?")))
    return out


def test_stage_order_invariant(tmp_path):
    for result in _scenario_results(tmp_path):
        names = stage_names(result)
        assert len(names) == len(set(names))
        assert _is_subsequence(names, list(STAGE_ORDER))


def test_status_flag_soundness(tmp_path):
    for result in _scenario_results(tmp_path):
        if result.status is ResultStatus.COMPLETED:
            assert result.refinement_rounds == 0
            assert not result.base_uncertainty.flagged
            assert not result.base_bias.flagged
        if result.refinement_rounds > 0:
            assert result.base_uncertainty.flagged or result.base_bias.flagged
        assert result.refinement_rounds <= 2


def test_concurrent_queries_complete(tmp_path):
    orch = make_orch(tmp_path)
    queries = [new_query(f"Question number {i}?") for i in range(6)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(orch.process_query, queries))
    assert all(r.status is ResultStatus.COMPLETED for r in results)
    assert len(orch.results) == 6
    assert orch.reasoning_backend.outstanding_leases == 0
    assert len(list((tmp_path / "results").glob("result_*.json"))) == 6
