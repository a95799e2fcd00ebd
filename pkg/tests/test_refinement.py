"""Refinement tests: prompt template, reassessment freshness, flag outcomes."""

import math
from pathlib import Path

import pytest

from medorc.backends import BackendDescriptor, GenerationParams, MockBackend
from medorc.bias import load_bias_lexicon, load_sentiment_lexicon
from medorc.refinement import (
    RefinementRequest,
    build_refinement_prompt,
    refine_and_reassess,
)

GOLDEN = Path(__file__).parent / "golden"

CLEAN_REFINED = (
    "Step 1: The question concerns treatment response.\n"
    "Step 2: Key concepts are evidence quality and individual variation.\n"
    "Step 3: A measured summary of the evidence follows.\n"
    "\n"
    "Current evidence [1] suggests the treatment helps many patients, "
    "though responses vary and follow-up is advised."
)

BIASED_REFINED = (
    "Step 1: The question concerns treatment response.\n"
    "Step 2: Key concepts are effect size and durability.\n"
    "Step 3: A summary follows.\n"
    "\n"
    "This is a guaranteed cure and it always works."
)


def lexicons():
    return load_bias_lexicon(), load_sentiment_lexicon()


def refine(backend, req):
    bias_lex, sent_lex = lexicons()
    return refine_and_reassess(
        backend,
        req,
        params=GenerationParams(temperature=0.7, seed=7),
        mc_samples=3,
        ppl_threshold=10.0,
        std_threshold=0.05,
        bias_lexicon=bias_lex,
        sentiment_lexicon=sent_lex,
        valence_threshold=0.30,
    )


# ---- prompt template ----


def test_refinement_prompt_matches_golden():
    req = RefinementRequest(
        original_response="This treatment always works.",
        evidence_block="[1] PMID: 111 (https://pubmed.ncbi.nlm.nih.gov/111/)",
        expert_feedback="cite guidelines",
    )
    expected = (GOLDEN / "refinement_prompt.txt").read_text()
    assert build_refinement_prompt(req) == expected


def test_prompt_without_feedback_lacks_section():
    req = RefinementRequest(
        original_response="Original.", evidence_block="[1] PMID: 1")
    prompt = build_refinement_prompt(req)
    assert "Expert feedback:" not in prompt
    assert "Original response:\nOriginal.\n" in prompt


def test_prompt_feedback_verbatim():
    req = RefinementRequest(
        original_response="Original.",
        evidence_block="none",
        expert_feedback="cite guidelines",
    )
    assert "\nExpert feedback:\ncite guidelines\n" in build_refinement_prompt(req)


def test_prompt_contains_instruction_lines():
    req = RefinementRequest(original_response="X", evidence_block="Y")
    prompt = build_refinement_prompt(req)
    assert "Neutralise emotional or promotional tone." in prompt
    assert "Remove absolutist claims" in prompt
    assert "Cite evidence labels" in prompt


def test_request_validation():
    with pytest.raises(ValueError):
        RefinementRequest(original_response="  ", evidence_block="e")
    with pytest.raises(ValueError):
        RefinementRequest(original_response="x", evidence_block="e", round=0)


# ---- refinement with reassessment ----


def refinement_backend(texts):
    return MockBackend(
        BackendDescriptor("refiner", "mock", 2),
        canned={"Rewrite the response": texts},
    )


def test_clean_refined_text_unflagged():
    backend = refinement_backend([CLEAN_REFINED])
    req = RefinementRequest(
        original_response="This treatment always works.",
        evidence_block="[1] PMID: 111",
    )
    outcome = refine(backend, req)
    assert outcome.refined_text == CLEAN_REFINED
    assert outcome.bias.flagged is False
    assert outcome.uncertainty.flagged is False


def test_persistent_bias_in_refined_text_flagged():
    backend = refinement_backend([BIASED_REFINED])
    req = RefinementRequest(
        original_response="This treatment always works.",
        evidence_block="[1] PMID: 111",
    )
    outcome = refine(backend, req)
    assert outcome.bias.flagged is True
    assert any(m.term == "guaranteed cure" for m in outcome.bias.lexical_matches)


def test_reports_carry_round_tag():
    backend = refinement_backend([CLEAN_REFINED])
    req = RefinementRequest(
        original_response="Original.", evidence_block="e", round=2)
    outcome = refine(backend, req)
    assert outcome.uncertainty.round == 2
    assert outcome.bias.round == 2


def test_reassessment_is_fresh_per_round():
    backend = refinement_backend([CLEAN_REFINED])
    first = refine(backend, RefinementRequest(
        original_response="Original.", evidence_block="e", round=1))
    second = refine(backend, RefinementRequest(
        original_response="Original.", evidence_block="e", round=2))
    assert first.uncertainty.round == 1
    assert second.uncertainty.round == 2


def test_refinement_releases_lease():
    backend = refinement_backend([CLEAN_REFINED])
    refine(backend, RefinementRequest(
        original_response="Original.", evidence_block="e"))
    assert backend.outstanding_leases == 0


def test_perplexity_comes_from_chosen_sample():
    from medorc.backends import CannedResponse

    lp = math.log(0.5)
    backend = MockBackend(
        BackendDescriptor("refiner", "mock", 2),
        canned={"Rewrite the response": [
            CannedResponse(CLEAN_REFINED, logprob=lp)]},
    )
    outcome = refine(backend, RefinementRequest(
        original_response="Original.", evidence_block="e"))
    assert abs(outcome.uncertainty.perplexity - 2.0) < 1e-9
