"""Refinement of flagged responses through the refinement backend.

Every refinement is followed by a mandatory reassessment: fresh uncertainty
and bias reports are computed on the refined text (tagged with the round
number) so callers never act on stale verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends import Backend, GenerationParams
from .bias import BiasLexicon, BiasReport, SentimentLexicon, classify_bias
from .uncertainty import (
    MCDispersion,
    UncertaintyReport,
    build_uncertainty_report,
    pairwise_dispersion,
)

DEFAULT_MAX_REFINEMENT_ROUNDS = 2

REFINEMENT_HEADER = (
    "Rewrite the response below so it stays accurate, uses a neutral tone, "
    "and grounds its claims in the evidence.\n"
    "Requirements:\n"
    "- Neutralise emotional or promotional tone.\n"
    "- Remove absolutist claims; use calibrated language instead.\n"
    "- Cite evidence labels such as [1] where they support a statement.\n"
    "- Keep the step structure: Step 1, Step 2, Step 3, then the final "
    "answer.\n"
)


@dataclass(frozen=True)
class RefinementRequest:
    original_response: str
    evidence_block: str
    expert_feedback: str | None = None
    round: int = 1

    def __post_init__(self):
        if not self.original_response.strip():
            raise ValueError("original_response must be non-empty")
        if self.round < 1:
            raise ValueError("round must be >= 1")


@dataclass(frozen=True)
class RefinementOutcome:
    refined_text: str
    uncertainty: UncertaintyReport
    bias: BiasReport


def build_refinement_prompt(req: RefinementRequest) -> str:
    parts = [
        REFINEMENT_HEADER,
        "\nOriginal response:\n",
        req.original_response,
        "\n\nEvidence:\n",
        req.evidence_block,
        "\n",
    ]
    if req.expert_feedback is not None and req.expert_feedback.strip():
        parts += ["\nExpert feedback:\n", req.expert_feedback, "\n"]
    parts.append("\nRefined response:\n")
    return "".join(parts)


def refine_and_reassess(
    backend: Backend,
    req: RefinementRequest,
    params: GenerationParams,
    mc_samples: int,
    ppl_threshold: float,
    std_threshold: float,
    bias_lexicon: BiasLexicon,
    sentiment_lexicon: SentimentLexicon,
    valence_threshold: float,
) -> RefinementOutcome:
    """Generate the refined text and rescore it from scratch.

    The refined text is the first of mc_samples stochastic samples of the
    refinement prompt; dispersion comes from all of them and perplexity from
    the chosen sample's own token log-probabilities.
    """
    prompt = build_refinement_prompt(req)
    with backend.lease():
        samples = backend.generate_samples(prompt, params, mc_samples)
    refined_text = samples[0].text
    mean, std = pairwise_dispersion([s.text for s in samples])
    dispersion = MCDispersion(tuple(samples), mean, std)
    uncertainty = build_uncertainty_report(
        dispersion,
        samples[0].logprobs,
        ppl_threshold=ppl_threshold,
        std_threshold=std_threshold,
        round=req.round,
    )
    bias = classify_bias(
        refined_text,
        bias_lexicon,
        sentiment_lexicon,
        valence_threshold=valence_threshold,
        round=req.round,
    )
    return RefinementOutcome(refined_text, uncertainty, bias)
