"""Chain-of-thought reasoning agent.

Builds the step-structured prompt (optionally grounded in retrieved
citations and few-shot examples), invokes the reasoning backend, parses the
step markers out of the response, and regenerates when the chain comes back
incomplete. An incomplete chain after all retries is not an error; the
verdict travels with the response so the orchestrator can escalate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

from .backends import Backend, GenerationOutput, GenerationParams
from .evidence import EvidenceBundle, format_citations

NO_EVIDENCE_SENTENCE = "No supporting PubMed articles were retrieved for this query."

STEP_BLOCK = (
    "Let's reason through the problem step by step:\n"
    "Step 1: Analyse the question and evidence\n"
    "Step 2: Identify key medical concepts\n"
    "Step 3: Form a structured response\n"
    "\n"
    "Based on the above steps, here is the final answer:\n"
)

STEP_MARKERS = ("Step 1", "Step 2", "Step 3")

_STEP_RE = re.compile(r"Step ([0-9]+):")
_ANSWER_DELIM_RE = re.compile(r"final answer:[ \t]*", re.IGNORECASE)

DEFAULT_MAX_REGENERATIONS = 2


@dataclass(frozen=True)
class FewShotExample:
    question: str
    answer: str

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ValueError("few-shot question and answer must be non-empty")


@dataclass(frozen=True)
class ParsedChain:
    """Step structure recovered from a generated response."""

    steps: tuple[tuple[int, str], ...]
    final_answer: str
    missing: str | None

    @property
    def complete(self) -> bool:
        return self.missing is None


@dataclass(frozen=True)
class ReasonedResponse:
    full_text: str
    steps: tuple[tuple[int, str], ...]
    final_answer: str
    regeneration_count: int
    chain_complete: bool
    missing_part: str | None
    prompt: str
    output: GenerationOutput


def build_cot_prompt(question: str, evidence_block: str | None = None) -> str:
    if not question.strip():
        raise ValueError("question must be non-empty")
    parts = [f"Question: {question}\n"]
    if evidence_block and evidence_block.strip():
        parts.append(f"Evidence:\n{evidence_block}\n")
    parts.append(STEP_BLOCK)
    return "".join(parts)


def inject_few_shot(prompt: str, examples: list[FewShotExample]) -> str:
    blocks = [f"Question: {e.question}\nAnswer: {e.answer}\n\n" for e in examples]
    return "".join(blocks) + prompt


def parse_reasoning(text: str) -> ParsedChain:
    matches = list(_STEP_RE.finditer(text))
    delim = None
    for delim in _ANSWER_DELIM_RE.finditer(text):
        pass  # keep the last occurrence
    # cut step text at the start of the line carrying the answer delimiter
    delim_line_start = (
        text.rfind("\n", 0, delim.start()) + 1 if delim is not None else None
    )

    # boundaries for step-text extraction: next step marker, the final-answer
    # delimiter line, or end of text
    steps: list[tuple[int, str]] = []
    for i, m in enumerate(matches):
        number = int(m.group(1))
        if number != len(steps) + 1:
            break
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        if delim_line_start is not None and m.end() <= delim_line_start < end:
            end = delim_line_start
        steps.append((number, text[m.end():end].strip()))

    missing = next((mk for mk in STEP_MARKERS if mk not in text), None)

    answer_start = None
    if delim is not None and (not matches or delim.start() >= matches[-1].end()):
        answer_start = delim.end()
    elif matches:
        newline = text.find("\n", matches[-1].end())
        if newline != -1:
            answer_start = newline + 1
    final_answer = text[answer_start:].strip() if answer_start is not None else ""

    if missing is None and not final_answer:
        missing = "final answer"
    return ParsedChain(tuple(steps), final_answer, missing)


def validate_reasoning_chain(text: str) -> ParsedChain:
    """Complete iff all three step markers appear and an answer follows them."""
    return parse_reasoning(text)


def render_evidence_block(bundle: EvidenceBundle | None) -> str:
    if bundle is None or not bundle.items:
        return NO_EVIDENCE_SENTENCE
    return format_citations(bundle)


def generate_reasoned_response(
    backend: Backend,
    question: str,
    evidence_bundle: EvidenceBundle | None,
    few_shot: list[FewShotExample],
    params: GenerationParams,
    max_regenerations: int = DEFAULT_MAX_REGENERATIONS,
) -> ReasonedResponse:
    prompt = inject_few_shot(
        build_cot_prompt(question, render_evidence_block(evidence_bundle)),
        few_shot,
    )
    attempt = 0
    with backend.lease():
        while True:
            output = backend.generate(
                prompt, replace(params, sample_index=params.sample_index + attempt)
            )
            parsed = parse_reasoning(output.text)
            if parsed.complete or attempt >= max_regenerations:
                break
            attempt += 1
    return ReasonedResponse(
        full_text=output.text,
        steps=parsed.steps,
        final_answer=parsed.final_answer,
        regeneration_count=attempt,
        chain_complete=parsed.complete,
        missing_part=parsed.missing,
        prompt=prompt,
        output=output,
    )


def load_few_shot(path: str | Path) -> list[FewShotExample]:
    """Parse "Q:"/"A:" delimited blocks; '#' lines between blocks are comments."""
    examples: list[FewShotExample] = []
    question: list[str] | None = None
    answer: list[str] | None = None

    def flush():
        nonlocal question, answer
        if question is not None and answer is not None:
            examples.append(FewShotExample(
                "\n".join(question).strip(), "\n".join(answer).strip()))
        question = None
        answer = None

    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("Q: "):
            flush()
            question = [line[3:]]
            answer = None
        elif line.startswith("A: "):
            answer = [line[3:]]
        elif answer is not None:
            answer.append(line)
        elif question is not None:
            question.append(line)
        elif line.startswith("#") or not line.strip():
            continue
    flush()
    return examples
