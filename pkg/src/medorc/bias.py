"""Lexical and sentiment bias detection.

The lexical pass flags responses containing terms from a curated lexicon
(absolutist, stigmatizing, alarmist, overpromising); the sentiment pass
scores tone against a valence lexicon and flags text outside a neutral
band. Both lexicons live in data files so reviewers can audit and swap
them without touching code.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from . import data as _data

_WORD_RE = re.compile(r"[a-zA-Z0-9]+")

DEFAULT_VALENCE_THRESHOLD = 0.30

DEFAULT_BIAS_LEXICON_PATH = Path(_data.__file__).parent / "bias_lexicon.tsv"
DEFAULT_SENTIMENT_LEXICON_PATH = Path(_data.__file__).parent / "sentiment_lexicon.tsv"


class BiasCategory(Enum):
    ABSOLUTIST = "absolutist"
    STIGMATIZING = "stigmatizing"
    ALARMIST = "alarmist"
    OVERPROMISING = "overpromising"


@dataclass(frozen=True)
class BiasLexicon:
    """term -> category; terms lowercase, multi-word terms space-separated."""

    entries: dict[str, BiasCategory]

    def __post_init__(self):
        for term in self.entries:
            if not term or term != term.lower():
                raise ValueError(f"lexicon term must be non-empty lowercase: {term!r}")


@dataclass(frozen=True)
class SentimentLexicon:
    """term -> valence in [-1, 1]; single-word terms (matching is token-level)."""

    entries: dict[str, float]

    def __post_init__(self):
        for term, valence in self.entries.items():
            if not term or term != term.lower():
                raise ValueError(f"lexicon term must be non-empty lowercase: {term!r}")
            if not -1.0 <= valence <= 1.0:
                raise ValueError(f"valence out of range for {term!r}: {valence}")


@dataclass(frozen=True)
class LexicalMatch:
    term: str
    category: BiasCategory
    offset: int  # byte offset of the match start in the UTF-8 encoding


@dataclass(frozen=True)
class BiasReport:
    lexical_matches: tuple[LexicalMatch, ...]
    sentiment_valence: float
    flagged: bool
    attributions: tuple[tuple[str, float], ...] | None = None
    round: int = 0


def load_bias_lexicon(path: str | Path = DEFAULT_BIAS_LEXICON_PATH) -> BiasLexicon:
    entries: dict[str, BiasCategory] = {}
    for term, value in _read_tsv(path):
        if term in entries:
            raise ValueError(f"duplicate lexicon term {term!r}")
        entries[term] = BiasCategory(value)
    return BiasLexicon(entries)


def load_sentiment_lexicon(
    path: str | Path = DEFAULT_SENTIMENT_LEXICON_PATH,
) -> SentimentLexicon:
    entries: dict[str, float] = {}
    for term, value in _read_tsv(path):
        if term in entries:
            raise ValueError(f"duplicate lexicon term {term!r}")
        entries[term] = float(value)
    return SentimentLexicon(entries)


def _read_tsv(path: str | Path):
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'term<TAB>value'")
        yield parts[0].strip().lower(), parts[1].strip()


def _tokens_with_spans(text: str) -> list[tuple[str, int, int]]:
    return [
        (m.group(0).lower(), m.start(), m.end())
        for m in _WORD_RE.finditer(text)
    ]


def lexical_scan(text: str, lexicon: BiasLexicon) -> list[LexicalMatch]:
    """Whole-word, case-insensitive scan; multi-word terms match contiguous
    token runs. Offsets are byte offsets into the UTF-8 text, ascending."""
    tokens = _tokens_with_spans(text)
    token_words = [t[0] for t in tokens]
    matches: list[LexicalMatch] = []
    for term, category in lexicon.entries.items():
        words = term.split()
        span = len(words)
        for i in range(len(tokens) - span + 1):
            if token_words[i:i + span] == words:
                char_start = tokens[i][1]
                byte_offset = len(text[:char_start].encode("utf-8"))
                matches.append(LexicalMatch(term, category, byte_offset))
    matches.sort(key=lambda m: (m.offset, m.term))
    return matches


def sentiment_score(text: str, lexicon: SentimentLexicon) -> float:
    """Sum of matched token valences over total token count, clamped."""
    tokens = [t[0] for t in _tokens_with_spans(text)]
    if not tokens:
        return 0.0
    total = sum(lexicon.entries.get(tok, 0.0) for tok in tokens)
    score = total / len(tokens)
    return max(-1.0, min(1.0, score))


def bias_scorer(bias_lexicon: BiasLexicon, sentiment_lexicon: SentimentLexicon):
    """Scalar bias intensity for attribution: lexical hits plus absolute
    unnormalized sentiment mass."""

    def score(text: str) -> float:
        hits = len(lexical_scan(text, bias_lexicon))
        tokens = [t[0] for t in _tokens_with_spans(text)]
        mass = sum(sentiment_lexicon.entries.get(tok, 0.0) for tok in tokens)
        return hits + abs(mass)

    return score


def classify_bias(
    text: str,
    bias_lexicon: BiasLexicon,
    sentiment_lexicon: SentimentLexicon,
    valence_threshold: float = DEFAULT_VALENCE_THRESHOLD,
    include_attributions: bool = False,
    attribution_seed: int = 0,
    round: int = 0,
) -> BiasReport:
    if not 0 < valence_threshold < 1:
        raise ValueError("valence_threshold must be in (0, 1)")
    matches = tuple(lexical_scan(text, bias_lexicon))
    valence = sentiment_score(text, sentiment_lexicon)
    flagged = bool(matches) or abs(valence) > valence_threshold
    attributions = None
    if include_attributions and flagged and _WORD_RE.search(text):
        from .attribution import shapley_attribution

        attributions = tuple(shapley_attribution(
            bias_scorer(bias_lexicon, sentiment_lexicon),
            text,
            seed=attribution_seed,
        ))
    return BiasReport(
        lexical_matches=matches,
        sentiment_valence=valence,
        flagged=flagged,
        attributions=attributions,
        round=round,
    )
