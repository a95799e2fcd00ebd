"""Response reliability scoring.

Three signals: dispersion of cosine similarities across stochastic samples
of one prompt, token-level perplexity of the chosen response, and relevance
of the response to the query. The embedder is a fixed feature-hashed
bag-of-words; it trades semantic fidelity for determinism and zero model
dependency, which is what the tests and desk runs need.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from enum import Enum
from itertools import combinations

import numpy as np

from .backends import Backend, GenerationOutput, GenerationParams

EMBEDDING_DIM = 256
_HASH_SEED = 0x6D65646F7263

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_PPL_THRESHOLD = 10.0
DEFAULT_STD_THRESHOLD = 0.05


@dataclass(eq=False)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (EMBEDDING_DIM,):
            raise ValueError(
                f"embedding must have dimension {EMBEDDING_DIM}, "
                f"got shape {self.values.shape}"
            )

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @classmethod
    def from_values(cls, seq) -> "EmbeddingVector":
        arr = np.zeros(EMBEDDING_DIM, dtype=np.float64)
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 1 or len(seq) > EMBEDDING_DIM:
            raise ValueError("seq must be 1-D with length <= embedding dimension")
        arr[: len(seq)] = seq
        return cls(arr)


def _token_hash(token: str) -> int:
    payload = f"{_HASH_SEED:x}|{token}".encode("utf-8")
    return int.from_bytes(
        hashlib.blake2b(payload, digest_size=8).digest(), "big"
    )


def embed_text(text: str) -> EmbeddingVector:
    """Deterministic signed feature-hashed bag of words, L2-normalized."""
    counts = np.zeros(EMBEDDING_DIM, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        h = _token_hash(token)
        bucket = h % EMBEDDING_DIM
        sign = 1.0 if (h >> 8) & 1 == 0 else -1.0
        counts[bucket] += sign
    norm = np.linalg.norm(counts)
    if norm > 0:
        counts /= norm
    return EmbeddingVector(counts)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    na, nb = a.norm, b.norm
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


class Confidence(Enum):
    RELIABLE = "reliable"
    FLAGGED = "flagged"


def perplexity(token_logprobs: list[float]) -> float:
    """exp of the negative mean log-probability."""
    if len(token_logprobs) == 0:
        raise ValueError("perplexity is undefined for an empty token list")
    if any(lp > 0 for lp in token_logprobs):
        raise ValueError("log-probabilities must be <= 0")
    if any(math.isinf(lp) for lp in token_logprobs):
        return math.inf
    return math.exp(-math.fsum(token_logprobs) / len(token_logprobs))


def classify_confidence(
    ppl: float, threshold: float = DEFAULT_PPL_THRESHOLD
) -> Confidence:
    """Flag strictly above the threshold; the threshold itself is reliable."""
    if threshold <= 1:
        raise ValueError("threshold must be > 1")
    return Confidence.FLAGGED if ppl > threshold else Confidence.RELIABLE


def relevance(query_text: str, response_text: str) -> float:
    return cosine_similarity(embed_text(query_text), embed_text(response_text))


@dataclass(frozen=True)
class MCDispersion:
    """Pairwise-similarity statistics over stochastic samples of one prompt."""

    samples: tuple[GenerationOutput, ...]
    mean_pairwise_similarity: float
    similarity_std: float


def pairwise_dispersion(texts: list[str]) -> tuple[float, float]:
    """Mean and population std of cosine over all unordered text pairs."""
    if len(texts) < 2:
        raise ValueError("need at least 2 texts")
    vectors = [embed_text(t) for t in texts]
    sims = np.array([
        cosine_similarity(a, b) for a, b in combinations(vectors, 2)
    ])
    return float(sims.mean()), float(sims.std())


def mc_uncertainty(
    backend: Backend,
    prompt: str,
    n: int,
    params: GenerationParams,
) -> MCDispersion:
    if n < 2:
        raise ValueError("n must be >= 2 for dispersion statistics")
    with backend.lease():
        samples = backend.generate_samples(prompt, params, n)
    mean, std = pairwise_dispersion([s.text for s in samples])
    return MCDispersion(tuple(samples), mean, std)


@dataclass(frozen=True)
class UncertaintyReport:
    sample_count: int
    mean_pairwise_similarity: float
    similarity_std: float
    perplexity: float
    flagged: bool
    round: int = 0

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("sample_count must be >= 2")
        if self.similarity_std < 0:
            raise ValueError("similarity_std must be >= 0")


def build_uncertainty_report(
    dispersion: MCDispersion,
    token_logprobs: list[float],
    ppl_threshold: float = DEFAULT_PPL_THRESHOLD,
    std_threshold: float = DEFAULT_STD_THRESHOLD,
    round: int = 0,
) -> UncertaintyReport:
    ppl = perplexity(token_logprobs)
    flagged = (
        classify_confidence(ppl, ppl_threshold) is Confidence.FLAGGED
        or dispersion.similarity_std > std_threshold
    )
    return UncertaintyReport(
        sample_count=len(dispersion.samples),
        mean_pairwise_similarity=dispersion.mean_pairwise_similarity,
        similarity_std=dispersion.similarity_std,
        perplexity=ppl,
        flagged=flagged,
        round=round,
    )
