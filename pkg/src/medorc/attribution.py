"""Perturbation-based attribution of a text scorer onto tokens.

Two methods: a LIME-style weighted linear surrogate over random
token-presence masks, and Shapley values (exact subset enumeration for
short texts, permutation sampling beyond that). Both treat the scorer as
a black box over texts rebuilt from kept tokens.
"""

from __future__ import annotations

import math
import re
from typing import Callable

import numpy as np

from .errors import DegenerateDesignError

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")

DEFAULT_MAX_EXACT_TOKENS = 12
DEFAULT_MC_SAMPLES = 200

Scorer = Callable[[str], float]


def _tokenize(text: str) -> list[str]:
    tokens = _TOKEN_RE.findall(text)
    if not tokens:
        raise ValueError("text must contain at least one token")
    return tokens


def _masked_text(tokens: list[str], keep) -> str:
    return " ".join(tok for tok, k in zip(tokens, keep) if k)


def lime_attribution(
    scorer: Scorer,
    text: str,
    m_samples: int,
    seed: int = 0,
) -> list[tuple[str, float]]:
    """Fit a weighted linear surrogate of the scorer over token-presence masks.

    Masks are drawn uniformly over {0,1}^d; sample weight is
    exp(-(1-s)^2 / 0.25) with s the fraction of tokens kept. On a singular
    design the draw is retried once with twice the samples.
    """
    tokens = _tokenize(text)
    d = len(tokens)
    if m_samples < d:
        raise ValueError("m_samples must be >= token count")
    rng = np.random.default_rng(seed)
    for m in (m_samples, m_samples * 2):
        masks = rng.integers(0, 2, size=(m, d))
        scores = np.array([scorer(_masked_text(tokens, row)) for row in masks],
                          dtype=np.float64)
        kept_fraction = masks.mean(axis=1)
        weights = np.exp(-((1.0 - kept_fraction) ** 2) / 0.25)
        design = np.hstack([np.ones((m, 1)), masks.astype(np.float64)])
        sqrt_w = np.sqrt(weights)[:, None]
        wx = design * sqrt_w
        wy = scores * sqrt_w[:, 0]
        if np.linalg.matrix_rank(wx) < d + 1:
            continue
        coef, *_ = np.linalg.lstsq(wx, wy, rcond=None)
        return list(zip(tokens, (float(c) for c in coef[1:])))
    raise DegenerateDesignError(
        f"singular perturbation design for {d} tokens after retry"
    )


def shapley_attribution(
    scorer: Scorer,
    text: str,
    max_exact_tokens: int = DEFAULT_MAX_EXACT_TOKENS,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> list[tuple[str, float]]:
    """Exact Shapley by full subset enumeration up to max_exact_tokens
    tokens; permutation-sampling estimate beyond."""
    tokens = _tokenize(text)
    d = len(tokens)
    if d <= max_exact_tokens:
        values = _shapley_exact(scorer, tokens)
    else:
        values = _shapley_sampled(scorer, tokens, mc_samples, seed)
    return list(zip(tokens, values))


def _subset_text(tokens: list[str], bits: int) -> str:
    return " ".join(tok for i, tok in enumerate(tokens) if bits >> i & 1)


def _shapley_exact(scorer: Scorer, tokens: list[str]) -> list[float]:
    d = len(tokens)
    v = [scorer(_subset_text(tokens, bits)) for bits in range(1 << d)]
    fact = [math.factorial(k) for k in range(d + 1)]
    # weight of a coalition S (not containing i): |S|! (d-|S|-1)! / d!
    weight = [fact[k] * fact[d - k - 1] / fact[d] for k in range(d)]
    values = []
    for i in range(d):
        bit = 1 << i
        contributions = [
            weight[bin(bits).count("1")] * (v[bits | bit] - v[bits])
            for bits in range(1 << d)
            if not bits & bit
        ]
        values.append(math.fsum(contributions))
    return values


def _shapley_sampled(
    scorer: Scorer, tokens: list[str], mc_samples: int, seed: int
) -> list[float]:
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    d = len(tokens)
    rng = np.random.default_rng(seed)
    cache: dict[int, float] = {}

    def v(bits: int) -> float:
        if bits not in cache:
            cache[bits] = scorer(_subset_text(tokens, bits))
        return cache[bits]

    totals = [0.0] * d
    for _ in range(mc_samples):
        bits = 0
        for i in rng.permutation(d):
            before = v(bits)
            bits |= 1 << int(i)
            totals[int(i)] += v(bits) - before
    return [t / mc_samples for t in totals]
