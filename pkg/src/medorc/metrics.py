"""Text-generation evaluation metrics and bootstrap statistics.

ROUGE-1/2/L and sentence BLEU with the exact counting rules frozen by the
test oracles, plus percentile bootstrap confidence intervals and a
bootstrap significance test. All randomness flows through numpy's
default_rng (PCG64) so seeded runs are bit-reproducible and independent
re-implementations of the resampling scheme agree exactly.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_ITERATIONS = 1000
DEFAULT_LEVEL = 0.95
DEFAULT_BLEU_MAX_N = 4


def tokenize_eval(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class MetricScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "MetricScore":
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision, recall, f1)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(
        tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)
    )


def rouge_n(candidate: str, reference: str, n: int) -> MetricScore:
    """Clipped n-gram overlap; zero denominators give zero components."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(tokenize_eval(candidate), n)
    ref = _ngrams(tokenize_eval(reference), n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return MetricScore.from_pr(precision, recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    # single-row DP over the shorter sequence
    if len(b) > len(a):
        a, b = b, a
    row = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = row[j]
            row[j] = prev + 1 if x == y else max(row[j], row[j - 1])
            prev = cur
    return row[len(b)]


def rouge_l(candidate: str, reference: str) -> MetricScore:
    cand = tokenize_eval(candidate)
    ref = tokenize_eval(reference)
    lcs = _lcs_length(cand, ref) if cand and ref else 0
    precision = lcs / len(cand) if cand else 0.0
    recall = lcs / len(ref) if ref else 0.0
    return MetricScore.from_pr(precision, recall)


def bleu(
    candidate: str,
    references: list[str],
    max_n: int = DEFAULT_BLEU_MAX_N,
) -> float:
    """Sentence BLEU: clipped precisions against the best reference, add-1
    smoothing for n >= 2 only when the raw numerator is zero, brevity
    penalty against the closest reference length (ties go short)."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not references:
        raise ValueError("references must be non-empty")
    cand = tokenize_eval(candidate)
    refs = [tokenize_eval(r) for r in references]
    c = len(cand)
    if c == 0:
        return 0.0

    log_precisions = []
    for n in range(1, max_n + 1):
        cand_grams = _ngrams(cand, n)
        best_ref = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > best_ref[gram]:
                    best_ref[gram] = count
        numerator = sum(
            min(count, best_ref[gram]) for gram, count in cand_grams.items()
        )
        denominator = sum(cand_grams.values())
        if n == 1:
            if numerator == 0:
                return 0.0
            p = numerator / denominator
        elif numerator == 0:
            p = (numerator + 1) / (denominator + 1)
        else:
            p = numerator / denominator
        log_precisions.append(math.log(p))

    r = min((len(ref) for ref in refs), key=lambda L: (abs(L - c), L))
    brevity = math.exp(1 - r / c) if c < r else 1.0
    return brevity * math.exp(math.fsum(log_precisions) / max_n)


def corpus_bleu(pairs: list[tuple[str, str]], max_n: int = DEFAULT_BLEU_MAX_N) -> float:
    """Mean of sentence scores over (candidate, reference) pairs."""
    if not pairs:
        raise ValueError("pairs must be non-empty")
    return sum(bleu(c, [r], max_n) for c, r in pairs) / len(pairs)


@dataclass(frozen=True)
class BootstrapResult:
    point_estimate: float
    ci_low: float
    ci_high: float
    iterations: int
    level: float

    def __post_init__(self):
        if self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")


def bootstrap_ci(
    scores: list[float],
    iterations: int = DEFAULT_ITERATIONS,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile bootstrap of the mean. One rng draw of n indices per
    iteration, in iteration order, so oracles can replay the stream."""
    if not scores:
        raise ValueError("scores must be non-empty")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    arr = np.asarray(scores, dtype=np.float64)
    n = len(arr)
    rng = np.random.default_rng(seed)
    means = np.empty(iterations)
    for i in range(iterations):
        idx = rng.integers(0, n, size=n)
        means[i] = arr[idx].mean()
    alpha = (1.0 - level) / 2.0
    ci_low, ci_high = np.quantile(means, [alpha, 1.0 - alpha])
    return BootstrapResult(
        point_estimate=float(arr.mean()),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        iterations=iterations,
        level=level,
    )


@dataclass(frozen=True)
class SignificanceResult:
    difference: float
    significant: bool
    mode: str
    ci_low: float | None = None
    ci_high: float | None = None
    interval_a: tuple[float, float] | None = None
    interval_b: tuple[float, float] | None = None


def bootstrap_significance(
    scores_a: list[float],
    scores_b: list[float],
    iterations: int = DEFAULT_ITERATIONS,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    paired: bool = False,
    mode: str = "difference_ci",
) -> SignificanceResult:
    """Significance of mean(a) - mean(b).

    mode "difference_ci": bootstrap the mean difference; significant when
    the CI excludes zero. mode "nonoverlap": bootstrap each side
    separately; significant when the two CIs do not overlap.
    """
    if not scores_a or not scores_b:
        raise ValueError("both score lists must be non-empty")
    if mode not in ("difference_ci", "nonoverlap"):
        raise ValueError(f"unknown mode {mode!r}")
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    difference = float(a.mean() - b.mean())

    if mode == "nonoverlap":
        ra = bootstrap_ci(scores_a, iterations, level, seed)
        rb = bootstrap_ci(scores_b, iterations, level, seed + 1)
        significant = ra.ci_low > rb.ci_high or rb.ci_low > ra.ci_high
        return SignificanceResult(
            difference=difference,
            significant=bool(significant),
            mode=mode,
            interval_a=(ra.ci_low, ra.ci_high),
            interval_b=(rb.ci_low, rb.ci_high),
        )

    if paired and len(a) != len(b):
        raise ValueError("paired mode requires equal-length lists")
    rng = np.random.default_rng(seed)
    diffs = np.empty(iterations)
    for i in range(iterations):
        if paired:
            idx = rng.integers(0, len(a), size=len(a))
            diffs[i] = (a[idx] - b[idx]).mean()
        else:
            ia = rng.integers(0, len(a), size=len(a))
            ib = rng.integers(0, len(b), size=len(b))
            diffs[i] = a[ia].mean() - b[ib].mean()
    alpha = (1.0 - level) / 2.0
    ci_low, ci_high = (float(q) for q in np.quantile(diffs, [alpha, 1.0 - alpha]))
    significant = ci_low > 0.0 or ci_high < 0.0
    return SignificanceResult(
        difference=difference,
        significant=bool(significant),
        mode=mode,
        ci_low=ci_low,
        ci_high=ci_high,
    )


def evaluate_pairs(
    pairs: list[tuple[str, str]],
    iterations: int = DEFAULT_ITERATIONS,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
) -> dict[str, BootstrapResult]:
    """Per-metric bootstrap summaries over (candidate, reference) pairs."""
    if not pairs:
        raise ValueError("pairs must be non-empty")
    per_metric = {
        "rouge1_f1": [rouge_n(c, r, 1).f1 for c, r in pairs],
        "rouge2_f1": [rouge_n(c, r, 2).f1 for c, r in pairs],
        "rougeL_f1": [rouge_l(c, r).f1 for c, r in pairs],
        "bleu": [bleu(c, [r]) for c, r in pairs],
    }
    return {
        name: bootstrap_ci(scores, iterations, level, seed)
        for name, scores in per_metric.items()
    }
