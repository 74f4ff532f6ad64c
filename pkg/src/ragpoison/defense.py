"""Defenses: query paraphrasing, perplexity scoring with ROC/AUC, and the
plumbing the evaluation pipeline needs to apply them.

The perplexity scorer is a smoothed character n-gram language model
trained on clean records only. It is self-contained and deterministic
while preserving the detector's premise: low-quality text scores high
perplexity, and higher perplexity means more likely poisoned.
"""

from __future__ import annotations

import bisect
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import CLEAN, POISON, KnowledgeDatabase
from .errors import DomainError, ProtocolError
from .generation import MOCK_READER, GeneratorConfig, complete_http
from .textnorm import strip_edge_punctuation

_PAD = "\x00"

PARAPHRASE_PROMPT = (
    "This is my question: [question].\n"
    "\n"
    "Please craft [count] paraphrased versions for the question.\n"
    "\n"
    "Give your reply as a JSON formatted string.\n"
    "\n"
    'The reply should use "paraphrased_questions" as key,\n'
    "\n"
    "[question1, question2, ...] as value."
)

# Single-word mappings keep the mock deterministic and token-countable.
MOCK_SYNONYMS: Mapping[str, str] = {
    "who": "whom",
    "what": "which",
    "which": "what",
    "when": "whenever",
    "where": "whereabouts",
    "why": "wherefore",
    "how": "however",
    "largest": "biggest",
    "smallest": "tiniest",
    "first": "earliest",
    "last": "final",
    "wrote": "authored",
    "made": "created",
    "color": "hue",
    "colour": "hue",
}


@dataclass(frozen=True)
class NgramLM:
    order: int
    alpha: float
    alphabet_size: int
    ngram_counts: Mapping[str, int]
    context_counts: Mapping[str, int]


def train_lm(db: KnowledgeDatabase, order: int = 3, alpha: float = 0.1) -> NgramLM:
    """Character n-gram counts over the clean records of ``db``.

    Poison-origin records never contribute, so training after an injection
    yields the same model as training before it.
    """
    if order < 1:
        raise DomainError("n-gram order must be >= 1")
    if alpha <= 0:
        raise DomainError("smoothing alpha must be > 0")
    clean_texts = [rec.text for rec in db.records if rec.origin == CLEAN]
    if not clean_texts:
        raise DomainError("cannot train a language model on an empty clean corpus")
    ngram_counts: Counter[str] = Counter()
    context_counts: Counter[str] = Counter()
    alphabet: set[str] = set()
    for text in clean_texts:
        alphabet.update(text)
        padded = _PAD * (order - 1) + text
        for i in range(len(text)):
            window = padded[i : i + order]
            ngram_counts[window] += 1
            context_counts[window[:-1]] += 1
    return NgramLM(
        order=order,
        alpha=alpha,
        alphabet_size=len(alphabet),
        ngram_counts=dict(ngram_counts),
        context_counts=dict(context_counts),
    )


def perplexity(lm: NgramLM, text: str) -> float:
    """exp of the mean negative log-probability of each character.

    Histories are padded at the start, mirroring training. Finite and > 1
    for any positive smoothing constant.
    """
    if not text:
        raise DomainError("perplexity of empty text is undefined")
    padded = _PAD * (lm.order - 1) + text
    denom_smooth = lm.alpha * lm.alphabet_size
    log_prob = 0.0
    for i in range(len(text)):
        window = padded[i : i + lm.order]
        num = lm.ngram_counts.get(window, 0) + lm.alpha
        den = lm.context_counts.get(window[:-1], 0) + denom_smooth
        log_prob += math.log(num / den)
    return math.exp(-log_prob / len(text))


def perplexity_split(lm: NgramLM, db: KnowledgeDatabase) -> tuple[list[float], list[float]]:
    """Perplexity scores of (clean, poison) records, in database order."""
    clean = [perplexity(lm, rec.text) for rec in db.records if rec.origin == CLEAN]
    poison = [perplexity(lm, rec.text) for rec in db.records if rec.origin == POISON]
    return clean, poison


@dataclass(frozen=True)
class RocCurve:
    points: tuple[tuple[float, float], ...]  # (fpr, tpr), monotone in fpr
    auc: float


def roc_auc(clean_scores: Sequence[float], poison_scores: Sequence[float]) -> RocCurve:
    """Threshold-sweep ROC with poison-positive orientation (score >= t).

    The AUC is the rank statistic: the fraction of (poison, clean) pairs
    the scorer orders correctly, ties counted one half.
    """
    if not clean_scores or not poison_scores:
        raise DomainError("both score samples must be non-empty")
    thresholds = sorted(set(clean_scores) | set(poison_scores), reverse=True)
    n_clean = len(clean_scores)
    n_poison = len(poison_scores)
    points: list[tuple[float, float]] = [(0.0, 0.0)]
    for t in thresholds:
        fpr = sum(1 for s in clean_scores if s >= t) / n_clean
        tpr = sum(1 for s in poison_scores if s >= t) / n_poison
        points.append((fpr, tpr))

    sorted_clean = sorted(clean_scores)
    u = 0.0
    for p in poison_scores:
        lo = bisect.bisect_left(sorted_clean, p)
        hi = bisect.bisect_right(sorted_clean, p)
        u += lo + 0.5 * (hi - lo)
    auc = u / (n_clean * n_poison)
    return RocCurve(points=tuple(points), auc=auc)


def roc_to_rows(curve: RocCurve, clean_scores: Sequence[float], poison_scores: Sequence[float]):
    """(threshold, fpr, tpr) rows matching the curve's sweep order."""
    thresholds = [math.inf] + sorted(set(clean_scores) | set(poison_scores), reverse=True)
    return [
        (thresholds[i], fpr, tpr) for i, (fpr, tpr) in enumerate(curve.points)
    ]


def _rotate(words: list[str], by: int) -> list[str]:
    by = by % len(words)
    return words[by:] + words[:by]


def _apply_synonyms(words: list[str]) -> list[str]:
    mapped = []
    for word in words:
        core = strip_edge_punctuation(word.lower())
        if core in MOCK_SYNONYMS:
            replacement = MOCK_SYNONYMS[core]
            prefix, suffix = _edge_punct(word)
            mapped.append(f"{prefix}{replacement}{suffix}")
        else:
            mapped.append(word)
    return mapped


def _edge_punct(word: str) -> tuple[str, str]:
    core = strip_edge_punctuation(word)
    if not core:
        return "", word
    start = word.find(core)
    return word[:start], word[start + len(core):]


def paraphrase_question(
    paraphraser: GeneratorConfig, question: str, count: int = 5
) -> list[str]:
    """Produce ``count`` rewrites of the question, none equal to the input.

    Mock mode rotates word order by 1..count positions and substitutes
    through a fixed synonym table. HTTP mode sends the paraphrase prompt
    and expects a JSON reply with a "paraphrased_questions" list.
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    if paraphraser.kind == MOCK_READER:
        words = question.split()
        out = []
        for i in range(1, count + 1):
            candidate_words = _apply_synonyms(_rotate(words, i) if len(words) > 1 else words)
            candidate = " ".join(candidate_words)
            if candidate == question:
                candidate = f"restated: {candidate}"
            out.append(candidate)
        return out

    prompt = PARAPHRASE_PROMPT.replace("[question]", question).replace("[count]", str(count))
    reply = complete_http(paraphraser, prompt, question)
    try:
        payload = json.loads(reply)
        paraphrased = payload["paraphrased_questions"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ProtocolError(f"paraphrase reply is not the expected JSON: {exc}") from exc
    if not isinstance(paraphrased, list) or not all(isinstance(q, str) for q in paraphrased):
        raise ProtocolError('"paraphrased_questions" must be a list of strings')
    return paraphrased
