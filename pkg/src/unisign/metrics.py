"""Evaluation metrics: WER, BLEU-1..4, ROUGE-L, and top-1 accuracies.

All scores are stored as fractions in [0, 1]; percent scaling happens only
at presentation time in the report writer.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import EmptyInputError, EmptyReferenceError


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance over arbitrary token sequences (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    """(substitutions + deletions + insertions) / |ref|; may exceed 1."""
    if len(ref) == 0:
        raise EmptyReferenceError("WER reference must be non-empty")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(pairs: Sequence[Tuple[Sequence[str], Sequence[str]]]) -> float:
    """Total edits over total reference length across a corpus."""
    if not pairs:
        raise EmptyInputError("corpus WER needs at least one pair")
    edits = 0
    ref_len = 0
    for ref, hyp in pairs:
        if len(ref) == 0:
            raise EmptyReferenceError("WER reference must be non-empty")
        edits += edit_distance(ref, hyp)
        ref_len += len(ref)
    return edits / ref_len


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(
    references: Sequence[Sequence[Sequence[str]]],
    hypotheses: Sequence[Sequence[str]],
    max_n: int = 4,
    smooth: bool = False,
) -> float:
    """Corpus BLEU: clipped n-gram precisions pooled over all pairs, then a
    geometric mean with a brevity penalty.

    `references[i]` is the list of acceptable references for hypothesis i.
    With smoothing off (the default) any zero precision zeroes the score;
    `smooth` adds one to the higher-order numerators and denominators
    (a standard fallback for short toy corpora).
    """
    if len(references) != len(hypotheses):
        raise ValueError("one reference set per hypothesis required")
    if not hypotheses:
        raise EmptyInputError("corpus BLEU needs at least one pair")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for refs, hyp in zip(references, hypotheses):
        hyp_len += len(hyp)
        # closest reference length; ties go to the shorter one
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            clip: Counter = Counter()
            for r in refs:
                rc = _ngrams(r, n)
                for gram in counts:
                    clip[gram] = max(clip[gram], rc.get(gram, 0))
            matched[n - 1] += sum(min(c, clip[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())
    if hyp_len == 0:
        return 0.0
    log_prec = 0.0
    for n in range(max_n):
        num, den = matched[n], total[n]
        if smooth and n > 0:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_prec += math.log(num / den)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_prec / max_n)


def bleu(
    refs: Sequence[Sequence[str]],
    hyp: Sequence[str],
    max_n: int = 4,
    smooth: bool = False,
) -> float:
    """Single-pair BLEU (a one-element corpus)."""
    return bleu_corpus([refs], [hyp], max_n=max_n, smooth=smooth)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(ref: Sequence[str], hyp: Sequence[str], beta: float = 1.2) -> float:
    """LCS F-measure. beta > 1 weights recall, matching common usage."""
    if not ref or not hyp:
        return 0.0
    lcs = _lcs_length(ref, hyp)
    if lcs == 0:
        return 0.0
    recall = lcs / len(ref)
    precision = lcs / len(hyp)
    b2 = beta * beta
    return (1 + b2) * recall * precision / (recall + b2 * precision)


def top1(records: Sequence[Tuple[str, str]]) -> Tuple[float, float]:
    """Per-instance and per-class top-1 accuracy from (true, predicted) pairs."""
    if not records:
        raise EmptyInputError("accuracy needs at least one record")
    correct = 0
    per_class: Dict[str, List[int]] = {}
    for true, pred in records:
        hit = int(true == pred)
        correct += hit
        per_class.setdefault(true, []).append(hit)
    p_i = correct / len(records)
    p_c = sum(sum(v) / len(v) for v in per_class.values()) / len(per_class)
    return p_i, p_c


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_label(text: str) -> str:
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def islr_match(generated_text: str, vocabulary: Sequence[str]) -> int:
    """Map generated text onto the closest class label.

    Exact match on normalized text wins; otherwise the nearest label by
    character edit distance, with exact-tie resolution by lexicographically
    smaller label.
    """
    if not vocabulary:
        raise EmptyInputError("label vocabulary must be non-empty")
    query = normalize_label(generated_text)
    normalized = [normalize_label(v) for v in vocabulary]
    if query in normalized:
        return normalized.index(query)
    best = min(
        range(len(vocabulary)),
        key=lambda i: (edit_distance(normalized[i], query), normalized[i]),
    )
    return best


def tokenize_for_metric(text: str, mode: str = "word") -> List[str]:
    """Metric-side tokenization: `char` for CJK-style text, `word` for
    whitespace languages (lowercased, punctuation stripped)."""
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    if mode == "word":
        return normalize_label(text).split()
    raise ValueError(f"unknown tokenization mode {mode!r}")


@dataclass
class EvalReport:
    """Per-task metric bundle. Only task-relevant fields are populated."""

    task: str
    split: str
    n_samples: int
    wer: Optional[float] = None
    bleu: Optional[Dict[int, float]] = None
    rouge_l: Optional[float] = None
    p_i_top1: Optional[float] = None
    p_c_top1: Optional[float] = None
    config_hash: str = ""
    notes: Dict[str, str] = field(default_factory=dict)

    def metric_items(self) -> List[Tuple[str, float]]:
        items: List[Tuple[str, float]] = []
        if self.wer is not None:
            items.append(("wer", self.wer))
        if self.bleu:
            items.extend((f"bleu{n}", v) for n, v in sorted(self.bleu.items()))
        if self.rouge_l is not None:
            items.append(("rouge_l", self.rouge_l))
        if self.p_i_top1 is not None:
            items.append(("p_i_top1", self.p_i_top1))
        if self.p_c_top1 is not None:
            items.append(("p_c_top1", self.p_c_top1))
        return items
