"""ROUGE-N/L, BLEU-4 and span EM/F1 over whitespace tokens.

These follow the usual definitions; they make no claim of byte parity with
the official scoring scripts.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import DataError


@dataclass(frozen=True)
class ScoreReport:
    metric: str
    precision: float
    recall: float
    f1: float
    score: Optional[float] = None   # BLEU value, or exact match for spans

    def to_dict(self) -> dict:
        return asdict(self)


def tokens(text: str) -> List[str]:
    return text.split()


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def rouge_n(hyp: Sequence, ref: Sequence, n: int = 1) -> ScoreReport:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not ref:
        raise DataError("ROUGE needs a non-empty reference")
    h, r = _ngrams(hyp, n), _ngrams(ref, n)
    overlap = sum((h & r).values())
    p = overlap / sum(h.values()) if h else 0.0
    rec = overlap / sum(r.values()) if r else 0.0
    return ScoreReport(f"rouge{n}", p, rec, _f1(p, rec))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, O(|a| |b|) dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence, ref: Sequence) -> ScoreReport:
    if not ref:
        raise DataError("ROUGE needs a non-empty reference")
    lcs = lcs_length(hyp, ref)
    p = lcs / len(hyp) if hyp else 0.0
    r = lcs / len(ref)
    return ScoreReport("rougeL", p, r, _f1(p, r))


def bleu4(hyp: Sequence, ref: Sequence, smooth: Optional[bool] = None) -> float:
    """Sentence BLEU-4: geometric mean of clipped 1..4-gram precisions times brevity penalty.

    Smoothing replaces a zero match count by add-one, (0 + 1) / (total + 1).
    It is on by default only for hypotheses shorter than four tokens.
    """
    if not hyp:
        return 0.0
    if smooth is None:
        smooth = len(hyp) < 4
    log_sum = 0.0
    for n in range(1, 5):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        total = sum(h.values())
        match = sum((h & r).values())
        if match == 0:
            if not smooth:
                return 0.0
            log_sum += math.log(1.0 / (total + 1))
        else:
            log_sum += math.log(match / total)
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_sum / 4)


def span_em_f1(pred: str, gold: str) -> ScoreReport:
    """Exact match after whitespace normalisation, plus token-overlap F1."""
    p_toks, g_toks = tokens(pred), tokens(gold)
    em = float(p_toks == g_toks)
    if not p_toks or not g_toks:
        f = float(p_toks == g_toks)
        return ScoreReport("span", f, f, f, em)
    common = sum((Counter(p_toks) & Counter(g_toks)).values())
    p = common / len(p_toks)
    r = common / len(g_toks)
    return ScoreReport("span", p, r, _f1(p, r), em)


METRICS = ("rouge1", "rouge2", "rougeL", "bleu4", "span")


def corpus_score(metric: str, hyps: Sequence[str], refs: Sequence[str]) -> dict:
    """Mean of per-example scores over aligned hypothesis / reference lines."""
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not refs:
        raise DataError("nothing to score")
    if metric == "bleu4":
        vals = [bleu4(tokens(h), tokens(r)) for h, r in zip(hyps, refs)]
        return {"metric": metric, "n": len(vals), "score": sum(vals) / len(vals)}
    if metric == "span":
        reps = [span_em_f1(h, r) for h, r in zip(hyps, refs)]
        return {"metric": metric, "n": len(reps),
                "em": sum(x.score for x in reps) / len(reps),
                "f1": sum(x.f1 for x in reps) / len(reps)}
    if metric == "rougeL":
        reps = [rouge_l(tokens(h), tokens(r)) for h, r in zip(hyps, refs)]
    elif metric in ("rouge1", "rouge2"):
        n = int(metric[-1])
        reps = [rouge_n(tokens(h), tokens(r), n) for h, r in zip(hyps, refs)]
    else:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    k = len(reps)
    return {"metric": metric, "n": k,
            "precision": sum(x.precision for x in reps) / k,
            "recall": sum(x.recall for x in reps) / k,
            "f1": sum(x.f1 for x in reps) / k}
