"""Generation by repeated MASK prediction: beam search and top-k sampling with n-gram blocking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, SequenceTooLongError
from .masks import LMObjective, Objective
from .model import SEGMENT_IDS, ModelParams, PackedBatch, PackedInput, forward, lm_logits
from .tensor import log_softmax_rows
from .tokenizer import EOS, MASK, PAD, SOS, UNK, TokenSequence

# Never generated: they carry no text.
DEFAULT_BANNED = frozenset({PAD, UNK, SOS, MASK})

StepFn = Callable[[Sequence[Tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_out_len: int = 32
    block_ngram: Optional[int] = 3
    top_k: int = 40
    length_norm: float = 0.0
    banned: FrozenSet[int] = DEFAULT_BANNED

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_out_len < 1:
            raise ValueError("max_out_len must be >= 1")
        if self.block_ngram is not None and self.block_ngram < 2:
            raise ValueError("block_ngram must be >= 2, or None to disable blocking")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        object.__setattr__(self, "banned", frozenset(self.banned))


@dataclass(frozen=True)
class Hypothesis:
    ids: Tuple[int, ...]
    logprob: float
    finished: bool = False
    finish_step: int = -1

    def score(self, length_norm: float = 0.0) -> float:
        if length_norm == 0.0 or not self.ids:
            return self.logprob
        return self.logprob / (len(self.ids) ** length_norm)


# ---------------------------------------------------------------------------
# model-backed next-token distributions
# ---------------------------------------------------------------------------


def pack_for_decode(source: Sequence[int], prefix: Sequence[int]) -> PackedInput:
    """⟨SOS⟩ source ⟨EOS⟩ prefix ⟨MASK⟩ under the seq2seq mask."""
    seg_a, seg_b = SEGMENT_IDS[Objective.SEQ2SEQ]
    s = len(source) + 2
    ids = (SOS, *source, EOS, *prefix, MASK)
    return PackedInput(ids, (seg_a,) * s + (seg_b,) * (len(prefix) + 1), LMObjective.seq2seq(s))


def pack_for_lm(prompt: Sequence[int], generated: Sequence[int]) -> PackedInput:
    """⟨SOS⟩ prompt generated ⟨MASK⟩ under the left-to-right mask."""
    seg = SEGMENT_IDS[Objective.LEFT_TO_RIGHT][0]
    ids = (SOS, *prompt, *generated, MASK)
    return PackedInput(ids, (seg,) * len(ids), LMObjective.left_to_right())


def _mask_logprobs(params: ModelParams, packed: Sequence[PackedInput]) -> np.ndarray:
    n = len(packed[0])
    limit = params.config.max_len
    if n > limit:
        raise SequenceTooLongError(
            f"decode input of {n} positions exceeds max_len {limit}; truncate the source (--max-src-len)")
    batch = PackedBatch.from_inputs(packed)
    h = forward(params, batch).last
    rows = ([b for b in range(len(packed))], [len(p) - 1 for p in packed])
    return log_softmax_rows(lm_logits(params, h, rows).data)


def next_token_dist(params: ModelParams, source: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
    """Probability of each vocabulary entry at the MASK slot after ``prefix``."""
    return np.exp(_mask_logprobs(params, [pack_for_decode(source, prefix)])[0])


def seq2seq_step_fn(params: ModelParams, source: Sequence[int]) -> StepFn:
    """Log-probabilities for a batch of equal-length prefixes, re-packed from scratch each call."""
    source = tuple(source)

    def step(prefixes):
        return _mask_logprobs(params, [pack_for_decode(source, p) for p in prefixes])

    return step


def check_decode_fits(params: ModelParams, source_len: int, max_out_len: int) -> None:
    need = source_len + max_out_len + 2
    if need > params.config.max_len:
        raise SequenceTooLongError(
            f"source of {source_len} tokens plus {max_out_len} output slots needs {need} positions, "
            f"model max_len is {params.config.max_len}; truncate the source (--max-src-len)")


# ---------------------------------------------------------------------------
# n-gram blocking
# ---------------------------------------------------------------------------


def blocked_tokens(ids: Sequence[int], n: Optional[int]) -> set:
    """Tokens whose append would repeat an n-gram already present in ``ids``."""
    if n is None or len(ids) < n - 1:
        return set()
    if n == 1:
        return set(ids)
    tail = tuple(ids[len(ids) - (n - 1):])
    out = set()
    for i in range(len(ids) - n + 1):
        if tuple(ids[i:i + n - 1]) == tail:
            out.add(ids[i + n - 1])
    return out


def has_repeated_ngram(ids: Sequence[int], n: int) -> bool:
    """Exhaustive window scan."""
    seen = set()
    for i in range(len(ids) - n + 1):
        gram = tuple(ids[i:i + n])
        if gram in seen:
            return True
        seen.add(gram)
    return False


# ---------------------------------------------------------------------------
# beam search
# ---------------------------------------------------------------------------


def beam_search_fn(step_fn: StepFn, config: DecodeConfig, eos: int = EOS) -> Hypothesis:
    """Beam search over any next-token log-probability function.

    Each step expands every live hypothesis by every token, sets blocked and
    banned extensions to -inf, and keeps the ``beam_size`` best candidates.
    Candidates ending in ``eos`` or reaching ``max_out_len`` are finished.
    With ``length_norm == 0`` the search stops as soon as the best finished
    score beats every live one, since scores never increase.
    """
    alive = [Hypothesis((), 0.0)]
    finished: List[Hypothesis] = []
    banned = np.array(sorted(config.banned), dtype=np.int64)
    for t in range(config.max_out_len):
        logp = np.array(step_fn([h.ids for h in alive]), dtype=np.float64)
        if banned.size:
            logp[:, banned[banned < logp.shape[1]]] = -np.inf
        cands = []
        for a, hyp in enumerate(alive):
            row = logp[a]
            for tok in blocked_tokens(hyp.ids, config.block_ngram):
                row[tok] = -np.inf
            for tok in np.flatnonzero(np.isfinite(row)):
                cands.append((hyp.logprob + row[tok], hyp.ids + (int(tok),)))
        if not cands:
            break
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, ids in cands[:config.beam_size]:
            if ids[-1] == eos or len(ids) == config.max_out_len:
                finished.append(Hypothesis(ids, score, True, t))
            else:
                alive.append(Hypothesis(ids, score))
        if not alive:
            break
        if config.length_norm == 0.0 and finished:
            if max(h.logprob for h in finished) >= max(h.logprob for h in alive):
                break
    if not finished:
        raise DataError("beam search finished no hypothesis: every candidate was blocked")
    return min(finished, key=lambda h: (-h.score(config.length_norm), h.finish_step, h.ids))


def beam_search(params: ModelParams, source: Sequence[int], config: DecodeConfig = DecodeConfig()) -> Hypothesis:
    check_decode_fits(params, len(source), config.max_out_len)
    return beam_search_fn(seq2seq_step_fn(params, source), config)


def greedy_decode(params: ModelParams, source: Sequence[int], max_out_len: int = 32,
                  banned: FrozenSet[int] = DEFAULT_BANNED) -> Tuple[int, ...]:
    """Argmax chain, no blocking."""
    out: Tuple[int, ...] = ()
    step = seq2seq_step_fn(params, source)
    while len(out) < max_out_len:
        row = step([out])[0]
        row[list(banned)] = -np.inf
        out += (int(np.argmax(row)),)
        if out[-1] == EOS:
            break
    return out


# ---------------------------------------------------------------------------
# left-to-right sampling
# ---------------------------------------------------------------------------


def sample_lr(params: ModelParams, prompt: Sequence[int], config: DecodeConfig = DecodeConfig(block_ngram=4),
              seed: int = 0) -> TokenSequence:
    """Top-k sampling under the left-to-right mask.

    Tokens that would repeat an n-gram of the generated text (n =
    ``block_ngram``) are removed before truncating to the ``top_k`` most
    probable candidates.  If nothing is left the sequence ends with EOS.
    """
    if not prompt:
        raise DataError("sampling needs a non-empty prompt")
    if len(prompt) + config.max_out_len + 1 > params.config.max_len:
        raise SequenceTooLongError(
            f"prompt of {len(prompt)} tokens plus {config.max_out_len} output slots exceeds "
            f"max_len {params.config.max_len}")
    rng = np.random.default_rng(seed)
    banned = sorted(config.banned)
    out: List[int] = []
    while len(out) < config.max_out_len:
        logp = _mask_logprobs(params, [pack_for_lm(prompt, out)])[0]
        logp[banned] = -np.inf
        for tok in blocked_tokens(out, config.block_ngram):
            logp[tok] = -np.inf
        cand = np.flatnonzero(np.isfinite(logp))
        if cand.size == 0:
            out.append(EOS)
            break
        order = cand[np.lexsort((cand, -logp[cand]))][:config.top_k]
        p = np.exp(logp[order] - logp[order].max())
        tok = int(order[rng.choice(order.size, p=p / p.sum())])
        out.append(tok)
        if tok == EOS:
            break
    return TokenSequence(out)
