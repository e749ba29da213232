"""Cloze corruption, objective mixing, NSP pairing and the joint training loop."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import DataError, NumericFailureError
from .masks import LMObjective, Objective
from .model import (ModelConfig, ModelParams, PackedBatch, PackedInput, forward, is_decayed,
                    lm_logits, nsp_logits, pack_pair, pack_single, read_checkpoint, save_checkpoint)
from .optim import Adam, OptimizerConfig, learning_rate
from .tokenizer import EOS, MASK, N_RESERVED, PAD, SOS, Vocab, encode

logger = logging.getLogger(__name__)

IS_NEXT, NOT_NEXT = 0, 1
OBJECTIVE_ORDER = (Objective.BIDIRECTIONAL, Objective.SEQ2SEQ, Objective.LEFT_TO_RIGHT, Objective.RIGHT_TO_LEFT)

# replacement kinds recorded per masked token
REPLACED_MASK, REPLACED_RANDOM, KEPT = 0, 1, 2


@dataclass(frozen=True)
class CorruptionPolicy:
    mask_prob: float = 0.15
    replace_mask: float = 0.80
    replace_random: float = 0.10
    keep_original: float = 0.10
    span_unigram: float = 0.80
    span_bigram_or_trigram: float = 0.20

    def __post_init__(self):
        if not 0.0 < self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in (0, 1]")
        if not math.isclose(self.replace_mask + self.replace_random + self.keep_original, 1.0):
            raise ValueError("replacement fractions must sum to 1")
        if not math.isclose(self.span_unigram + self.span_bigram_or_trigram, 1.0):
            raise ValueError("span fractions must sum to 1")


@dataclass(frozen=True)
class MixSchedule:
    bidirectional: float = 1 / 3
    seq2seq: float = 1 / 3
    left_to_right: float = 1 / 6
    right_to_left: float = 1 / 6

    def __post_init__(self):
        w = self.weights
        if min(w) < 0 or not math.isclose(sum(w), 1.0):
            raise ValueError(f"mixing weights must be non-negative and sum to 1, got {w}")

    @property
    def weights(self) -> Tuple[float, float, float, float]:
        """In ``OBJECTIVE_ORDER``."""
        return (self.bidirectional, self.seq2seq, self.left_to_right, self.right_to_left)


@dataclass
class Corruption:
    input: PackedInput
    targets: List[Tuple[int, int]]
    span_lengths: List[int]       # drawn length of every span, before truncation
    replacements: List[int]       # REPLACED_MASK / REPLACED_RANDOM / KEPT per target


@dataclass
class ClozeBatch:
    inputs: List[PackedInput]
    targets: List[List[Tuple[int, int]]]
    objective: Objective
    nsp_labels: Optional[List[int]] = None

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("one target list per input")
        if self.nsp_labels is not None and len(self.nsp_labels) != len(self.inputs):
            raise ValueError("one NSP label per input")

    def __len__(self) -> int:
        return len(self.inputs)


def maskable_positions(packed: PackedInput) -> List[int]:
    return [i for i, t in enumerate(packed.ids) if t not in (SOS, EOS, PAD)]


def corrupt(packed: PackedInput, policy: CorruptionPolicy, rng: Union[int, np.random.Generator],
            vocab_size: int, maskable: Optional[Sequence[int]] = None) -> Corruption:
    """Choose cloze targets and corrupt them.

    Spans are drawn until ceil(mask_prob * #maskable) tokens (at least one)
    are targeted: a unigram with probability ``span_unigram``, else a bigram
    or trigram with equal chance.  A span starts at a random untargeted
    maskable position and runs right over consecutive maskable positions,
    truncated at a segment boundary, an already-targeted token or the
    remaining budget.  Each targeted token is then replaced by MASK, a
    uniform random non-reserved token, or left unchanged (80/10/10 by
    default).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if maskable is None:
        maskable = maskable_positions(packed)
    maskable = sorted(set(maskable))
    if not maskable:
        raise DataError("sequence has no maskable tokens")
    if vocab_size <= N_RESERVED:
        raise ValueError("vocab has no non-reserved tokens to draw replacements from")
    is_maskable = np.zeros(len(packed), dtype=bool)
    is_maskable[maskable] = True
    budget = max(1, math.ceil(policy.mask_prob * len(maskable) - 1e-9))
    chosen = np.zeros(len(packed), dtype=bool)
    order: List[int] = []
    span_lengths: List[int] = []
    while len(order) < budget:
        if rng.random() < policy.span_unigram:
            span = 1
        else:
            span = 2 if rng.random() < 0.5 else 3
        span_lengths.append(span)
        free = np.flatnonzero(is_maskable & ~chosen)
        pos = int(free[rng.integers(len(free))])
        for p in range(pos, min(pos + span, len(packed))):
            if not is_maskable[p] or chosen[p] or len(order) >= budget:
                break
            chosen[p] = True
            order.append(p)

    ids = list(packed.ids)
    targets, kinds = [], []
    cut_mask = policy.replace_mask
    cut_random = policy.replace_mask + policy.replace_random
    for p in sorted(order):
        targets.append((p, ids[p]))
        u = rng.random()
        if u < cut_mask:
            ids[p] = MASK
            kinds.append(REPLACED_MASK)
        elif u < cut_random:
            ids[p] = int(rng.integers(N_RESERVED, vocab_size))
            kinds.append(REPLACED_RANDOM)
        else:
            kinds.append(KEPT)
    return Corruption(packed.with_ids(ids), targets, span_lengths, kinds)


def sample_objective(schedule: MixSchedule, rng: np.random.Generator) -> Objective:
    """Categorical draw over objectives; one draw serves a whole batch."""
    return OBJECTIVE_ORDER[int(rng.choice(4, p=np.asarray(schedule.weights)))]


# ---------------------------------------------------------------------------
# corpus handling
# ---------------------------------------------------------------------------

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def split_sentences(document: str) -> List[str]:
    return [s for s in _SENTENCE_END.split(document.strip()) if s]


@dataclass
class Corpus:
    """Tokenized documents, each a list of sentences (lists of token ids)."""

    documents: List[List[List[int]]]

    @classmethod
    def from_lines(cls, lines: Iterable[str], vocab: Vocab) -> "Corpus":
        docs = []
        for line in lines:
            sents = [encode(vocab, s).ids for s in split_sentences(line)]
            sents = [s for s in sents if s]
            if sents:
                docs.append(sents)
        if not docs:
            raise DataError("corpus contains no sentences")
        return cls(docs)

    @property
    def n_sentences(self) -> int:
        return sum(len(d) for d in self.documents)

    def sentences(self) -> List[List[int]]:
        return [s for d in self.documents for s in d]


def make_nsp_pair(corpus: Corpus, rng: np.random.Generator,
                  force: Optional[int] = None) -> Tuple[List[int], List[int], int]:
    """Return (segment A, segment B, label): IsNext half the time, else B from another document."""
    docs = corpus.documents
    multi = [i for i, d in enumerate(docs) if len(d) >= 2]
    if not multi:
        raise DataError("NSP needs a document with at least two consecutive sentences")
    label = force if force is not None else (IS_NEXT if rng.random() < 0.5 else NOT_NEXT)
    d = multi[int(rng.integers(len(multi)))]
    i = int(rng.integers(len(docs[d]) - 1))
    a = docs[d][i]
    if label == IS_NEXT:
        return a, docs[d][i + 1], IS_NEXT
    if len(docs) < 2:
        raise DataError("NotNext pairs need at least two documents")
    other = int(rng.integers(len(docs) - 1))
    other += other >= d
    b = docs[other][int(rng.integers(len(docs[other])))]
    return a, b, NOT_NEXT


def _truncate_pair(a: List[int], b: List[int], budget: int) -> Tuple[List[int], List[int]]:
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def make_batch(corpus: Corpus, objective: Objective, batch_size: int, rng: np.random.Generator,
               policy: CorruptionPolicy, vocab_size: int, max_len: int) -> ClozeBatch:
    """Assemble and corrupt ``batch_size`` examples that all share ``objective``."""
    inputs, targets, labels = [], [], []
    sentences = corpus.sentences()
    for _ in range(batch_size):
        if objective is Objective.BIDIRECTIONAL:
            a, b, label = make_nsp_pair(corpus, rng)
            a, b = _truncate_pair(a, b, max_len - 3)
            packed = pack_pair(a, b, objective)
            labels.append(label)
        elif objective is Objective.SEQ2SEQ:
            a, b, _ = make_nsp_pair(corpus, rng, force=IS_NEXT)
            a, b = _truncate_pair(a, b, max_len - 3)
            packed = pack_pair(a, b, objective)
        else:
            sent = sentences[int(rng.integers(len(sentences)))][: max_len - 2]
            packed = pack_single(sent, LMObjective(objective))
        c = corrupt(packed, policy, rng, vocab_size)
        inputs.append(c.input)
        targets.append(c.targets)
    return ClozeBatch(inputs, targets, objective, labels if objective is Objective.BIDIRECTIONAL else None)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    loss: float
    lm_loss: float
    nsp_loss: Optional[float]
    lr: float
    grad_norm: float


def cloze_loss(params: ModelParams, batch: ClozeBatch, train_mode: bool = True,
               seed: int = 0, use_nsp: bool = True, smoothing: float = 0.0):
    """Masked-token cross-entropy (+ NSP cross-entropy for bidirectional batches).

    Returns (total, lm, nsp) tensors; nsp is None when not applicable.
    """
    packed = PackedBatch.from_inputs(batch.inputs)
    hidden = forward(params, packed, train_mode=train_mode, seed=seed).last
    b_idx = [b for b, tg in enumerate(batch.targets) for _ in tg]
    p_idx = [p for tg in batch.targets for p, _ in tg]
    gold = [t for tg in batch.targets for _, t in tg]
    if not gold:
        raise DataError("cloze batch has no prediction targets")
    lm = T.cross_entropy(lm_logits(params, hidden, (b_idx, p_idx)), gold, smoothing)
    nsp = None
    total = lm
    if use_nsp and batch.nsp_labels is not None:
        sos = T.take_rows(hidden, (np.arange(len(batch)), np.zeros(len(batch), dtype=np.int64)))
        nsp = T.cross_entropy(nsp_logits(params, sos), batch.nsp_labels)
        total = T.add(lm, nsp)
    return total, lm, nsp


def pretrain_step(params: ModelParams, batch: ClozeBatch, optimizer: Adam, step: int,
                  seed: int = 0, use_nsp: bool = True) -> StepResult:
    """One forward/backward pass and one optimizer update at schedule position ``step``."""
    params.zero_grad()
    with T.Tape() as tape:
        total, lm, nsp = cloze_loss(params, batch, train_mode=True, seed=seed, use_nsp=use_nsp)
    loss = total.item()
    if not math.isfinite(loss):
        raise NumericFailureError(step, loss)
    tape.backward(total)
    lr = learning_rate(optimizer.config, step)
    decayed = {k: is_decayed(k, p.shape) for k, p in params.items()}
    norm = optimizer.step(params.tensors, lr, decayed)
    return StepResult(loss, lm.item(), nsp.item() if nsp is not None else None, lr, norm)


@dataclass(frozen=True)
class PretrainSettings:
    batch_size: int = 16
    checkpoint_every: int = 500
    use_nsp: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size and checkpoint_every must be positive")


def checkpoint_name(step: int) -> str:
    return f"ckpt-{step:06d}.ckpt"


def latest_checkpoint(out_dir: Union[str, Path]) -> Optional[Path]:
    found = sorted(Path(out_dir).glob("ckpt-*.ckpt"))
    return found[-1] if found else None


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


@dataclass
class PretrainResult:
    params: ModelParams
    history: List[dict] = field(default_factory=list)
    checkpoint: Optional[Path] = None


def pretrain_loop(corpus: Corpus, vocab: Vocab, model_config: ModelConfig, opt_config: OptimizerConfig,
                  steps: int, seed: int = 0, out_dir: Union[str, Path, None] = None,
                  policy: CorruptionPolicy = CorruptionPolicy(), schedule: MixSchedule = MixSchedule(),
                  settings: PretrainSettings = PretrainSettings(), resume: bool = True) -> PretrainResult:
    """Joint training over the mixed objectives.

    Every step draws its objective, examples, corruption and dropout from a
    generator seeded by (seed, step), so a run resumed from a checkpoint
    replays exactly the trajectory of an uninterrupted one.  Metrics go to
    ``out_dir/metrics.jsonl`` as one JSON object per step.
    """
    if model_config.vocab_size != len(vocab):
        raise ValueError(f"model vocab_size {model_config.vocab_size} != vocabulary size {len(vocab)}")
    out = Path(out_dir) if out_dir is not None else None
    params = ModelParams.init(model_config, seed)
    optimizer = Adam(opt_config)
    start = 0
    history: List[dict] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        last = latest_checkpoint(out) if resume else None
        if last is not None:
            ckpt = read_checkpoint(last, expect=model_config)
            params = ckpt.params
            start = int(ckpt.meta.get("step", 0))
            optimizer.load_state(int(ckpt.meta.get("adam_t", 0)), ckpt.extras)
            history = _read_metrics(out / "metrics.jsonl")[:start]
            logger.info("resuming from %s at step %d", last, start)
        _write_metrics(out / "metrics.jsonl", history)

    def save(step: int) -> Path:
        path = out / checkpoint_name(step)
        meta = {"step": step, "adam_t": optimizer.t, "seed": seed, "vocab": vocab.id_to_token}
        save_checkpoint(params, model_config, path, meta=meta, extras=optimizer.state_arrays())
        return path

    saved = None
    if out is not None and start == 0:
        saved = save(0)
    for step in range(start + 1, steps + 1):
        rng = step_rng(seed, step)
        objective = sample_objective(schedule, rng)
        batch = make_batch(corpus, objective, settings.batch_size, rng, policy,
                           model_config.vocab_size, model_config.max_len)
        dropout_seed = int(rng.integers(2 ** 63))
        res = pretrain_step(params, batch, optimizer, step, seed=dropout_seed, use_nsp=settings.use_nsp)
        row = {"step": step, "objective": objective.value, "loss": res.loss, "lr": res.lr}
        history.append(row)
        if out is not None:
            with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")
            if step % settings.checkpoint_every == 0 or step == steps:
                saved = save(step)
    if out is not None and saved is None:
        saved = latest_checkpoint(out)
    return PretrainResult(params, history, saved)


def _read_metrics(path: Path) -> List[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _write_metrics(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def running_means(history: Sequence[dict], window: int = 100) -> Dict[str, Tuple[float, float]]:
    """Per objective: (mean loss in the first ``window`` steps, mean loss in the last ``window`` steps)."""
    first = history[:window]
    last = history[-window:]
    out = {}
    for obj in OBJECTIVE_ORDER:
        a = [r["loss"] for r in first if r["objective"] == obj.value]
        b = [r["loss"] for r in last if r["objective"] == obj.value]
        if a and b:
            out[obj.value] = (float(np.mean(a)), float(np.mean(b)))
    return out
