"""Downstream adaptation: sequence classification, span extraction, seq2seq generation."""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import DataError, NumericFailureError
from .masks import Objective
from .model import ModelParams, PackedBatch, PackedInput, forward, is_decayed, lm_logits, pack_pair
from .optim import Adam, OptimizerConfig, learning_rate
from .tensor import NEG_INF, Tensor
from .tokenizer import EOS, MASK


class Mode(enum.Enum):
    CLASSIFY = "classify"
    SPAN = "span"
    SEQ2SEQ = "seq2seq"


@dataclass(frozen=True)
class FinetuneConfig:
    mode: Mode = Mode.SEQ2SEQ
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 10
    weight_decay: float = 0.01
    target_mask_prob: float = 0.7
    label_smoothing: float = 0.1
    dropout: float = 0.1
    max_span_len: int = 16
    n_classes: int = 2

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.SEQ2SEQ and not 0.0 < self.target_mask_prob <= 1.0:
            raise ValueError("target_mask_prob must lie in (0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.n_classes < 2:
            raise ValueError("classification needs at least 2 classes")
        if self.steps < 0 or self.batch_size < 1 or self.max_span_len < 0:
            raise ValueError("steps, batch_size and max_span_len must be non-negative (batch_size >= 1)")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    def optimizer_config(self) -> OptimizerConfig:
        total = max(self.steps, 1)
        return OptimizerConfig(peak_lr=self.lr, warmup_steps=min(self.warmup_steps, total),
                               total_steps=total, weight_decay=self.weight_decay)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        return d


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------


class ClassifierHead:
    """Softmax classifier over the SOS vector: probabilities = softmax(h_sos @ W)."""

    def __init__(self, weight: Tensor):
        if weight.ndim != 2 or weight.shape[1] < 2:
            raise ValueError(f"classifier weight must be [d x C] with C >= 2, got {weight.shape}")
        self.weight = weight

    @classmethod
    def init(cls, d_model: int, n_classes: int, seed: int = 0, std: float = 0.02) -> "ClassifierHead":
        rng = np.random.default_rng(seed)
        return cls(Tensor(rng.normal(0.0, std, (d_model, n_classes)), requires_grad=True, name="cls_w"))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def tensors(self) -> Dict[str, Tensor]:
        return {"head.cls_w": self.weight}


class SpanHead:
    """Per-position start/end scores from two projection vectors."""

    def __init__(self, start: Tensor, end: Tensor):
        self.start = start
        self.end = end

    @classmethod
    def init(cls, d_model: int, seed: int = 0, std: float = 0.02) -> "SpanHead":
        rng = np.random.default_rng(seed)
        return cls(Tensor(rng.normal(0.0, std, (d_model, 1)), requires_grad=True, name="span_start"),
                   Tensor(rng.normal(0.0, std, (d_model, 1)), requires_grad=True, name="span_end"))

    def tensors(self) -> Dict[str, Tensor]:
        return {"head.span_start": self.start, "head.span_end": self.end}


def head_from_arrays(mode: Mode, arrays: Dict[str, np.ndarray]):
    if mode is Mode.CLASSIFY:
        return ClassifierHead(Tensor(arrays["head.cls_w"], requires_grad=True, name="cls_w"))
    if mode is Mode.SPAN:
        return SpanHead(Tensor(arrays["head.span_start"], requires_grad=True, name="span_start"),
                        Tensor(arrays["head.span_end"], requires_grad=True, name="span_end"))
    return None


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def classify_pack(first: Sequence[int], second: Sequence[int] = ()) -> PackedInput:
    return pack_pair(first, second, Objective.BIDIRECTIONAL)


def _sos_vectors(params: ModelParams, batch: PackedBatch, train_mode: bool, seed: int,
                 dropout: Optional[float]) -> Tensor:
    h = forward(params, batch, train_mode=train_mode, seed=seed, dropout=dropout).last
    return T.take_rows(h, (np.arange(len(batch)), np.zeros(len(batch), dtype=np.int64)))


def class_logits(params: ModelParams, head: ClassifierHead, inputs: Sequence[PackedInput],
                 train_mode: bool = False, seed: int = 0, dropout: Optional[float] = None) -> Tensor:
    batch = PackedBatch.from_inputs(inputs)
    return T.matmul(_sos_vectors(params, batch, train_mode, seed, dropout), head.weight)


def classify(params: ModelParams, head: ClassifierHead, packed: PackedInput) -> np.ndarray:
    """Class probabilities for one bidirectionally packed input."""
    if packed.objective.kind is not Objective.BIDIRECTIONAL:
        raise ValueError("classification expects bidirectional packing")
    logits = class_logits(params, head, [packed]).data[0]
    return T.softmax_rows(Tensor(logits)).data


# ---------------------------------------------------------------------------
# span extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpanExample:
    packed: PackedInput
    region: Tuple[int, int]            # passage positions [lo, hi)
    answer: Optional[Tuple[int, int]] = None  # inclusive packed positions

    def __post_init__(self):
        lo, hi = self.region
        if not 0 <= lo < hi <= len(self.packed):
            raise DataError(f"empty or out-of-range passage region {self.region}")
        if self.answer is not None:
            s, e = self.answer
            if not lo <= s <= e < hi:
                raise DataError(f"answer {self.answer} not inside passage region {self.region}")


def span_pack(passage: Sequence[int], question: Sequence[int],
              answer: Optional[Tuple[int, int]] = None) -> SpanExample:
    """⟨SOS⟩ passage ⟨EOS⟩ question ⟨EOS⟩; ``answer`` indexes into ``passage`` (inclusive)."""
    if not passage:
        raise DataError("span extraction needs a non-empty passage")
    packed = pack_pair(passage, question, Objective.BIDIRECTIONAL)
    ans = None if answer is None else (answer[0] + 1, answer[1] + 1)
    return SpanExample(packed, (1, 1 + len(passage)), ans)


def span_logits(params: ModelParams, head: SpanHead, examples: Sequence[SpanExample],
                train_mode: bool = False, seed: int = 0, dropout: Optional[float] = None):
    """Start and end scores [B x n], with positions outside each passage set to NEG_INF."""
    batch = PackedBatch.from_inputs([e.packed for e in examples])
    h = forward(params, batch, train_mode=train_mode, seed=seed, dropout=dropout).last
    b, n, _ = h.shape
    outside = np.full((b, n), NEG_INF)
    for i, e in enumerate(examples):
        outside[i, e.region[0]:e.region[1]] = 0.0
    start = T.add_mask(T.reshape(T.matmul(h, head.start), (b, n)), outside)
    end = T.add_mask(T.reshape(T.matmul(h, head.end), (b, n)), outside)
    return start, end


def best_span(start: np.ndarray, end: np.ndarray, region: Tuple[int, int], max_span_len: int = 16) -> Tuple[int, int]:
    """Argmax of start[s] + end[e] over lo <= s <= e <= min(s + max_span_len, hi - 1).

    Ties go to the smallest (s, e) in lexicographic order.
    """
    lo, hi = region
    if not lo < hi:
        raise DataError("empty passage region")
    best, arg = -np.inf, None
    for s in range(lo, hi):
        stop = min(s + max_span_len, hi - 1)
        seg = end[s:stop + 1]
        k = int(np.argmax(seg))
        score = start[s] + seg[k]
        if score > best:
            best, arg = score, (s, s + k)
    return arg


def extract_span(params: ModelParams, head: SpanHead, example: SpanExample, max_span_len: int = 16) -> Tuple[int, int]:
    start, end = span_logits(params, head, [example])
    return best_span(start.data[0], end.data[0], example.region, max_span_len)


# ---------------------------------------------------------------------------
# seq2seq
# ---------------------------------------------------------------------------


@dataclass
class Seq2SeqExample:
    packed: PackedInput
    targets: List[Tuple[int, int]]


def mask_target(source: Sequence[int], target: Sequence[int], mask_prob: float,
                rng: np.random.Generator) -> Seq2SeqExample:
    """Pack ⟨SOS⟩ source ⟨EOS⟩ target ⟨EOS⟩ and replace target tokens (final EOS included) by MASK.

    The source is never touched.  At least one target token is always masked.
    """
    if not target:
        raise DataError("seq2seq fine-tuning needs a non-empty target")
    packed = pack_pair(source, target, Objective.SEQ2SEQ)
    s = packed.objective.source_len
    positions = np.arange(s, len(packed))
    chosen = positions[rng.random(len(positions)) < mask_prob]
    if chosen.size == 0:
        chosen = positions[[int(rng.integers(len(positions)))]]
    ids = list(packed.ids)
    targets = []
    for p in chosen:
        targets.append((int(p), ids[p]))
        ids[p] = MASK
    return Seq2SeqExample(packed.with_ids(ids), targets)


def seq2seq_loss(params: ModelParams, examples: Sequence[Seq2SeqExample], smoothing: float = 0.0,
                 train_mode: bool = False, seed: int = 0, dropout: Optional[float] = None):
    batch = PackedBatch.from_inputs([e.packed for e in examples])
    h = forward(params, batch, train_mode=train_mode, seed=seed, dropout=dropout).last
    b_idx = [b for b, e in enumerate(examples) for _ in e.targets]
    p_idx = [p for e in examples for p, _ in e.targets]
    gold = [t for e in examples for _, t in e.targets]
    logits = lm_logits(params, h, (b_idx, p_idx))
    return T.cross_entropy(logits, gold, smoothing), logits


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class Trainer:
    """Adam over base parameters plus an optional head, with the warmup/decay schedule."""

    def __init__(self, params: ModelParams, head, config: FinetuneConfig):
        self.params = params
        self.head = head
        self.config = config
        self.optimizer = Adam(config.optimizer_config())
        self.tensors: Dict[str, Tensor] = dict(params.tensors)
        if head is not None:
            self.tensors.update(head.tensors())
        self.decayed = {k: is_decayed(k, t.shape) for k, t in self.tensors.items()}
        self.step_count = 0

    def step(self, loss_fn) -> float:
        self.step_count += 1
        T.zero_grads(self.tensors.values())
        with T.Tape() as tape:
            loss = loss_fn()
        value = loss.item()
        if not math.isfinite(value):
            raise NumericFailureError(self.step_count, value)
        tape.backward(loss)
        lr = learning_rate(self.optimizer.config, self.step_count)
        self.optimizer.step(self.tensors, lr, self.decayed)
        return value


def finetune_seq2seq_step(trainer: Trainer, pairs: Sequence[Tuple[Sequence[int], Sequence[int]]],
                          rng: np.random.Generator) -> float:
    """Mask targets of a batch of (source, target) pairs and take one update."""
    cfg = trainer.config
    examples = [mask_target(s, t, cfg.target_mask_prob, rng) for s, t in pairs]
    seed = int(rng.integers(2 ** 63))
    return trainer.step(lambda: seq2seq_loss(trainer.params, examples, cfg.label_smoothing,
                                             train_mode=True, seed=seed, dropout=cfg.dropout)[0])


def _batches(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Shuffled epochs of index batches, ``steps`` batches in total."""
    order = np.array([], dtype=np.int64)
    for _ in range(steps):
        if order.size < batch_size:
            order = np.concatenate([order, rng.permutation(n)])
        yield order[:batch_size]
        order = order[batch_size:]


def train_seq2seq(params: ModelParams, pairs: Sequence[Tuple[Sequence[int], Sequence[int]]],
                  config: FinetuneConfig, seed: int = 0) -> List[float]:
    if not pairs:
        raise DataError("no training pairs")
    rng = np.random.default_rng(seed)
    trainer = Trainer(params, None, config)
    return [finetune_seq2seq_step(trainer, [pairs[i] for i in idx], rng)
            for idx in _batches(len(pairs), config.batch_size, config.steps, rng)]


def train_classifier(params: ModelParams, head: ClassifierHead, inputs: Sequence[PackedInput],
                     labels: Sequence[int], config: FinetuneConfig, seed: int = 0) -> List[float]:
    if not inputs:
        raise DataError("no training examples")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= head.n_classes:
        raise DataError(f"labels must lie in [0, {head.n_classes})")
    rng = np.random.default_rng(seed)
    trainer = Trainer(params, head, config)
    losses = []
    for idx in _batches(len(inputs), config.batch_size, config.steps, rng):
        seed_b = int(rng.integers(2 ** 63))
        batch = [inputs[i] for i in idx]
        gold = labels[idx]
        losses.append(trainer.step(lambda: T.cross_entropy(
            class_logits(params, head, batch, train_mode=True, seed=seed_b, dropout=config.dropout), gold)))
    return losses


def train_span(params: ModelParams, head: SpanHead, examples: Sequence[SpanExample],
               config: FinetuneConfig, seed: int = 0) -> List[float]:
    if not examples:
        raise DataError("no training examples")
    if any(e.answer is None for e in examples):
        raise DataError("every training example needs an answer span")
    rng = np.random.default_rng(seed)
    trainer = Trainer(params, head, config)
    losses = []
    for idx in _batches(len(examples), config.batch_size, config.steps, rng):
        seed_b = int(rng.integers(2 ** 63))
        batch = [examples[i] for i in idx]

        def loss_fn():
            start, end = span_logits(params, head, batch, train_mode=True, seed=seed_b, dropout=config.dropout)
            return T.add(T.cross_entropy(start, [e.answer[0] for e in batch]),
                         T.cross_entropy(end, [e.answer[1] for e in batch]))

        losses.append(trainer.step(loss_fn))
    return losses
