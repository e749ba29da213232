"""scikit-learn style wrappers around pretraining, fine-tuning and decoding.

Each estimator takes plain strings.  The downstream estimators start from
``base``: a fitted :class:`ClozePretrainer` or the path of a pretraining
checkpoint.  The base weights are copied, never modified in place.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from ._validation import check_pairs, check_same_length, check_texts
from .data_io import encode_span_record
from .decode import DecodeConfig, beam_search
from .errors import DataError
from .finetune import (ClassifierHead, FinetuneConfig, SpanHead, class_logits, classify_pack, extract_span,
                       train_classifier, train_seq2seq, train_span)
from .model import ModelConfig, ModelParams, PackedBatch, forward, read_checkpoint, save_checkpoint
from .optim import OptimizerConfig
from .pretrain import Corpus, PretrainSettings, pretrain_loop
from .tokenizer import EOS, Vocab, build_vocab, decode, encode


class ClozePretrainer(TransformerMixin, BaseEstimator):
    """Build a vocabulary and pretrain a shared Transformer on documents (one string each).

    ``transform`` returns the final-layer vector at the ⟨SOS⟩ position of
    each text under bidirectional attention, shape (n_samples, d_model).
    """

    def __init__(self, vocab_size=200, n_layers=2, d_model=64, n_heads=4, d_ff=256, max_len=64,
                 dropout=0.1, steps=2000, batch_size=16, peak_lr=1e-3, warmup_steps=50, seed=0):
        self.vocab_size = vocab_size
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.max_len = max_len
        self.dropout = dropout
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.seed = seed

    def fit(self, X, y=None):
        docs = check_texts(X)
        self.vocab_ = build_vocab(docs, self.vocab_size)
        self.config_ = ModelConfig(n_layers=self.n_layers, d_model=self.d_model, n_heads=self.n_heads,
                                   d_ff=self.d_ff, vocab_size=len(self.vocab_), max_len=self.max_len,
                                   dropout=self.dropout)
        opt = OptimizerConfig(peak_lr=self.peak_lr, warmup_steps=min(self.warmup_steps, self.steps),
                              total_steps=max(self.steps, 1))
        res = pretrain_loop(Corpus.from_lines(docs, self.vocab_), self.vocab_, self.config_, opt, self.steps,
                            seed=self.seed, settings=PretrainSettings(batch_size=self.batch_size))
        self.params_ = res.params
        self.history_ = res.history
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        texts = check_texts(X)
        packed = [classify_pack(encode(self.vocab_, t).ids[:self.max_len - 3]) for t in texts]
        h = forward(self.params_, PackedBatch.from_inputs(packed)).last.data
        return h[:, 0, :].copy()

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(self.params_, self.config_, path, meta={"vocab": self.vocab_.id_to_token})


def _load_base(base) -> Tuple[ModelParams, Vocab]:
    if isinstance(base, ClozePretrainer):
        check_is_fitted(base, "params_")
        return base.params_.copy(), base.vocab_
    if isinstance(base, (str, Path)):
        ckpt = read_checkpoint(base)
        if "vocab" not in ckpt.meta:
            raise DataError(f"{base}: checkpoint carries no vocabulary")
        return ckpt.params, Vocab(ckpt.meta["vocab"])
    raise TypeError("base must be a fitted ClozePretrainer or a checkpoint path")


class _Downstream(BaseEstimator):
    def _setup(self):
        self.params_, self.vocab_ = _load_base(self.base)
        return self.params_.config.max_len


class ClozeClassifier(ClassifierMixin, _Downstream):
    """Softmax head on the ⟨SOS⟩ vector, fine-tuned together with the base model."""

    def __init__(self, base=None, steps=50, batch_size=16, lr=1e-3, dropout=0.1, seed=0):
        self.base = base
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.seed = seed

    def _pack(self, texts):
        return [classify_pack(encode(self.vocab_, t).ids[:self.params_.config.max_len - 3]) for t in texts]

    def fit(self, X, y):
        texts = check_texts(X)
        check_same_length(texts, y)
        self._setup()
        self.classes_, labels = np.unique(np.asarray(y), return_inverse=True)
        if len(self.classes_) < 2:
            raise DataError("need at least two classes")
        cfg = FinetuneConfig(mode="classify", steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                             dropout=self.dropout, n_classes=len(self.classes_))
        self.head_ = ClassifierHead.init(self.params_.config.d_model, len(self.classes_), seed=self.seed)
        self.loss_curve_ = train_classifier(self.params_, self.head_, self._pack(texts), labels, cfg, seed=self.seed)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "head_")
        logits = class_logits(self.params_, self.head_, self._pack(check_texts(X))).data
        return T.softmax_rows(T.Tensor(logits)).data

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class ClozeSpanExtractor(_Downstream):
    """Start/end pointer over passage tokens.

    ``X`` holds (passage, question) pairs and ``y`` (start, end) character
    offsets into the passage, end exclusive.  ``predict`` returns answer strings.
    """

    def __init__(self, base=None, steps=200, batch_size=16, lr=1e-3, dropout=0.1, max_span_len=16, seed=0):
        self.base = base
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.max_span_len = max_span_len
        self.seed = seed

    def fit(self, X, y):
        pairs = check_pairs(X)
        check_same_length(pairs, y)
        max_len = self._setup()
        examples = []
        for (passage, question), (s, e) in zip(pairs, y):
            if not 0 <= s < e <= len(passage):
                raise DataError(f"answer offsets [{s}, {e}) do not fit a passage of {len(passage)} characters")
            ex, _ = encode_span_record(self.vocab_, passage, question, (int(s), int(e)))
            if len(ex.packed) > max_len:
                raise DataError(f"packed example of {len(ex.packed)} tokens exceeds max_len {max_len}")
            examples.append(ex)
        cfg = FinetuneConfig(mode="span", steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                             dropout=self.dropout, max_span_len=self.max_span_len)
        self.head_ = SpanHead.init(self.params_.config.d_model, seed=self.seed)
        self.loss_curve_ = train_span(self.params_, self.head_, examples, cfg, seed=self.seed)
        return self

    def predict(self, X) -> List[str]:
        check_is_fitted(self, "head_")
        out = []
        for passage, question in check_pairs(X):
            ex, surface = encode_span_record(self.vocab_, passage, question)
            s, e = extract_span(self.params_, self.head_, ex, self.max_span_len)
            out.append("".join(surface[s - 1:e]))
        return out


class ClozeGenerator(_Downstream):
    """Seq2seq fine-tuning by target masking; ``predict`` decodes with beam search."""

    def __init__(self, base=None, steps=300, batch_size=16, lr=1e-3, dropout=0.1, target_mask_prob=0.7,
                 label_smoothing=0.1, beam_size=5, max_out_len=32, block_ngram=3, seed=0):
        self.base = base
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.target_mask_prob = target_mask_prob
        self.label_smoothing = label_smoothing
        self.beam_size = beam_size
        self.max_out_len = max_out_len
        self.block_ngram = block_ngram
        self.seed = seed

    def fit(self, X, y):
        src, tgt = check_texts(X), check_texts(y, "y")
        check_same_length(src, tgt)
        max_len = self._setup()
        pairs = []
        for s, t in zip(src, tgt):
            a, b = encode(self.vocab_, s).ids, encode(self.vocab_, t).ids
            if not a or not b:
                raise DataError("empty source or target")
            if len(a) + len(b) + 3 > max_len:
                raise DataError(f"pair of {len(a)} + {len(b)} tokens does not fit max_len {max_len}")
            pairs.append((a, b))
        cfg = FinetuneConfig(mode="seq2seq", steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                             dropout=self.dropout, target_mask_prob=self.target_mask_prob,
                             label_smoothing=self.label_smoothing)
        self.loss_curve_ = train_seq2seq(self.params_, pairs, cfg, seed=self.seed)
        return self

    def predict(self, X) -> List[str]:
        check_is_fitted(self, "loss_curve_")
        dc = DecodeConfig(beam_size=self.beam_size, max_out_len=self.max_out_len, block_ngram=self.block_ngram)
        out = []
        for s in check_texts(X):
            ids = list(beam_search(self.params_, encode(self.vocab_, s).ids, dc).ids)
            if ids and ids[-1] == EOS:
                ids.pop()
            out.append(decode(self.vocab_, ids))
        return out
