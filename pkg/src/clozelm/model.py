"""Shared Transformer: embeddings, masked self-attention stack, tied LM head."""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import CheckpointFormatError, SequenceTooLongError, ShapeError
from .masks import LMObjective, Objective, batch_masks, build_mask, AttentionMask
from .tensor import Tensor
from .tokenizer import EOS, PAD, SOS

# Segment ids double as objective identifiers: every objective owns its own rows.
SEGMENT_IDS = {
    Objective.BIDIRECTIONAL: (0, 1),
    Objective.LEFT_TO_RIGHT: (2, 2),
    Objective.RIGHT_TO_LEFT: (3, 3),
    Objective.SEQ2SEQ: (4, 5),
}
N_SEGMENTS = 6


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 200
    max_len: int = 64
    n_segments: int = N_SEGMENTS
    dropout: float = 0.1
    init_std: float = 0.02
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if min(self.d_ff, self.vocab_size, self.max_len) < 1:
            raise ValueError("d_ff, vocab_size and max_len must be positive")
        if self.n_segments < N_SEGMENTS:
            raise ValueError(f"n_segments must be >= {N_SEGMENTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


LAYER_PARAMS = ("wq", "wk", "wv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")
EMBEDDINGS = ("tok_emb", "pos_emb", "seg_emb")


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every trainable array in its fixed (checkpoint) order."""
    d, f = config.d_model, config.d_ff
    shapes = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
        "seg_emb": (config.n_segments, d),
    }
    per_layer = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d), "bo": (d,),
        "ln1_g": (d,), "ln1_b": (d,),
        "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
        "ln2_g": (d,), "ln2_b": (d,),
    }
    for layer in range(config.n_layers):
        for name in LAYER_PARAMS:
            shapes[f"layer{layer}.{name}"] = per_layer[name]
    shapes["nsp_w"] = (d, 2)
    shapes["lm_bias"] = (config.vocab_size,)
    return shapes


def is_decayed(name: str, shape: Tuple[int, ...]) -> bool:
    """Weight decay applies to projection matrices only (no biases, norms or embeddings)."""
    return len(shape) == 2 and name not in EMBEDDINGS


class ModelParams:
    """Named trainable tensors.  The LM head reuses ``tok_emb``; there is no separate output matrix."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, Tensor]):
        expected = param_shapes(config)
        if list(tensors) != list(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ShapeError(f"parameter names do not match config (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors: Dict[str, Tensor] = dict(tensors)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in param_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.endswith("_g"):
                data = np.ones(shape)
            elif leaf.startswith("b") or leaf.endswith("_b") or leaf == "lm_bias":
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, config.init_std, size=shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def layer(self, i: int) -> Dict[str, Tensor]:
        prefix = f"layer{i}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {
            k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()
        })

    def zero_grad(self) -> None:
        T.zero_grads(self.tensors.values())

    def count(self) -> int:
        return sum(v.data.size for v in self.tensors.values())


# ---------------------------------------------------------------------------
# input packing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedInput:
    """Token ids plus per-position segment ids for one packed sequence."""

    ids: Tuple[int, ...]
    segments: Tuple[int, ...]
    objective: LMObjective

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "segments", tuple(int(s) for s in self.segments))
        if len(self.ids) != len(self.segments):
            raise ShapeError(f"{len(self.ids)} ids but {len(self.segments)} segment ids")
        if not self.ids or self.ids[0] != SOS:
            raise ValueError("packed input must start with SOS")
        s = self.objective.source_len
        if s is not None:
            build_mask(self.objective, len(self.ids))  # validates 2 <= s <= n - 1
            if self.ids[s - 1] != EOS:
                raise ValueError(f"seq2seq source segment must end with EOS at position {s - 1}")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(len(self.ids))

    def mask(self) -> AttentionMask:
        return build_mask(self.objective, len(self.ids))

    def with_ids(self, ids: Sequence[int]) -> "PackedInput":
        return PackedInput(tuple(ids), self.segments, self.objective)


def pack_single(tokens: Sequence[int], objective: LMObjective) -> PackedInput:
    """⟨SOS⟩ tokens ⟨EOS⟩ under a one-segment objective."""
    seg = SEGMENT_IDS[objective.kind][0]
    ids = (SOS, *tokens, EOS)
    return PackedInput(ids, (seg,) * len(ids), objective)


def pack_pair(first: Sequence[int], second: Sequence[int], kind: Objective) -> PackedInput:
    """⟨SOS⟩ first ⟨EOS⟩ second ⟨EOS⟩ for bidirectional or seq2seq packing."""
    if kind not in (Objective.BIDIRECTIONAL, Objective.SEQ2SEQ):
        raise ValueError(f"pair packing needs a bidirectional or seq2seq objective, got {kind.value}")
    seg_a, seg_b = SEGMENT_IDS[kind]
    s = len(first) + 2
    ids = (SOS, *first, EOS, *second, EOS)
    segments = (seg_a,) * s + (seg_b,) * (len(second) + 1)
    obj = LMObjective(kind, s if kind is Objective.SEQ2SEQ else None)
    return PackedInput(ids, segments, obj)


@dataclass
class PackedBatch:
    """Right-padded batch of packed inputs with their stacked masks."""

    ids: np.ndarray        # [B, n]
    segments: np.ndarray   # [B, n]
    lengths: np.ndarray    # [B]
    mask: np.ndarray       # [B, n, n]
    inputs: Tuple[PackedInput, ...]

    @classmethod
    def from_inputs(cls, inputs: Sequence[PackedInput]) -> "PackedBatch":
        if not inputs:
            raise ValueError("empty batch")
        lengths = np.array([len(x) for x in inputs])
        n = int(lengths.max())
        ids = np.full((len(inputs), n), PAD, dtype=np.int64)
        segs = np.zeros((len(inputs), n), dtype=np.int64)
        for b, x in enumerate(inputs):
            ids[b, :len(x)] = x.ids
            segs[b, :len(x)] = x.segments
        mask = batch_masks([x.objective for x in inputs], lengths, n)
        return cls(ids, segs, lengths, mask, tuple(inputs))

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def n(self) -> int:
        return self.ids.shape[1]


@dataclass
class HiddenStates:
    """Per-layer activations; ``layers[0]`` is the summed embeddings."""

    layers: List[Tensor]

    @property
    def last(self) -> Tensor:
        return self.layers[-1]

    def __len__(self) -> int:
        return len(self.layers)


# ---------------------------------------------------------------------------
# forward computation
# ---------------------------------------------------------------------------


def _check_fits(params: ModelParams, batch: PackedBatch) -> None:
    cfg = params.config
    if batch.n > cfg.max_len:
        raise SequenceTooLongError(f"packed length {batch.n} exceeds max_len {cfg.max_len}")


def embed(params: ModelParams, batch: Union[PackedInput, PackedBatch]) -> Tensor:
    """Token + position + segment embedding sum, [B x n x d] (or [n x d] for one input)."""
    single = isinstance(batch, PackedInput)
    if single:
        batch = PackedBatch.from_inputs([batch])
    _check_fits(params, batch)
    pos = np.broadcast_to(np.arange(batch.n), batch.ids.shape)
    h = T.embedding(params["tok_emb"], batch.ids)
    h = T.add(h, T.embedding(params["pos_emb"], pos))
    h = T.add(h, T.embedding(params["seg_emb"], batch.segments))
    return T.reshape(h, h.shape[1:]) if single else h


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dk = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dk))


def self_attention(h: Tensor, mask: np.ndarray, lp: Mapping[str, Tensor], heads: int,
                   rate: float = 0.0, rng: Optional[np.random.Generator] = None,
                   eps: float = 1e-12, probs_out: Optional[list] = None) -> Tensor:
    """One masked multi-head attention sublayer with residual and post-norm, on [B x n x d]."""
    d_head = h.shape[-1] // heads
    q = _split_heads(T.matmul(h, lp["wq"]), heads)
    k = _split_heads(T.matmul(h, lp["wk"]), heads)
    v = _split_heads(T.matmul(h, lp["wv"]), heads)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d_head))
    scores = T.add_mask(scores, mask[:, None, :, :])
    probs = T.softmax_rows(scores)
    if probs_out is not None:
        probs_out.append(probs.data)
    ctx = _merge_heads(T.matmul(probs, v))
    out = T.add(T.matmul(ctx, lp["wo"]), lp["bo"])
    out = T.dropout(out, rate, rng)
    return T.layer_norm(T.add(h, out), lp["ln1_g"], lp["ln1_b"], eps)


def feed_forward(h: Tensor, lp: Mapping[str, Tensor], rate: float = 0.0,
                 rng: Optional[np.random.Generator] = None, eps: float = 1e-12) -> Tensor:
    inner = T.gelu(T.add(T.matmul(h, lp["w1"]), lp["b1"]))
    out = T.add(T.matmul(inner, lp["w2"]), lp["b2"])
    out = T.dropout(out, rate, rng)
    return T.layer_norm(T.add(h, out), lp["ln2_g"], lp["ln2_b"], eps)


def attention_layer(h: Tensor, mask: Union[AttentionMask, np.ndarray], layer_params: Mapping[str, Tensor],
                    heads: int, eps: float = 1e-12, probs_out: Optional[list] = None) -> Tensor:
    """Attention sublayer on a single [n x d] sequence (no dropout)."""
    entries = mask.entries if isinstance(mask, AttentionMask) else np.asarray(mask)
    n, d = h.shape
    if entries.shape != (n, n):
        raise ShapeError(f"mask shape {entries.shape} does not match sequence length {n}")
    out = self_attention(T.reshape(h, (1, n, d)), entries[None], layer_params, heads,
                         eps=eps, probs_out=probs_out)
    return T.reshape(out, (n, d))


def forward(params: ModelParams, inputs: Union[PackedInput, PackedBatch, Sequence[PackedInput]],
            train_mode: bool = False, seed: int = 0, dropout: Optional[float] = None) -> HiddenStates:
    """Run the embedding and all layers.

    Dropout is active only when ``train_mode`` is set and is driven entirely
    by ``seed``; ``dropout`` overrides the configured rate.  A single :class:`PackedInput` yields [n x d] activations; a
    batch yields [B x n x d].
    """
    single = isinstance(inputs, PackedInput)
    if single:
        batch = PackedBatch.from_inputs([inputs])
    elif isinstance(inputs, PackedBatch):
        batch = inputs
    else:
        batch = PackedBatch.from_inputs(list(inputs))
    cfg = params.config
    rate = (cfg.dropout if dropout is None else dropout) if train_mode else 0.0
    rng = np.random.default_rng(seed) if rate > 0 else None

    h = T.dropout(embed(params, batch), rate, rng)
    layers = [h]
    for i in range(cfg.n_layers):
        lp = params.layer(i)
        h = self_attention(h, batch.mask, lp, cfg.n_heads, rate, rng, cfg.ln_eps)
        h = feed_forward(h, lp, rate, rng, cfg.ln_eps)
        layers.append(h)
    if single:
        layers = [T.reshape(x, x.shape[1:]) for x in layers]
    return HiddenStates(layers)


def lm_logits(params: ModelParams, h: Tensor, positions) -> Tensor:
    """Tied-softmax logits ``h[pos] @ tok_emb.T + lm_bias``.

    ``positions`` is a list of row indices into an [n x d] ``h``, or a
    (batch_index, position) pair of index arrays into a [B x n x d] ``h``.
    """
    if h.ndim == 2:
        index = (np.asarray(positions, dtype=np.int64),)
    else:
        index = tuple(np.asarray(p, dtype=np.int64) for p in positions)
    rows = T.take_rows(h, index)
    logits = T.matmul(rows, T.transpose(params["tok_emb"]))
    return T.add(logits, params["lm_bias"])


def nsp_logits(params: ModelParams, h1: Tensor) -> Tensor:
    """IsNext / NotNext logits from the SOS vector(s), [2] or [B x 2]."""
    if h1.ndim == 1:
        return T.reshape(T.matmul(T.reshape(h1, (1, -1)), params["nsp_w"]), (2,))
    return T.matmul(h1, params["nsp_w"])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"CLZLMCK\x01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    meta: dict
    extras: Dict[str, np.ndarray]


def save_checkpoint(params: ModelParams, config: ModelConfig, path: Union[str, Path],
                    meta: Optional[Mapping] = None, extras: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """Write magic, a length-prefixed JSON header, then raw little-endian float64 arrays.

    Arrays follow ``param_shapes(config)`` order, then ``extras`` in insertion
    order (fine-tuning heads, optimizer moments).
    """
    extras = dict(extras or {})
    arrays = [(name, params[name].data) for name in param_shapes(config)]
    arrays += [(name, np.asarray(a, dtype=np.float64)) for name, a in extras.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "params": [name for name in param_shapes(config)],
        "extras": [[name, list(a.shape)] for name, a in arrays[len(params.tensors):]],
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path: Union[str, Path], expect: Optional[ModelConfig] = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes, not a checkpoint")
    try:
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {header.get('format_version')!r}")
    try:
        config = ModelConfig.from_dict(header["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: invalid config ({exc})") from exc
    if expect is not None and expect != config:
        diff = {k: (v, getattr(config, k)) for k, v in expect.to_dict().items() if getattr(config, k) != v}
        raise CheckpointFormatError(f"{path}: config mismatch (expected, found): {diff}")
    shapes = param_shapes(config)
    if header["params"] != list(shapes):
        raise CheckpointFormatError(f"{path}: parameter list does not match its config")
    offset = 16 + hlen
    tensors = {}
    for name, shape in shapes.items():
        a, offset = _take(raw, offset, shape, path)
        tensors[name] = Tensor(a, requires_grad=True, name=name)
    extras = {}
    for name, shape in header["extras"]:
        extras[name], offset = _take(raw, offset, tuple(shape), path)
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(ModelParams(config, tensors), config, header["meta"], extras)


def _take(raw: bytes, offset: int, shape: Tuple[int, ...], path) -> Tuple[np.ndarray, int]:
    count = int(np.prod(shape, dtype=np.int64))
    end = offset + 8 * count
    if end > len(raw):
        raise CheckpointFormatError(f"{path}: truncated data")
    a = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
    return a, end


def load_checkpoint(path: Union[str, Path], expect: Optional[ModelConfig] = None) -> Tuple[ModelParams, ModelConfig]:
    ckpt = read_checkpoint(path, expect)
    return ckpt.params, ckpt.config


def component_counts(params: ModelParams) -> Dict[str, int]:
    """Parameter counts grouped as embeddings / layerN / heads."""
    counts: Dict[str, int] = {}
    for name, t in params.items():
        if name in EMBEDDINGS:
            group = "embeddings"
        elif name.startswith("layer"):
            group = name.split(".", 1)[0]
        else:
            group = "heads"
        counts[group] = counts.get(group, 0) + t.data.size
    counts["total"] = params.count()
    return counts
