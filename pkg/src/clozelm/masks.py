"""Additive self-attention masks, one per language-modelling objective.

Entry (i, j) is 0 when query position i may attend to key position j and
``NEG_INF`` otherwise.  Rows are queries.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidSegmentationError
from .tensor import DTYPE, NEG_INF


class Objective(enum.Enum):
    BIDIRECTIONAL = "bidirectional"
    LEFT_TO_RIGHT = "l2r"
    RIGHT_TO_LEFT = "r2l"
    SEQ2SEQ = "seq2seq"


@dataclass(frozen=True)
class LMObjective:
    """An objective plus, for seq2seq, the source length.

    ``source_len`` counts tokens up to and including the first EOS, i.e.
    SOS + source tokens + EOS.
    """

    kind: Objective
    source_len: Optional[int] = None

    def __post_init__(self):
        if self.kind is Objective.SEQ2SEQ:
            if self.source_len is None:
                raise InvalidSegmentationError("seq2seq objective needs a source length")
        elif self.source_len is not None:
            raise ValueError(f"{self.kind.value} objective takes no source length")

    @classmethod
    def bidirectional(cls) -> "LMObjective":
        return cls(Objective.BIDIRECTIONAL)

    @classmethod
    def left_to_right(cls) -> "LMObjective":
        return cls(Objective.LEFT_TO_RIGHT)

    @classmethod
    def right_to_left(cls) -> "LMObjective":
        return cls(Objective.RIGHT_TO_LEFT)

    @classmethod
    def seq2seq(cls, source_len: int) -> "LMObjective":
        return cls(Objective.SEQ2SEQ, source_len)

    def __str__(self) -> str:
        if self.kind is Objective.SEQ2SEQ:
            return f"seq2seq(s={self.source_len})"
        return self.kind.value


class AttentionMask:
    """An n x n additive mask whose entries are 0 (allowed) or NEG_INF (denied)."""

    __slots__ = ("entries",)

    def __init__(self, entries: np.ndarray):
        entries = np.asarray(entries, dtype=DTYPE)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"mask must be square, got shape {entries.shape}")
        self.entries = entries

    @classmethod
    def from_allowed(cls, allow: np.ndarray) -> "AttentionMask":
        return cls(np.where(allow, 0.0, NEG_INF))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def allow(self) -> np.ndarray:
        """Boolean matrix, True where attention is permitted."""
        return self.entries == 0.0

    def __eq__(self, other) -> bool:
        return isinstance(other, AttentionMask) and np.array_equal(self.entries, other.entries)

    def render(self) -> str:
        """ASCII grid, one row per query: '·' allowed, 'x' denied."""
        return "\n".join("".join("·" if a else "x" for a in row) for row in self.allow)


def allowed_matrix(obj: LMObjective, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    kind = obj.kind
    if kind is Objective.BIDIRECTIONAL:
        return np.ones((n, n), dtype=bool)
    if kind is Objective.LEFT_TO_RIGHT:
        return j <= i
    if kind is Objective.RIGHT_TO_LEFT:
        return j >= i
    s = obj.source_len
    if not 2 <= s <= n - 1:
        raise InvalidSegmentationError(f"seq2seq source length {s} outside [2, {n - 1}] for n={n}")
    return (j < s) | ((i >= s) & (j <= i))


def build_mask(obj: LMObjective, n: int) -> AttentionMask:
    return AttentionMask.from_allowed(allowed_matrix(obj, n))


def allowed(mask: AttentionMask, i: int, j: int) -> bool:
    n = mask.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"position ({i}, {j}) outside a {n}x{n} mask")
    return bool(mask.entries[i, j] == 0.0)


def reachable(mask: AttentionMask, depth: int) -> np.ndarray:
    """Positions whose input can influence each output after ``depth`` layers.

    Row i of the result is True at j when token j lies in the ``depth``-fold
    composition of the allow relation starting from i.  Depth 0 is the
    identity (embeddings only).
    """
    allow = mask.allow.astype(np.int64)
    reach = np.eye(mask.n, dtype=np.int64)
    for _ in range(depth):
        reach = np.minimum(reach @ allow, 1)
    return reach.astype(bool)


def batch_masks(objectives: Sequence[LMObjective], lengths: Sequence[int], n: int) -> np.ndarray:
    """Stack per-example masks into a padded [B x n x n] additive array.

    Real positions never attend to padding; each padding query attends only
    to itself so its softmax row stays well defined.
    """
    out = np.full((len(lengths), n, n), NEG_INF, dtype=DTYPE)
    diag = np.arange(n)
    for b, (obj, length) in enumerate(zip(objectives, lengths)):
        out[b, :length, :length] = build_mask(obj, length).entries
        out[b, diag[length:], diag[length:]] = 0.0
    return out
