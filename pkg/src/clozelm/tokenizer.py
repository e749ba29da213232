"""Greedy frequency-merge subword vocabulary and longest-match tokenization."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from .errors import DataError

PAD, UNK, SOS, EOS, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("⟨PAD⟩", "⟨UNK⟩", "⟨SOS⟩", "⟨EOS⟩", "⟨MASK⟩")
N_RESERVED = len(SPECIAL_TOKENS)
MIN_VOCAB_SIZE = N_RESERVED + 1


@dataclass(frozen=True)
class TokenSequence:
    ids: List[int]
    source_text: Optional[str] = None

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


class Vocab:
    """Token <-> id map with the five reserved ids at the front.

    Corpus text is only ever matched against the non-reserved entries, so a
    literal "⟨MASK⟩" in the input is spelled out character by character.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:N_RESERVED]) != SPECIAL_TOKENS:
            raise DataError(f"vocab must start with the reserved tokens {SPECIAL_TOKENS}")
        if len(tokens) < MIN_VOCAB_SIZE:
            raise DataError(f"vocab needs at least {MIN_VOCAB_SIZE} entries, got {len(tokens)}")
        body = tokens[N_RESERVED:]
        if len(set(body)) != len(body) or any(not t for t in body):
            raise DataError("vocab entries must be unique non-empty strings")
        self.id_to_token: List[str] = tokens
        self.token_to_id: Dict[str, int] = {t: i + N_RESERVED for i, t in enumerate(body)}
        self.max_token_len = max(len(t) for t in body)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.id_to_token, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DataError(f"{path}: vocab file must be a JSON array of strings")
        return cls(tokens)


def _greedy_split(text: str, pieces: Dict[str, int], max_len: int) -> List[str]:
    out = []
    i, n = 0, len(text)
    while i < n:
        for k in range(min(max_len, n - i), 0, -1):
            piece = text[i:i + k]
            if piece in pieces:
                out.append(piece)
                i += k
                break
        else:
            out.append(text[i])
            i += 1
    return out


def build_vocab(corpus: Union[str, Iterable[str]], target_size: int) -> Vocab:
    """Build a vocabulary of at most ``target_size`` entries.

    Characters enter first in descending frequency; remaining slots are
    filled by repeatedly merging the most frequent adjacent token pair under
    greedy longest-match segmentation.  Ties break lexicographically, so the
    result depends only on the corpus and the size.  Each line is a separate
    document; newlines are never part of a token.
    """
    if target_size < MIN_VOCAB_SIZE:
        raise ValueError(f"target_size must be >= {MIN_VOCAB_SIZE}, got {target_size}")
    if isinstance(corpus, str):
        corpus = corpus.splitlines()
    docs = [line for line in corpus if line]
    if not docs:
        raise DataError("cannot build a vocabulary from an empty corpus")

    char_counts = Counter(ch for doc in docs for ch in doc)
    budget = target_size - N_RESERVED
    chars = sorted(char_counts, key=lambda c: (-char_counts[c], c))[:budget]
    pieces: Dict[str, int] = {c: 1 for c in chars}
    order = list(chars)
    max_len = 1

    while len(order) < budget:
        pairs: Counter = Counter()
        for doc in docs:
            toks = _greedy_split(doc, pieces, max_len)
            pairs.update(
                a + b for a, b in zip(toks, toks[1:]) if a in pieces and b in pieces
            )
        candidates = [(-c, p) for p, c in pairs.items() if p not in pieces]
        if not candidates:
            break
        _, best = min(candidates)
        pieces[best] = 1
        order.append(best)
        max_len = max(max_len, len(best))

    return Vocab(list(SPECIAL_TOKENS) + order)


def encode(vocab: Vocab, text: str) -> TokenSequence:
    """Greedy longest-match, left to right; unknown characters become UNK."""
    ids = []
    table = vocab.token_to_id
    i, n = 0, len(text)
    while i < n:
        for k in range(min(vocab.max_token_len, n - i), 0, -1):
            tid = table.get(text[i:i + k])
            if tid is not None:
                ids.append(tid)
                i += k
                break
        else:
            ids.append(UNK)
            i += 1
    return TokenSequence(ids, text)


def decode(vocab: Vocab, ids: Union[TokenSequence, Sequence[int]]) -> str:
    """Concatenate token strings; reserved ids render as their ⟨...⟩ names."""
    table = vocab.id_to_token
    size = len(table)
    out = []
    for i in ids:
        if not 0 <= i < size:
            raise IndexError(f"token id {i} out of range for vocabulary of {size}")
        out.append(table[i])
    return "".join(out)
