"""Readers for the fine-tuning file formats and plain line files."""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from .errors import DataError
from .finetune import SpanExample, span_pack
from .tokenizer import UNK, Vocab, encode

PathLike = Union[str, Path]


def read_lines(path: PathLike) -> List[str]:
    """UTF-8 lines without their newline characters."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 ({exc})") from exc
    return text.splitlines()


def _tsv_rows(path: PathLike) -> List[Tuple[int, str, str]]:
    rows = []
    for lineno, line in enumerate(read_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
        rows.append((lineno, parts[0], parts[1]))
    if not rows:
        raise DataError(f"{path}: no examples")
    return rows


def read_seq2seq_tsv(path: PathLike) -> List[Tuple[str, str]]:
    """(source, target) pairs."""
    return [(a, b) for _, a, b in _tsv_rows(path)]


def read_classify_tsv(path: PathLike) -> Tuple[List[str], List[str]]:
    """(texts, labels) with labels kept as strings."""
    rows = _tsv_rows(path)
    return [a for _, a, _ in rows], [b.strip() for _, _, b in rows]


def read_span_jsonl(path: PathLike) -> List[dict]:
    """Records {passage, question, answer_start, answer_end}, answer given as character offsets [start, end)."""
    out = []
    for lineno, line in enumerate(read_lines(path), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        missing = {"passage", "question", "answer_start", "answer_end"} - set(rec)
        if missing:
            raise DataError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        s, e = rec["answer_start"], rec["answer_end"]
        if not (isinstance(s, int) and isinstance(e, int) and 0 <= s < e <= len(rec["passage"])):
            raise DataError(f"{path}:{lineno}: answer offsets [{s}, {e}) do not fit the passage")
        out.append(rec)
    if not out:
        raise DataError(f"{path}: no examples")
    return out


def encode_span_record(vocab: Vocab, passage: str, question: str,
                       answer: Optional[Tuple[int, int]] = None) -> Tuple[SpanExample, List[str]]:
    """Encode a passage so that a character-offset answer falls on token boundaries.

    The passage is encoded as three pieces (before, answer, after).  Returns
    the example and the source text covered by each passage token, so a
    predicted token span maps back to a substring of the passage.
    """
    pieces = [passage] if answer is None else [passage[:answer[0]], passage[answer[0]:answer[1]], passage[answer[1]:]]
    ids: List[int] = []
    surface: List[str] = []
    bounds = []
    for piece in pieces:
        start = len(ids)
        pos = 0
        for i in encode(vocab, piece).ids:
            width = 1 if i == UNK else len(vocab.id_to_token[i])
            surface.append(piece[pos:pos + width])
            pos += width
            ids.append(i)
        bounds.append((start, len(ids)))
    span = None
    if answer is not None:
        lo, hi = bounds[1]
        span = (lo, hi - 1)
    return span_pack(ids, encode(vocab, question).ids, span), surface
