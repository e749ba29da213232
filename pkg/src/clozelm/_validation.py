"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .errors import DataError


def check_texts(X, name: str = "X") -> List[str]:
    """A non-empty sequence of strings (a bare string is rejected, not iterated)."""
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of strings, not a single string")
    if isinstance(X, np.ndarray):
        X = X.ravel().tolist()
    texts = list(X)
    if not texts:
        raise DataError(f"{name} is empty")
    bad = [i for i, t in enumerate(texts) if not isinstance(t, str)]
    if bad:
        raise TypeError(f"{name}[{bad[0]}] is {type(texts[bad[0]]).__name__}, expected str")
    return texts


def check_pairs(X, name: str = "X") -> List[Tuple[str, str]]:
    """Sequence of (str, str) pairs, e.g. (passage, question)."""
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of pairs")
    pairs = [tuple(x) for x in X]
    if not pairs:
        raise DataError(f"{name} is empty")
    for i, p in enumerate(pairs):
        if len(p) != 2 or not all(isinstance(s, str) for s in p):
            raise TypeError(f"{name}[{i}] must be a pair of strings")
    return pairs


def check_same_length(a: Sequence, b: Sequence, names=("X", "y")) -> None:
    if len(a) != len(b):
        raise ValueError(f"{names[0]} has {len(a)} entries but {names[1]} has {len(b)}")
