"""Independent oracles shared by the test modules."""
import itertools

import numpy as np

H = 1e-5


def numerical_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|) over entries whose magnitude reaches ``floor``.

    Entries where both values are below ``floor`` are compared absolutely instead.
    """
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (scale < floor) & (diff < floor)
    rel = np.where(ok, 0.0, diff / np.where(scale == 0, 1.0, scale))
    return float(rel.max()) if rel.size else 0.0


def brute_force_lcs(a, b) -> int:
    if not a or not b:
        return 0
    if a[0] == b[0]:
        return 1 + brute_force_lcs(a[1:], b[1:])
    return max(brute_force_lcs(a[1:], b), brute_force_lcs(a, b[1:]))


def brute_force_span(start, end, lo, hi, max_span_len):
    best, arg = -np.inf, None
    for s, e in itertools.product(range(lo, hi), repeat=2):
        if s <= e <= s + max_span_len and start[s] + end[e] > best:
            best, arg = start[s] + end[e], (s, e)
    return arg


def brute_force_best_sequence(logprob_fn, vocab, max_len, eos):
    """Highest-scoring sequence among all that end in ``eos`` or reach ``max_len``.

    ``vocab`` is a vocabulary size or an explicit list of candidate tokens.
    """
    tokens = range(vocab) if isinstance(vocab, int) else list(vocab)
    best, arg = -np.inf, None

    def walk(prefix, score):
        nonlocal best, arg
        if prefix and (prefix[-1] == eos or len(prefix) == max_len):
            if score > best:
                best, arg = score, prefix
            return
        row = logprob_fn(prefix)
        for tok in tokens:
            walk(prefix + (tok,), score + row[tok])

    walk((), 0.0)
    return arg, best


def brute_force_lcs_subsets(a, b) -> int:
    """Longest subsequence of ``a`` (by enumerating all 2^|a| of them) that is also a subsequence of ``b``."""
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        if len(sub) <= best:
            continue
        it = iter(b)
        if all(ch in it for ch in sub):
            best = len(sub)
    return best
