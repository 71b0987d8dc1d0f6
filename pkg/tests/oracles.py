"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def edit_distance_recursive(a, b) -> int:
    """Plain recursive Levenshtein definition (memoised on suffix positions)."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return go(i + 1, j + 1)
        return 1 + min(go(i + 1, j + 1), go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def all_sequences(vocab, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(vocab, repeat=n)


def ctc_collapse_ids(path, blank=0):
    out, prev = [], None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


@lru_cache(maxsize=16)
def _all_paths(K: int, T: int) -> np.ndarray:
    return np.array(list(itertools.product(range(K), repeat=T)), dtype=np.int64).reshape(-1, T)


def ctc_brute_force_logprob(logp: np.ndarray, labels, blank: int = 0) -> float:
    """log P(labels) by summing every length-T path that collapses to `labels`."""
    T, K = logp.shape
    labels = np.asarray(labels, dtype=np.int64)
    L = len(labels)
    paths = _all_paths(K, T)
    prev = np.concatenate([np.full((len(paths), 1), -1), paths[:, :-1]], axis=1)
    keep = (paths != blank) & (paths != prev)
    ok = keep.sum(1) == L
    if L:
        pos = np.clip(np.cumsum(keep, axis=1) - 1, 0, L - 1)
        ok &= np.all(~keep | (labels[pos] == paths), axis=1)
    if not ok.any():
        return -math.inf
    scores = logp[np.arange(T)[None, :], paths[ok]].sum(1)
    return float(np.logaddexp.reduce(scores))


def ctc_labeling_marginals(logp: np.ndarray) -> dict:
    """Map every labeling reachable in T frames to its total path log-probability."""
    T, K = logp.shape
    out: dict = {}
    for path in itertools.product(range(K), repeat=T):
        lab = ctc_collapse_ids(path)
        s = float(sum(logp[t, k] for t, k in enumerate(path)))
        out[lab] = np.logaddexp(out.get(lab, -math.inf), s)
    return out


def random_log_posteriors(rng, T, K, scale=2.0):
    z = rng.standard_normal((T, K)) * scale
    z -= z.max(1, keepdims=True)
    return z - np.log(np.exp(z).sum(1, keepdims=True))
