"""Synthetic transcript corruption: deletions, soundalike/spelled-like swaps,
repetitions and timestamp-edge errors, in random and full modes."""
from __future__ import annotations

import dataclasses
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import keyed_rng
from .synth import CharsetError, Utterance, is_charset_valid

_SOUNDEX_CODES = {
    **dict.fromkeys("bfpv", "1"),
    **dict.fromkeys("cgjkqsxz", "2"),
    **dict.fromkeys("dt", "3"),
    "l": "4",
    **dict.fromkeys("mn", "5"),
    "r": "6",
}

SOUNDALIKE, SPELLED_LIKE = "soundalike", "spelled_like"


@dataclass(frozen=True)
class CorruptionConfig:
    mode: str = "random"
    p_delete: float = 0.05
    p_substitute: float = 0.20
    p_repeat: float = 0.05
    p_timestamp: float = 0.50
    edge_words_min: int = 1
    edge_words_max: int = 3
    substitute_soundalike_ratio: float = 0.5
    seed: int = 0
    min_one_mistake: bool = True  # test hook; random mode only

    def __post_init__(self):
        if self.mode not in ("random", "full"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")
        for name in ("p_delete", "p_substitute", "p_repeat", "p_timestamp", "substitute_soundalike_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not 0 <= self.edge_words_min <= self.edge_words_max:
            raise ValueError("need 0 <= edge_words_min <= edge_words_max")


def phonetic_key(word: str) -> str:
    """Four-character Soundex code, e.g. ``professor`` -> ``P612``."""
    if not is_charset_valid(word):
        raise CharsetError(f"invalid word {word!r}")
    letters = [c for c in word if c.isalpha()]
    if not letters:
        raise CharsetError(f"word {word!r} has no letters")
    first = letters[0]
    digits = []
    prev = _SOUNDEX_CODES.get(first)
    for c in letters[1:]:
        code = _SOUNDEX_CODES.get(c)
        if code is None:
            # h and w do not separate equal codes; vowels do
            if c not in "hw":
                prev = None
            continue
        if code != prev:
            digits.append(code)
        prev = code
    return (first.upper() + "".join(digits) + "000")[:4]


def damerau_levenshtein(a: str, b: str, bound: int | None = None) -> int:
    """Optimal-string-alignment distance; returns ``bound + 1`` early once exceeded."""
    n, m = len(a), len(b)
    if bound is not None and abs(n - m) > bound:
        return bound + 1
    prev2 = None
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            v = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                v = min(v, prev2[j - 2] + 1)
            cur[j] = v
        if bound is not None and min(cur) > bound:
            return bound + 1
        prev2, prev = prev, cur
    return prev[m]


def mutations(word: str) -> list[str]:
    """Rule-based misspellings, used when the index has no neighbors."""
    out = []
    for i in range(len(word)):
        out.append(word[:i] + word[i] + word[i:])  # duplicate a letter
        if len(word) > 1:
            out.append(word[:i] + word[i + 1 :])  # drop a letter
        if i + 1 < len(word) and word[i] != word[i + 1]:
            out.append(word[:i] + word[i + 1] + word[i] + word[i + 2 :])
    for suf in ("e", "s"):
        out.append(word + suf)
        if word.endswith(suf) and len(word) > 1:
            out.append(word[:-1])
    seen, uniq = set(), []
    for w in out:
        if w != word and w not in seen and is_charset_valid(w) and w.strip("'"):
            seen.add(w)
            uniq.append(w)
    return uniq


class NeighborIndex:
    """Offline soundalike / spelled-like lookup over a fixed vocabulary."""

    def __init__(self, vocab: Iterable[str]):
        words = sorted({w for w in vocab if is_charset_valid(w) and any(c.isalpha() for c in w)})
        self.vocab: tuple[str, ...] = tuple(words)
        self.phonetic_buckets: dict[str, list[str]] = defaultdict(list)
        self.by_first_letter: dict[str, dict[int, list[str]]] = defaultdict(lambda: defaultdict(list))
        for w in words:
            self.phonetic_buckets[phonetic_key(w)].append(w)
            self.by_first_letter[w[0]][len(w)].append(w)
        self.phonetic_buckets = dict(self.phonetic_buckets)
        self._cache: dict[tuple[str, str], list[str]] = {}

    @classmethod
    def from_file(cls, path) -> "NeighborIndex":
        return cls(load_vocab(path))

    def __len__(self) -> int:
        return len(self.vocab)

    def _soundalike(self, word: str) -> list[str]:
        return [w for w in self.phonetic_buckets.get(phonetic_key(word), ()) if w != word]

    def _spelled_like(self, word: str) -> list[str]:
        out = []
        by_len = self.by_first_letter.get(word[0], {})
        for length in range(max(1, len(word) - 2), len(word) + 3):
            for w in by_len.get(length, ()):
                if w != word and damerau_levenshtein(word, w, bound=2) <= 2:
                    out.append(w)
        return out

    def neighbors(self, word: str, kind: str) -> list[str]:
        key = (word, kind)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if kind == SOUNDALIKE:
            primary, other = self._soundalike(word), self._spelled_like
        elif kind == SPELLED_LIKE:
            primary, other = self._spelled_like(word), self._soundalike
        else:
            raise ValueError(f"unknown neighbor kind {kind!r}")
        result = primary or other(word) or mutations(word)
        self._cache[key] = result
        return result


def neighbors(word: str, index: NeighborIndex, kind: str) -> list[str]:
    return index.neighbors(word, kind)


def load_vocab(path=None) -> list[str]:
    """One lowercase word per line; defaults to the bundled English list."""
    if path is None:
        text = resources.files("wspbench").joinpath("data/words.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return [w.strip() for w in text.splitlines() if w.strip()]


@dataclass
class CorruptionTrace:
    deleted: int = 0
    substituted: int = 0
    repeated: int = 0
    n_words: int = 0
    timestamp: bool = False
    forced: bool = False

    @property
    def surviving(self) -> int:
        return self.n_words - self.deleted


def _substitute(word, cfg, index, rng) -> str:
    kind = SOUNDALIKE if rng.random() < cfg.substitute_soundalike_ratio else SPELLED_LIKE
    cands = index.neighbors(word, kind)
    return cands[int(rng.integers(len(cands)))]


def corrupt_tokens(tokens: Sequence[str], cfg: CorruptionConfig, index: NeighborIndex, rng, trace=None):
    if not tokens:
        raise ValueError("cannot corrupt an empty utterance")
    trace = trace if trace is not None else CorruptionTrace()
    trace.n_words += len(tokens)
    out: list[str] = []
    for w in tokens:
        if rng.random() < cfg.p_delete:
            trace.deleted += 1
            continue
        if cfg.mode == "full" or rng.random() < cfg.p_substitute:
            w = _substitute(w, cfg, index, rng)
            trace.substituted += 1
        out.append(w)
        if rng.random() < cfg.p_repeat:
            out.append(w)
            trace.repeated += 1

    if rng.random() < cfg.p_timestamp and index.vocab:
        trace.timestamp = True
        side = int(rng.integers(3))  # 0 head, 1 tail, 2 both
        for edge, on in (("head", side in (0, 2)), ("tail", side in (1, 2))):
            if not on:
                continue
            k = int(rng.integers(cfg.edge_words_min, cfg.edge_words_max + 1))
            if rng.random() < 0.5:
                out = out[k:] if edge == "head" else out[: max(0, len(out) - k)]
            else:
                extra = [index.vocab[int(i)] for i in rng.integers(len(index.vocab), size=k)]
                out = extra + out if edge == "head" else out + extra

    if cfg.mode == "random" and cfg.min_one_mistake and list(out) == list(tokens):
        i = int(rng.integers(len(out)))
        out[i] = _substitute(out[i], cfg, index, rng)
        trace.forced = True

    if not out:
        src = index.vocab if index.vocab else tokens
        out = [_substitute(src[int(rng.integers(len(src)))], cfg, index, rng)]
    return out


def corrupt_utterance(utt: Utterance, cfg: CorruptionConfig, index: NeighborIndex, rng, trace=None) -> Utterance:
    """Corrupt the transcript of one utterance; audio and time span are left alone."""
    return dataclasses.replace(utt, tokens=corrupt_tokens(utt.tokens, cfg, index, rng, trace))


def corrupted_ids(ids: Sequence[str], fraction: float, seed: int) -> set[str]:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    n = int(round(fraction * len(ids)))
    rng = keyed_rng(seed, "select")
    pick = rng.choice(len(ids), size=n, replace=False) if n else []
    return {ids[i] for i in pick}


def corrupt_corpus(corpus: Sequence[Utterance], cfg: CorruptionConfig, fraction: float,
                   seed: int, index: NeighborIndex | None = None) -> list[Utterance]:
    """Corrupt exactly ``round(fraction * N)`` utterances chosen by seeded sampling.

    Each chosen utterance draws from its own stream keyed by (seed, id), so the
    output for an utterance does not depend on the rest of the corpus.
    """
    if index is None:
        index = NeighborIndex(load_vocab())
    chosen = corrupted_ids([u.id for u in corpus], fraction, seed)
    out = []
    for u in corpus:
        if u.id in chosen:
            out.append(corrupt_utterance(u, cfg, index, keyed_rng(seed, "corrupt", u.id)))
        else:
            out.append(u)
    return out
