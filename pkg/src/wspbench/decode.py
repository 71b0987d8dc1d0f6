"""CTC decoding: greedy best path and prefix beam search with a character n-gram LM."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._beam import beam_search
from .synth import CHARSET, tokens_to_string
from .textkit import normalize

BLANK = 0
BOS, EOS = "<", ">"
LM_VOCAB: tuple[str, ...] = CHARSET + (BOS, EOS)
NEG_INF = float("-inf")
_NO_TABLE = np.zeros((1, 1))


def collapse(path: Iterable[int]) -> str:
    """Merge adjacent repeats, then drop blanks; symbols are output indices (0 = blank)."""
    out, prev = [], None
    for s in path:
        s = int(s)
        if s != prev and s != BLANK:
            out.append(CHARSET[s - 1])
        prev = s
    return "".join(out)


def greedy_decode(log_posteriors: np.ndarray) -> list[str]:
    return normalize(collapse(np.argmax(log_posteriors, axis=1)))


class LMFormatError(ValueError):
    pass


@dataclass
class NgramLM:
    """Add-k smoothed character n-gram model over the charset plus boundary markers."""

    n: int = 4
    k: float = 0.1
    counts: dict = field(default_factory=dict)  # context -> Counter(symbol -> count)
    context_totals: dict = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict = {}
        self._table = None

    @property
    def vocab(self) -> tuple[str, ...]:
        return LM_VOCAB

    def context_of(self, history: str) -> str:
        if self.n == 1:
            return ""
        h = BOS * (self.n - 1) + history
        return h[-(self.n - 1):]

    def prob(self, symbol: str, history: str = "") -> float:
        ctx = self.context_of(history)
        c = self.counts.get(ctx)
        num = (c.get(symbol, 0) if c else 0) + self.k
        return num / (self.context_totals.get(ctx, 0) + self.k * len(LM_VOCAB))

    def logprob(self, symbol: str, history: str = "") -> float:
        key = (self.context_of(history), symbol)
        v = self._cache.get(key)
        if v is None:
            v = math.log(self.prob(symbol, history))
            self._cache[key] = v
        return v

    def logprob_table(self) -> np.ndarray:
        """Dense log P(symbol | context) with contexts as base-|vocab| numbers, oldest symbol first."""
        if self._table is None:
            V = len(LM_VOCAB)
            index = {s: i for i, s in enumerate(LM_VOCAB)}
            table = np.full((V ** (self.n - 1), V), math.log(self.k / (self.k * V)))
            for ctx, c in self.counts.items():
                cid = 0
                for ch in ctx:
                    cid = cid * V + index[ch]
                num = np.full(V, self.k)
                for sym, cnt in c.items():
                    num[index[sym]] = cnt + self.k
                table[cid] = np.log(num / (self.context_totals.get(ctx, 0) + self.k * V))
            self._table = table
        return self._table

    def sentence_logprob(self, text: str) -> float:
        return sum(self.logprob(ch, text[:i]) for i, ch in enumerate(text + EOS))

    def save(self, path) -> None:
        lines = [f"wsplm v1 n={self.n} k={self.k!r}"]
        rows = sorted((ctx, sym, cnt) for ctx, c in self.counts.items() for sym, cnt in c.items())
        lines += [f"{ctx}\t{sym}\t{cnt}" for ctx, sym, cnt in rows]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NgramLM":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        head = lines[0].split()
        if len(head) != 4 or head[:2] != ["wsplm", "v1"]:
            raise LMFormatError(f"{path}: bad header {lines[0]!r}")
        try:
            n = int(head[2].removeprefix("n="))
            k = float(head[3].removeprefix("k="))
        except ValueError:
            raise LMFormatError(f"{path}: bad header {lines[0]!r}") from None
        counts: dict = defaultdict(Counter)
        for lineno, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or len(parts[1]) != 1:
                raise LMFormatError(f"{path}:{lineno}: bad row {line!r}")
            counts[parts[0]][parts[1]] = int(parts[2])
        lm = cls(n, k, dict(counts))
        lm.context_totals = {ctx: sum(c.values()) for ctx, c in lm.counts.items()}
        return lm


def train_lm(texts: Sequence[Sequence[str]], n: int = 4, k: float = 0.1) -> NgramLM:
    """Count symbols after every (n-1)-character context of each BOS-padded sentence."""
    if len(texts) == 0:
        raise ValueError("empty LM training corpus")
    if n < 1 or k <= 0:
        raise ValueError("need n >= 1 and k > 0")
    counts: dict = defaultdict(Counter)
    for tokens in texts:
        s = tokens_to_string(tokens) if not isinstance(tokens, str) else tokens
        padded = BOS * (n - 1) + s + EOS
        for i in range(n - 1, len(padded)):
            counts[padded[i - n + 1 : i]][padded[i]] += 1
    lm = NgramLM(n, k, dict(counts))
    lm.context_totals = {ctx: sum(c.values()) for ctx, c in lm.counts.items()}
    return lm


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 64
    lm_weight: float = 1.2
    insertion_bonus: float = 0.5
    prune_logp_threshold: float = -12.0

    def __post_init__(self):
        if self.beam_width < 1 or self.lm_weight < 0:
            raise ValueError("need beam_width >= 1 and lm_weight >= 0")


def _lae(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _prefix_beam_search_py(log_posteriors: np.ndarray, lm: NgramLM | None, cfg: DecoderConfig) -> list[tuple[str, float]]:
    """Reference implementation of :func:`prefix_beam_search` over string prefixes."""
    alpha, beta = cfg.lm_weight, cfg.insertion_bonus
    use_lm = lm is not None and alpha > 0
    logp = np.asarray(log_posteriors, dtype=np.float64)
    T, K = logp.shape
    beams: dict[str, list[float]] = {"": [0.0, NEG_INF]}
    bonus: dict[str, float] = {"": 0.0}
    for t in range(T):
        row = logp[t].tolist()
        blank_lp = row[BLANK]
        cands = [(k, CHARSET[k - 1], row[k]) for k in range(1, K) if row[k] > cfg.prune_logp_threshold]
        nxt: dict[str, list[float]] = {}
        for prefix, (pb, pnb) in beams.items():
            total = _lae(pb, pnb)
            e = nxt.get(prefix)
            if e is None:
                e = nxt[prefix] = [NEG_INF, NEG_INF]
            e[0] = _lae(e[0], total + blank_lp)
            last = prefix[-1] if prefix else None
            for _, ch, lp in cands:
                ext = prefix + ch
                if ch == last:
                    e[1] = _lae(e[1], pnb + lp)
                    src = pb
                else:
                    src = total
                if src == NEG_INF:
                    continue
                e2 = nxt.get(ext)
                if e2 is None:
                    e2 = nxt[ext] = [NEG_INF, NEG_INF]
                e2[1] = _lae(e2[1], src + lp)
                if ext not in bonus:
                    b = beta
                    if use_lm:
                        b += alpha * lm.logprob(ch, prefix)
                    bonus[ext] = bonus[prefix] + b
        ranked = sorted(nxt.items(), key=lambda kv: (-(_lae(kv[1][0], kv[1][1]) + bonus[kv[0]]), kv[0]))
        beams = dict(ranked[: cfg.beam_width])
    final = []
    for prefix, (pb, pnb) in beams.items():
        s = _lae(pb, pnb) + bonus[prefix]
        if use_lm:
            s += alpha * lm.logprob(EOS, prefix)
        final.append((prefix, s))
    final.sort(key=lambda x: (-x[1], x[0]))
    return final


# dense LM tables above this many contexts are not worth building
MAX_DENSE_CONTEXTS = 30 ** 4


def prefix_beam_search(log_posteriors: np.ndarray, lm: NgramLM | None, cfg: DecoderConfig) -> list[tuple[str, float]]:
    """All surviving prefixes with their final fused scores, best first.

    A prefix score is log(P_blank + P_nonblank) from the acoustics plus, for each
    emitted character, lm_weight * log P_lm(char | prefix) + insertion_bonus; the
    end-of-sentence LM term is added once at the end.
    """
    use_lm = lm is not None and cfg.lm_weight > 0
    V = len(LM_VOCAB)
    if use_lm and V ** (lm.n - 1) > MAX_DENSE_CONTEXTS:
        return _prefix_beam_search_py(log_posteriors, lm, cfg)
    logp = np.ascontiguousarray(log_posteriors, dtype=np.float64)
    if use_lm:
        table, n_ctx = lm.logprob_table(), V ** (lm.n - 1)
        root = 0
        for ch in BOS * (lm.n - 1):
            root = root * V + LM_VOCAB.index(ch)
    else:
        table, n_ctx, root = _NO_TABLE, 1, 0
    nodes, scores, parent, char = beam_search(
        logp, BLANK, cfg.beam_width, cfg.prune_logp_threshold, table, n_ctx, root,
        LM_VOCAB.index(EOS), cfg.lm_weight, cfg.insertion_bonus, use_lm)
    final = []
    for node, score in zip(nodes.tolist(), scores.tolist()):
        chars = []
        while node > 0:
            chars.append(CHARSET[char[node] - 1])
            node = parent[node]
        final.append(("".join(reversed(chars)), score))
    final.sort(key=lambda x: (-x[1], x[0]))
    return final


def beam_decode(log_posteriors: np.ndarray, lm: NgramLM | None, cfg: DecoderConfig = DecoderConfig()) -> list[str]:
    return normalize(prefix_beam_search(log_posteriors, lm, cfg)[0][0])
