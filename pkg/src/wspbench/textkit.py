"""Text normalization, edit-distance alignment and word error rate."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

TokenSeq = list  # list[str]; lowercase words, no punctuation

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"

_NON_WORD = re.compile(r"[^\w'\s]+")
_EDGE_APOS = re.compile(r"(?<!\w)'|'(?!\w)")


class EmptyReferenceError(ValueError):
    pass


def normalize(raw: str) -> list[str]:
    """Lowercase, strip punctuation (keeping intra-word apostrophes), split on whitespace.

    >>> normalize("Don't STOP.")
    ["don't", 'stop']
    """
    text = raw.lower().replace("_", " ")
    text = _NON_WORD.sub(" ", text)
    text = _EDGE_APOS.sub(" ", text)
    return text.split()


@dataclass(frozen=True)
class EditOp:
    kind: str
    ref: str | None = None
    hyp: str | None = None


@dataclass(frozen=True)
class Alignment:
    ops: tuple[EditOp, ...]

    def count(self, kind: str) -> int:
        return sum(1 for op in self.ops if op.kind == kind)

    @property
    def cost(self) -> int:
        return sum(1 for op in self.ops if op.kind != MATCH)

    def ref_tokens(self) -> list[str]:
        return [op.ref for op in self.ops if op.kind != INS]

    def hyp_tokens(self) -> list[str]:
        return [op.hyp for op in self.ops if op.kind != DEL]


def _distance_table(ref: Sequence[str], hyp: Sequence[str]) -> list[list[int]]:
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        r = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if r == hyp[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)
    return d


def align(ref: Sequence[str], hyp: Sequence[str]) -> Alignment:
    """Minimum-cost alignment under unit costs.

    Ties in the traceback are broken match > substitute > delete > insert.
    """
    d = _distance_table(ref, hyp)
    i, j = len(ref), len(hyp)
    ops: list[EditOp] = []
    while i > 0 or j > 0:
        cur = d[i][j]
        if i > 0 and j > 0:
            if ref[i - 1] == hyp[j - 1] and d[i - 1][j - 1] == cur:
                ops.append(EditOp(MATCH, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
            if ref[i - 1] != hyp[j - 1] and d[i - 1][j - 1] + 1 == cur:
                ops.append(EditOp(SUB, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i - 1][j] + 1 == cur:
            ops.append(EditOp(DEL, ref[i - 1], None))
            i -= 1
        else:
            ops.append(EditOp(INS, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return Alignment(tuple(ops))


@dataclass(frozen=True)
class WERReport:
    n_ref: int
    subs: int
    dels: int
    ins: int

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins

    @property
    def wer(self) -> float:
        if self.n_ref == 0:
            raise EmptyReferenceError("WER undefined for an empty reference")
        return self.errors / self.n_ref

    def __add__(self, other: "WERReport") -> "WERReport":
        return WERReport(
            self.n_ref + other.n_ref,
            self.subs + other.subs,
            self.dels + other.dels,
            self.ins + other.ins,
        )


def _counts(ref: Sequence[str], hyp: Sequence[str]) -> WERReport:
    a = align(ref, hyp)
    return WERReport(len(ref), a.count(SUB), a.count(DEL), a.count(INS))


def wer(ref: Sequence[str], hyp: Sequence[str]) -> WERReport:
    if len(ref) == 0:
        raise EmptyReferenceError("reference has no tokens")
    return _counts(ref, hyp)


def corpus_wer(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> WERReport:
    """Pooled WER: summed edit counts over summed reference length."""
    total = WERReport(0, 0, 0, 0)
    seen = False
    for ref, hyp in pairs:
        seen = True
        total = total + _counts(ref, hyp)
    if not seen:
        raise EmptyReferenceError("empty corpus")
    if total.n_ref == 0:
        raise EmptyReferenceError("corpus references contain no tokens")
    return total


def render_alignment(a: Alignment) -> str:
    """Two-line ref/hyp diff with `*` padding for gaps and uppercase for errors."""
    top, bottom = [], []
    for op in a.ops:
        r = op.ref or "*"
        h = op.hyp or "*"
        if op.kind != MATCH:
            r, h = r.upper(), h.upper()
        w = max(len(r), len(h))
        top.append(r.ljust(w))
        bottom.append(h.ljust(w))
    return "REF: " + " ".join(top).rstrip() + "\nHYP: " + " ".join(bottom).rstrip()
