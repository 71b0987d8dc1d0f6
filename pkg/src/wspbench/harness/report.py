"""Markdown reports: greedy/LM WER tables, error-type breakdowns and aligned diffs."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from ..textkit import align, render_alignment, wer
from .config import FRACTIONS, MODES, REGIMES
from .experiments import ExperimentResult, read_hyps, report_from_hyps

_TITLES = {
    "weak_only": "Training on weak transcripts only",
    "wsp_ft": "Weak pretraining, then fine-tuning on the clean subset",
    "direct_ft": "Training on the clean subset only",
    "self_training": "Self-training on teacher pseudo-labels plus the clean subset",
}


def fmt_pct(x: float) -> str:
    return "nan" if x != x else f"{100 * x:.2f}"


def cell(g: float, lm: float) -> str:
    """A table cell in the greedy/LM style, e.g. ``7.40/6.77``."""
    return f"{fmt_pct(g)}/{fmt_pct(lm)}"


def recompute(result: ExperimentResult, out_dir) -> ExperimentResult:
    """Replace row WERs by values recomputed from the persisted hypotheses."""
    rows, cache = [], {}
    for r in result.rows:
        path = Path(out_dir) / "cells" / r["cell_id"] / "hyps.jsonl"
        if r["cell_id"] not in cache:
            cache[r["cell_id"]] = read_hyps(path) if path.exists() else None
        hyps = cache[r["cell_id"]]
        if hyps is None or r["decode"] not in hyps:
            rows.append(dict(r))
            continue
        rep = report_from_hyps(hyps[r["decode"]])
        rows.append(dict(r, pooled_wer=rep.wer, n_ref=rep.n_ref, subs=rep.subs, dels=rep.dels, ins=rep.ins))
    return ExperimentResult(rows)


def _median(rows) -> float:
    vals = [r["pooled_wer"] for r in rows]
    return float(np.median(vals)) if vals else float("nan")


def wer_table(result: ExperimentResult, regime: str) -> str:
    """Fractions down, modes across; each cell is the seed-median greedy/LM WER in percent."""
    rows = result.select(regime=regime)
    fracs = [f for f in FRACTIONS if any(r["fraction"] == f for r in rows)]
    modes = [m for m in MODES if any(r["mode"] == m for r in rows)]
    lines = ["| corrupted | " + " | ".join(modes) + " |", "|---|" + "---|" * len(modes)]
    for f in fracs:
        cells = []
        for m in modes:
            sel = [r for r in rows if r["mode"] == m and r["fraction"] == f]
            cells.append(cell(_median([r for r in sel if r["decode"] == "greedy"]),
                              _median([r for r in sel if r["decode"] == "lm"])))
        lines.append(f"| {int(round(100 * f))}% | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def regime_table(result: ExperimentResult, fixed_cell=("random", 1.0)) -> str:
    """Clean-subset baselines next to weak pretraining + fine-tuning on `fixed_cell`."""
    mode, fraction = fixed_cell
    lines = ["| regime | WER (greedy/LM) |", "|---|---|"]
    for label, rows in (("direct_ft", result.select(regime="direct_ft")),
                        ("self_training", result.select(regime="self_training")),
                        (f"wsp_ft ({mode} {int(round(100 * fraction))}%)",
                         result.select(regime="wsp_ft", mode=mode, fraction=fraction))):
        if rows:
            lines.append(f"| {label} | " + cell(_median([r for r in rows if r["decode"] == "greedy"]),
                                                 _median([r for r in rows if r["decode"] == "lm"])) + " |")
    return "\n".join(lines)


def error_table(result: ExperimentResult) -> str:
    tot = defaultdict(lambda: [0, 0, 0, 0])
    for r in result.rows:
        t = tot[(r["regime"], r["decode"])]
        t[0] += r["n_ref"]
        t[1] += r["subs"]
        t[2] += r["dels"]
        t[3] += r["ins"]
    lines = ["| regime | decode | words | sub | del | ins | sub share |", "|---|---|---|---|---|---|---|"]
    for regime in REGIMES:
        for d in ("greedy", "lm"):
            if (regime, d) not in tot:
                continue
            n, s, de, i = tot[(regime, d)]
            errs = s + de + i
            share = f"{100 * s / errs:.1f}%" if errs else "-"
            lines.append(f"| {regime} | {d} | {n} | {s} | {de} | {i} | {share} |")
    return "\n".join(lines)


def render_sample(ref, hyp) -> str:
    """Aligned diff with the per-sample WER appended, e.g. ``(116.67%)``."""
    a = align(list(ref), list(hyp))
    return f"{render_alignment(a)}  ({100 * wer(list(ref), list(hyp)).wer:.2f}%)"


def report(results: ExperimentResult, samples=(), fixed_cell=("random", 1.0)) -> str:
    """The markdown document. `samples` are ``(label, ref, hyp)`` triples."""
    if not results.rows:
        raise ValueError("no results to report")
    parts = ["# WER report", "",
             "Cells are greedy/LM pooled test WER in percent, median over seeds.", ""]
    for regime in ("weak_only", "wsp_ft"):
        if results.select(regime=regime):
            parts += [f"## {_TITLES[regime]}", "", wer_table(results, regime), ""]
    if results.select(regime="direct_ft") or results.select(regime="self_training"):
        parts += ["## Clean-subset baselines", "", regime_table(results, fixed_cell), ""]
    parts += ["## Error types", "", error_table(results), ""]
    flagged = [r for r in results.rows if r["flagged"]]
    if flagged:
        parts += ["## Flagged rows", ""]
        for r in flagged:
            what = " ".join(str(v) for v in (r["regime"], r["mode"], r["fraction"], r["decode"]) if v != "")
            parts.append(f"- {what} seed {r['seed']}: {r['note']}")
        parts.append("")
    samples = list(samples)
    if samples:
        parts += ["## Sample transcriptions", ""]
        for label, ref, hyp in samples:
            parts += [f"{label}", "", "```", render_sample(ref, hyp), "```", ""]
    return "\n".join(parts)


def pick_samples(results: ExperimentResult, out_dir, n: int = 3) -> list:
    """Up to `n` erroneous LM-decoded test utterances from the first seed of each regime."""
    out = []
    for regime in REGIMES:
        rows = [r for r in results.select(regime=regime, decode="lm")]
        if not rows:
            continue
        r = max(rows, key=lambda r: (r["pooled_wer"], -r["seed"])) if regime == "weak_only" else rows[0]
        path = Path(out_dir) / "cells" / r["cell_id"] / "hyps.jsonl"
        if not path.exists():
            continue
        hyps = read_hyps(path).get("lm", [])
        bad = [(uid, ref, hyp) for uid, ref, hyp in hyps if ref != hyp][:n]
        label_cell = f" {r['mode']} {r['fraction']}" if r["mode"] else ""
        out += [(f"**{regime}{label_cell} seed {r['seed']}, {uid}**", ref, hyp) for uid, ref, hyp in bad]
    return out
