"""Acceptance criteria 1-10.

Criteria 5-10 share one sweep over configs/acceptance.yaml. Set
WSPBENCH_ACCEPTANCE_DIR to keep its cells between runs; by default the sweep
runs into a temporary directory.
"""
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from wspbench.acoustic import AcousticModel, N_OUT, align_posteriors, ctc_loss, grad_check, min_frames
from wspbench.corruptor import CorruptionConfig, CorruptionTrace, NeighborIndex, corrupt_tokens, load_vocab
from wspbench.harness.config import load_config
from wspbench.harness.experiments import Workbench, read_hyps, run_cell
from wspbench.harness.sweep import grid_specs, run_sweep
from wspbench.rng import keyed_rng
from wspbench.synth import CorpusSpec, VoiceProfile, encode, generate_corpus, sample_sentence, tokens_to_string
from wspbench.textkit import align, normalize, wer

from oracles import all_sequences, ctc_brute_force_logprob, edit_distance_recursive, random_log_posteriors

ROOT = Path(__file__).resolve().parents[1]
CONFIG = load_config(ROOT / "configs" / "acceptance.yaml")
FULL_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


@pytest.fixture(scope="session")
def sweep(tmp_path_factory):
    out = Path(os.environ.get("WSPBENCH_ACCEPTANCE_DIR") or tmp_path_factory.mktemp("acceptance"))
    result = run_sweep(grid_specs(CONFIG.sweep, CONFIG.workbench), out)
    return out, result


def median_wer(result, decode, **where):
    rows = result.select(decode=decode, **where)
    assert len(rows) == len(CONFIG.sweep.seeds), where
    return statistics.median(r["pooled_wer"] for r in rows)


def per_seed(result, decode, **where):
    return {r["seed"]: r["pooled_wer"] for r in result.select(decode=decode, **where)}


def pct(x):
    return f"{100 * x:.2f}"


# -- algorithmic oracles -----------------------------------------------------


def test_criterion_01_ctc_oracle(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    while checked < 200:
        K = int(rng.integers(2, 5))
        T = int(rng.integers(1, 9))
        labels = rng.integers(1, K, size=int(rng.integers(0, 5)))
        if min_frames(labels) > T:
            continue
        small = random_log_posteriors(rng, T, K)
        lp = np.full((T, N_OUT), -np.inf)
        lp[:, :K] = small
        loss, _ = ctc_loss(lp, labels)
        worst = max(worst, abs(-loss - ctc_brute_force_logprob(small, labels)))
        checked += 1
    elapsed = time.perf_counter() - t0
    criterion(1, "CTC oracle", worst <= 1e-8 and elapsed < 10,
              f"max |diff| {worst:.2e} over 200 instances in {elapsed:.2f}s")


def test_criterion_02_gradient_check(criterion):
    voice = CONFIG.workbench.data.voice
    words = load_vocab()[:50]
    corpus = generate_corpus(CorpusSpec(20, words, VoiceProfile(voice.dim), seed=5, len_min=1, len_max=2))
    model = AcousticModel.init(voice.dim, hidden=16, seed=7)
    t0 = time.perf_counter()
    errs = [grad_check(model, (u.frames, u.tokens), seed=i) for i, u in enumerate(corpus)]
    elapsed = time.perf_counter() - t0
    criterion(2, "gradient check", max(errs) < 1e-4 and elapsed < 30,
              f"max rel err {max(errs):.2e} over 20 samples in {elapsed:.2f}s")


def test_criterion_03_wer_oracle(criterion):
    seqs = list(all_sequences(("a", "b", "c"), 6))
    bad = sum(align(r, h).cost != edit_distance_recursive(r, h) for r in seqs for h in seqs)
    ref = normalize("everybody talks about happiness these days")
    got = [100 * wer(ref, normalize(h)).wer for h in (
        "e bod tal abou hapne thel da",
        "ever body talks about hapines thees das",
        "everybody talks about happiness these das",
    )]
    ok = (bad == 0 and abs(got[0] - 116.67) <= 0.02 and abs(got[1] - 83.33) <= 0.02
          and abs(got[1] - 83.34) <= 0.02 and abs(got[2] - 16.67) <= 0.02)
    criterion(3, "WER oracle", ok,
              f"{len(seqs) ** 2} pairs, {bad} mismatches; examples {got[0]:.2f} {got[1]:.2f} {got[2]:.2f}")


def test_criterion_04_corruption_rates(criterion):
    cfg = CorruptionConfig()
    vocab = load_vocab()
    index = NeighborIndex(vocab)
    words = vocab[:300]
    rng = np.random.default_rng(4)
    total = CorruptionTrace()
    sentences = stamped = 0
    while total.n_words < 100_000:
        tr = CorruptionTrace()
        corrupt_tokens(sample_sentence(words, 4, 10, rng), cfg, index, keyed_rng(4, str(sentences)), tr)
        total.n_words += tr.n_words
        total.deleted += tr.deleted
        total.substituted += tr.substituted
        total.repeated += tr.repeated
        stamped += tr.timestamp
        sentences += 1
    rates = (total.deleted / total.n_words, total.substituted / total.surviving,
             total.repeated / total.surviving)
    ts = stamped / sentences
    ok = all(abs(r - t) <= 0.005 for r, t in zip(rates, (0.05, 0.20, 0.05))) and abs(ts - 0.5) <= 0.02
    criterion(4, "corruption rates", ok,
              f"{total.n_words} words: del {rates[0]:.4f} sub {rates[1]:.4f} rep {rates[2]:.4f}; "
              f"timestamp {ts:.4f} over {sentences} sentences")


# -- trends over the sweep ---------------------------------------------------


def test_criterion_05_trend_t1(sweep, criterion):
    _, res = sweep
    full = [median_wer(res, "lm", regime="weak_only", mode="full", fraction=f) for f in FULL_FRACTIONS]
    rand = [median_wer(res, "lm", regime="weak_only", mode="random", fraction=f) for f in FULL_FRACTIONS]
    monotone = all(a <= b for a, b in zip(full, full[1:]))
    above = all(f >= r for f, r in zip(full[1:], rand[1:]))
    greedy = [median_wer(res, "greedy", regime="weak_only", mode="full", fraction=f) for f in FULL_FRACTIONS]
    criterion(5, "T1 weak-only trend", monotone and above,
              f"full LM {'/'.join(map(pct, full))}; random LM {'/'.join(map(pct, rand))}; "
              f"full greedy {'/'.join(map(pct, greedy))}")


def test_criterion_06_trend_t2(sweep, criterion):
    _, res = sweep
    n_seeds = len(CONFIG.sweep.seeds)
    need = n_seeds - 1 if n_seeds >= 5 else n_seeds
    wins = {}
    for f in (0.5, 0.75, 1.0):
        weak = per_seed(res, "lm", regime="weak_only", mode="full", fraction=f)
        ft = per_seed(res, "lm", regime="wsp_ft", mode="full", fraction=f)
        wins[f] = sum(ft[s] < weak[s] for s in weak)
    base = median_wer(res, "lm", regime="wsp_ft", mode="random", fraction=0.0)
    gaps = {f: median_wer(res, "lm", regime="wsp_ft", mode="random", fraction=f) - base for f in (0.25, 0.5)}
    base_g = median_wer(res, "greedy", regime="wsp_ft", mode="random", fraction=0.0)
    gaps_g = {f: median_wer(res, "greedy", regime="wsp_ft", mode="random", fraction=f) - base_g for f in (0.25, 0.5)}
    ok = all(w >= need for w in wins.values()) and all(g <= 0.02 for g in gaps.values())
    criterion(6, "T2 fine-tune trend", ok,
              "full wins " + ", ".join(f"{f:g}:{w}/{n_seeds}" for f, w in wins.items())
              + "; random LM gap to clean " + ", ".join(f"{f:g}:{pct(g)}" for f, g in gaps.items())
              + " (greedy " + ", ".join(f"{f:g}:{pct(g)}" for f, g in gaps_g.items()) + ")")


def test_criterion_07_trend_t3(sweep, criterion):
    _, res = sweep

    def gap(mode):
        return (median_wer(res, "greedy", regime="weak_only", mode=mode, fraction=0.5)
                - median_wer(res, "lm", regime="weak_only", mode=mode, fraction=0.5))

    g_full, g_rand = gap("full"), gap("random")
    criterion(7, "T3 LM gap", g_full > g_rand, f"greedy-LM gap full {pct(g_full)} vs random {pct(g_rand)}")


def test_criterion_08_trend_t4(sweep, criterion):
    _, res = sweep
    mode, fraction = CONFIG.sweep.fixed_cell
    direct = per_seed(res, "lm", regime="direct_ft")
    st = per_seed(res, "lm", regime="self_training")
    wsp = per_seed(res, "lm", regime="wsp_ft", mode=mode, fraction=fraction)
    n_seeds = len(CONFIG.sweep.seeds)
    need = n_seeds - 1 if n_seeds >= 5 else n_seeds
    ordered = sum(direct[s] >= st[s] >= wsp[s] for s in direct)
    ratio_ok = statistics.median(direct.values()) >= 2 * statistics.median(wsp.values())
    detail = "; ".join(f"seed {s}: {pct(direct[s])} >= {pct(st[s])} >= {pct(wsp[s])}" for s in sorted(direct))
    criterion(8, "T4 regime ordering", ordered >= need and ratio_ok,
              f"ordered on {ordered}/{n_seeds} seeds, direct/wsp median ratio ok={ratio_ok} ({detail})")


def test_criterion_09_forced_alignment(sweep, criterion):
    out, _ = sweep
    bench = Workbench(CONFIG.workbench, out)
    spec = grid_specs(CONFIG.sweep, CONFIG.workbench)[0].with_(regime="weak_only", mode="random", fraction=0.0)
    model = run_cell(spec, CONFIG.sweep.seeds[0], bench).load_model()
    protos = bench.voice().prototypes
    rng = np.random.default_rng(9)
    errors = []
    for u in bench.test[:50]:
        chars = encode(tokens_to_string(u.tokens))
        durs = rng.integers(bench.config.data.voice.dur_min, bench.config.data.voice.dur_max + 1, size=len(chars))
        frames = np.repeat(protos[chars], durs, axis=0)
        starts = np.concatenate([[0], np.cumsum(durs)[:-1]])
        spans = align_posteriors(model.forward(frames), u.tokens)
        errors += [abs(first - s) for (_, first, _), s in zip(spans, starts) if first >= 0]
    med = float(np.median(errors))
    criterion(9, "forced alignment", med <= 2, f"median start-boundary error {med:g} frames over {len(errors)} chars")


def test_criterion_10_determinism(sweep, criterion, tmp_path):
    out, res = sweep
    spec = [s for s in grid_specs(CONFIG.sweep, CONFIG.workbench)
            if s.regime == "wsp_ft" and s.mode == "full" and s.fraction == 0.5][0]
    seed = CONFIG.sweep.seeds[0]
    fresh = run_cell(spec, seed, Workbench(CONFIG.workbench, tmp_path))
    strip = lambda rows: sorted(({k: v for k, v in r.items() if k != "wall_time_s"} for r in rows),
                                key=lambda r: r["decode"])
    before = strip(r for r in res.rows if r["cell_id"] == fresh.key)
    after = strip(dict(r, mode=spec.mode, fraction=spec.fraction) for r in fresh.rows)
    same_hyps = read_hyps(out / "cells" / fresh.key / "hyps.jsonl") == read_hyps(tmp_path / "cells" / fresh.key / "hyps.jsonl")
    criterion(10, "determinism", before == after and bool(before) and same_hyps,
              f"cell {fresh.key} rows equal={before == after}, hypotheses equal={same_hyps}")
