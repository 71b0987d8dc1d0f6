"""The four training regimes, each run as content-addressed, cached cells.

A cell is one (regime, corruption cell, seed) job. Its trained model, test
hypotheses and result rows are persisted under ``<out_dir>/cells/<key>/`` so a
rerun with the same spec and seed is skipped, and downstream regimes (fine-tune,
self-training) load their source model from the upstream cell.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..acoustic import AcousticModel, label_ids, load_checkpoint, min_frames, save_checkpoint, train
from ..corruptor import NeighborIndex, corrupt_corpus, load_vocab
from ..decode import beam_decode, greedy_decode, train_lm
from ..rng import keyed_rng
from ..synth import CorpusSpec, VoiceProfile, generate_corpus, read_manifest, render_features
from ..textkit import DEL, INS, SUB, WERReport, align, corpus_wer
from .config import CELL_FORMAT, DECODES, ExperimentSpec, WorkbenchConfig, content_hash, to_dict

log = logging.getLogger(__name__)

NONCONVERGED_WER = 0.95
ROW_FIELDS = ("cell_id", "regime", "mode", "fraction", "decode", "seed", "pooled_wer", "n_ref",
              "subs", "dels", "ins", "skipped_utts", "flagged", "note", "wall_time_s")


class MissingSourceError(RuntimeError):
    """A fine-tune or self-training cell could not obtain its upstream model."""


# -- shared data ------------------------------------------------------------


class Workbench:
    """Corpora, LM and neighbour index for one WorkbenchConfig, built lazily once."""

    def __init__(self, config: WorkbenchConfig, out_dir=None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._memory: dict = {}

    def voice(self, seed=None) -> VoiceProfile:
        v = self.config.data.voice
        return VoiceProfile(v.dim, v.noise_sigma, v.dur_min, v.dur_max, v.channel_sigma,
                            v.crossfade, v.seed if seed is None else seed)

    @cached_property
    def vocab(self) -> tuple:
        return load_vocab()

    @cached_property
    def index(self) -> NeighborIndex:
        return NeighborIndex(self.vocab)

    def _split(self, name: str, n: int, manifest: str | None, seed_offset: int):
        d = self.config.data
        if manifest:
            return read_manifest(manifest, load_frames=True)
        spec = CorpusSpec(n, self.vocab[: d.vocab_size], self.voice(), seed=d.seed + seed_offset,
                          len_min=d.len_min, len_max=d.len_max, prefix=name)
        return generate_corpus(spec)

    @cached_property
    def train(self) -> list:
        d = self.config.data
        return self._split("train", d.n_train, d.train_manifest, 0)

    @cached_property
    def dev(self) -> list:
        d = self.config.data
        return self._split("dev", d.n_dev, d.dev_manifest, 1000)

    @cached_property
    def test(self) -> list:
        d = self.config.data
        return self._split("test", d.n_test, d.test_manifest, 2000)

    @cached_property
    def lm(self):
        return train_lm([u.tokens for u in self.train], self.config.lm.n, self.config.lm.k)

    def clean_subset(self, size: int) -> list:
        """The first `size` training utterances with gold transcripts.

        With ``clean_voice_seed`` set, the same sentences are re-rendered by a
        different voice, which stands in for an out-of-domain clean set.
        """
        subset = self.train[:size]
        seed = self.config.data.clean_voice_seed
        if seed is None:
            return subset
        voice = self.voice(seed)
        return [dataclasses.replace(u, frames=render_features(u.tokens, voice, keyed_rng(seed, u.id)).frames)
                for u in subset]


_BENCHES: dict = {}


def get_workbench(config: WorkbenchConfig, out_dir=None) -> Workbench:
    key = (content_hash(config), str(out_dir))
    if key not in _BENCHES:
        _BENCHES[key] = Workbench(config, out_dir)
    return _BENCHES[key]


# -- results ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)

    def __add__(self, other: "ExperimentResult") -> "ExperimentResult":
        return ExperimentResult(self.rows + other.rows)

    def select(self, **where) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in where.items())]

    def wer(self, **where) -> float:
        rows = self.select(**where)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {where}")
        return rows[0]["pooled_wer"]


@dataclass
class CellOutcome:
    key: str
    rows: list
    hyps: dict  # decode -> [(utt_id, ref tokens, hyp tokens)]
    model_path: Path | None = None
    model: AcousticModel | None = None

    def load_model(self) -> AcousticModel:
        if self.model is not None:
            return self.model
        if self.model_path is None or not self.model_path.exists():
            raise MissingSourceError(f"cell {self.key} has no checkpoint")
        return load_checkpoint(self.model_path)


def report_from_hyps(hyps) -> WERReport:
    return corpus_wer([(ref, hyp) for _, ref, hyp in hyps])


def decode_all(model: AcousticModel, utts, bench: Workbench, decodes=DECODES) -> dict:
    out = {d: [] for d in decodes}
    for u in utts:
        logp = model.forward(u.frames)
        for d in decodes:
            hyp = greedy_decode(logp) if d == "greedy" else beam_decode(logp, bench.lm, bench.config.decoder)
            out[d].append((u.id, list(u.tokens), hyp))
    return out


# -- cell keys and persistence ------------------------------------------------


def _corruption_cell(spec: ExperimentSpec) -> tuple:
    mode = spec.source_mode or spec.mode
    fraction = spec.fraction if spec.source_fraction is None else spec.source_fraction
    # an uncorrupted corpus is the same whichever mode would have been applied
    return ("random", 0.0) if fraction == 0 else (mode, fraction)


def cell_identity(spec: ExperimentSpec, seed: int) -> dict:
    """Everything that determines a cell's outputs, and nothing else."""
    ident = {"format": CELL_FORMAT, "regime": spec.regime, "seed": seed, "config": to_dict(spec.config)}
    if spec.regime in ("weak_only", "wsp_ft"):
        ident["cell"] = _corruption_cell(spec)
    if spec.regime != "weak_only":
        ident["clean_subset_size"] = spec.clean_subset_size
    if spec.regime == "self_training":
        ident.update(pool_fraction=spec.pool_fraction, teacher=spec.teacher,
                     pseudo_label_decode=spec.pseudo_label_decode)
        if spec.teacher == "wsp_ft":
            ident["cell"] = _corruption_cell(spec)
    return ident


def cell_key(spec: ExperimentSpec, seed: int) -> str:
    return content_hash(cell_identity(spec, seed))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_hyps(path: Path, hyps: dict) -> None:
    lines = [json.dumps({"id": uid, "decode": d, "ref": " ".join(ref), "hyp": " ".join(hyp)})
             for d in DECODES if d in hyps for uid, ref, hyp in hyps[d]]
    _atomic_write(path, "\n".join(lines) + "\n")


def read_hyps(path) -> dict:
    out: dict = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            r = json.loads(line)
            out.setdefault(r["decode"], []).append((r["id"], r["ref"].split(), r["hyp"].split()))
    return out


def _save_cell(bench: Workbench, outcome: CellOutcome, ident: dict, extra: dict) -> None:
    bench._memory[outcome.key] = outcome
    if bench.out_dir is None:
        return
    d = bench.out_dir / "cells" / outcome.key
    d.mkdir(parents=True, exist_ok=True)
    if outcome.model is not None:
        save_checkpoint(outcome.model, d / "model.wspm")
        outcome.model_path = d / "model.wspm"
    write_hyps(d / "hyps.jsonl", outcome.hyps)
    _atomic_write(d / "cell.json", json.dumps({"identity": ident, **extra}, indent=1, sort_keys=True))
    # rows.json is written last and marks the cell complete
    _atomic_write(d / "rows.json", json.dumps(outcome.rows, indent=1))


def _load_cell(bench: Workbench, key: str) -> CellOutcome | None:
    if key in bench._memory:
        return bench._memory[key]
    if bench.out_dir is None:
        return None
    d = bench.out_dir / "cells" / key
    if not (d / "rows.json").exists():
        return None
    rows = json.loads((d / "rows.json").read_text(encoding="utf-8"))
    model_path = d / "model.wspm"
    outcome = CellOutcome(key, rows, read_hyps(d / "hyps.jsonl"), model_path if model_path.exists() else None)
    bench._memory[key] = outcome
    return outcome


# -- regimes ------------------------------------------------------------------


def _train_cfg(base, seed):
    return dataclasses.replace(base, seed=seed)


def _init(cfg: WorkbenchConfig, seed: int) -> AcousticModel:
    return AcousticModel.init(cfg.data.voice.dim, cfg.model.context, cfg.model.hidden, seed=seed)


def _round_trip(model: AcousticModel) -> AcousticModel:
    """Quantise to checkpoint precision so fresh and cached cells behave identically."""
    m = model.copy()
    m.params = {k: v.astype(np.float32).astype(np.float64) for k, v in m.params.items()}
    return m


def _weak_only(spec, seed, bench):
    cfg = spec.config
    mode, fraction = _corruption_cell(spec)
    corruption = dataclasses.replace(cfg.corruption, mode=mode, seed=seed)
    weak = corrupt_corpus(bench.train, corruption, fraction, seed, bench.index)
    label_wer = corpus_wer([(g.tokens, w.tokens) for g, w in zip(bench.train, weak)]).wer
    model, hist = train(_init(cfg, seed), weak, bench.dev, _train_cfg(cfg.pretrain, seed))
    return model, hist, {"label_wer": label_wer}


def _wsp_ft(spec, seed, bench):
    cfg = spec.config
    mode, fraction = _corruption_cell(spec)
    src = run_cell(spec.with_(regime="weak_only", mode=mode, fraction=fraction,
                              source_mode=None, source_fraction=None), seed, bench)
    base = src.load_model()
    if spec.clean_subset_size == 0:
        return base, None, {"source": src.key, "identity_of_source": True}
    clean = bench.clean_subset(spec.clean_subset_size)
    model, hist = train(base, clean, bench.dev, _train_cfg(cfg.finetune, seed))
    return model, hist, {"source": src.key}


def _direct_ft(spec, seed, bench):
    cfg = spec.config
    clean = bench.clean_subset(spec.clean_subset_size)
    if not clean:
        return _init(cfg, seed), None, {"empty_clean_subset": True}
    # the fine-tune recipe from random init: wsp_ft without the weak pretraining
    model, hist = train(_init(cfg, seed), clean, bench.dev, _train_cfg(cfg.finetune, seed))
    return model, hist, {}


def _self_training(spec, seed, bench):
    cfg = spec.config
    teacher_spec = spec.with_(regime=spec.teacher)
    teacher_cell = run_cell(teacher_spec, seed, bench)
    teacher = teacher_cell.load_model()
    teacher_wer = report_from_hyps(teacher_cell.hyps["lm"]).wer
    pool = bench.train[spec.clean_subset_size :]
    n_pick = int(round(spec.pool_fraction * len(pool)))
    picks = np.sort(keyed_rng(seed, "pool").choice(len(pool), size=n_pick, replace=False)) if n_pick else []
    pseudo = []
    labels = decode_all(teacher, [pool[i] for i in picks], bench, (spec.pseudo_label_decode,))
    for (uid, _, hyp), i in zip(labels[spec.pseudo_label_decode], picks):
        u = pool[i]
        if hyp and len(u.frames) >= min_frames(label_ids(hyp)):
            pseudo.append(dataclasses.replace(u, tokens=list(hyp)))
    pseudo_wer = (corpus_wer([(pool[i].tokens, h) for (_, _, h), i in zip(labels[spec.pseudo_label_decode], picks)]).wer
                  if n_pick else float("nan"))
    merged = pseudo + bench.clean_subset(spec.clean_subset_size)
    extra = {"teacher": teacher_cell.key, "teacher_lm_wer": teacher_wer, "n_pool": n_pick,
             "n_pseudo": len(pseudo), "pseudo_label_wer": pseudo_wer,
             "degenerate_teacher": teacher_wer >= NONCONVERGED_WER}
    if not merged:
        return _init(cfg, seed), None, extra
    # same recipe as direct_ft, so an empty pool reproduces it
    model, hist = train(_init(cfg, seed), merged, bench.dev, _train_cfg(cfg.finetune, seed))
    return model, hist, extra


_REGIMES = {"weak_only": _weak_only, "wsp_ft": _wsp_ft, "direct_ft": _direct_ft, "self_training": _self_training}


def _row_labels(spec: ExperimentSpec):
    if spec.regime in ("weak_only", "wsp_ft"):
        return spec.mode, spec.fraction
    if spec.regime == "self_training" and spec.teacher == "wsp_ft":
        return spec.mode, spec.fraction
    return "", ""


def run_cell(spec: ExperimentSpec, seed: int, bench: Workbench | None = None) -> CellOutcome:
    """Run (or load) one cell; failures raise."""
    bench = bench or get_workbench(spec.config)
    ident = cell_identity(spec, seed)
    key = content_hash(ident)
    cached = _load_cell(bench, key)
    if cached is not None:
        return cached
    t0 = time.perf_counter()
    model, hist, extra = _REGIMES[spec.regime](spec, seed, bench)
    model = _round_trip(model)
    hyps = decode_all(model, bench.test, bench)
    wall = time.perf_counter() - t0
    skipped = max(hist.skipped_per_epoch, default=0) if hist is not None else 0
    rows = []
    for d in DECODES:
        r = report_from_hyps(hyps[d])
        flags = []
        if r.wer >= NONCONVERGED_WER:
            flags.append("nonconverged")
        if extra.get("degenerate_teacher"):
            flags.append("degenerate_teacher")
        rows.append(dict(cell_id=key, regime=spec.regime, mode="", fraction="", decode=d, seed=seed,
                         pooled_wer=r.wer, n_ref=r.n_ref, subs=r.subs, dels=r.dels, ins=r.ins,
                         skipped_utts=skipped, flagged=bool(flags), note=";".join(flags),
                         wall_time_s=round(wall, 3)))
    history = None
    if hist is not None:
        history = {"step": hist.step, "train_loss": hist.train_loss, "dev_wer": hist.dev_wer,
                   "skipped_per_epoch": hist.skipped_per_epoch, "best_step": hist.best_step}
    outcome = CellOutcome(key, rows, hyps, model=model)
    _save_cell(bench, outcome, ident, {"history": history, **{k: _jsonable(v) for k, v in extra.items()}})
    log.info("cell %s %s seed=%d done in %.1fs", key, spec.regime, seed, wall)
    return outcome


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def failed_rows(spec: ExperimentSpec, seed: int, err: Exception) -> list:
    key = cell_key(spec, seed)
    mode, fraction = _row_labels(spec)
    return [dict(cell_id=key, regime=spec.regime, mode=mode, fraction=fraction, decode=d, seed=seed,
                 pooled_wer=float("nan"), n_ref=0, subs=0, dels=0, ins=0, skipped_utts=0, flagged=True,
                 note=f"error:{type(err).__name__}: {err}", wall_time_s=0.0)
            for d in spec.decodes]


def _run(spec: ExperimentSpec, bench: Workbench | None) -> ExperimentResult:
    bench = bench or get_workbench(spec.config)
    mode, fraction = _row_labels(spec)
    rows = []
    for seed in spec.seeds:
        outcome = run_cell(spec, seed, bench)
        rows += [dict(r, mode=mode, fraction=fraction) for r in outcome.rows if r["decode"] in spec.decodes]
    return ExperimentResult(rows)


def run_weak_only(spec: ExperimentSpec, bench: Workbench | None = None) -> ExperimentResult:
    return _run(spec.with_(regime="weak_only"), bench)


def run_wsp_ft(spec: ExperimentSpec, bench: Workbench | None = None) -> ExperimentResult:
    return _run(spec.with_(regime="wsp_ft"), bench)


def run_direct_ft(spec: ExperimentSpec, bench: Workbench | None = None) -> ExperimentResult:
    return _run(spec.with_(regime="direct_ft"), bench)


def run_self_training(spec: ExperimentSpec, bench: Workbench | None = None) -> ExperimentResult:
    return _run(spec.with_(regime="self_training"), bench)


def error_breakdown(hyps) -> dict:
    """Substitution/deletion/insertion totals over a list of (id, ref, hyp)."""
    counts = {SUB: 0, DEL: 0, INS: 0}
    for _, ref, hyp in hyps:
        a = align(ref, hyp)
        for kind in counts:
            counts[kind] += a.count(kind)
    return counts
