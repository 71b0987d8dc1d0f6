"""Command line entry point: ``wspbench <command> [--config FILE] [--seed N] [--out-dir DIR]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 sweep completed with flagged rows.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from ..acoustic import AcousticModel, CheckpointError, LabelTooLongError, load_checkpoint, save_checkpoint, train
from ..corruptor import corrupt_corpus, load_vocab, NeighborIndex
from ..decode import LMFormatError, NgramLM, beam_decode, greedy_decode, train_lm
from ..synth import CharsetError, FeatureFormatError, read_manifest, save_corpus, write_manifest
from ..textkit import EmptyReferenceError, corpus_wer
from .config import FRACTIONS, MODES, ConfigError, RunConfig, dump_config, load_config
from .experiments import Workbench, read_hyps, write_hyps
from .report import pick_samples, recompute, report
from .sweep import any_flagged, read_results, run_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FLAGGED = 0, 1, 2, 3

DATA_ERRORS = (FeatureFormatError, CharsetError, LMFormatError, CheckpointError, LabelTooLongError,
               EmptyReferenceError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError, ValueError)

log = logging.getLogger("wspbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out-dir", help="override the output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="wspbench", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate train/dev/test corpora and the gold-text LM")
    _common(p)

    p = sub.add_parser("corrupt", help="corrupt the transcripts of a manifest")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--fraction", type=float, default=1.0)
    _common(p)

    p = sub.add_parser("train", help="train or fine-tune an acoustic model")
    p.add_argument("manifest")
    p.add_argument("--dev", help="dev manifest for early stopping")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--finetune", action="store_true", help="use the fine-tune schedule")
    _common(p)

    p = sub.add_parser("decode", help="decode a manifest with a trained model")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("--lm", help="LM file for beam decoding")
    p.add_argument("--decode", choices=("greedy", "lm", "both"), default="greedy")
    _common(p)

    p = sub.add_parser("score", help="WER of a hypotheses file")
    p.add_argument("hyps")
    _common(p)

    p = sub.add_parser("sweep", help="run the configured experiment grid")
    _common(p)

    p = sub.add_parser("report", help="markdown report for a finished sweep")
    p.add_argument("--samples", type=int, default=3)
    _common(p)
    return ap


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    return cfg


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args, cfg: RunConfig) -> int:
    wb = cfg.workbench
    if args.seed is not None:
        wb = dataclasses.replace(wb, data=dataclasses.replace(wb.data, seed=args.seed))
    bench = Workbench(wb)
    out = _out(cfg)
    for name in ("train", "dev", "test"):
        save_corpus(getattr(bench, name), out / name)
    bench.lm.save(out / "lm.txt")
    (out / "config.yaml").write_text(dump_config(dataclasses.replace(cfg, workbench=wb)), encoding="utf-8")
    print(f"wrote {len(bench.train)}/{len(bench.dev)}/{len(bench.test)} utterances and lm.txt to {out}")
    return EXIT_OK


def cmd_corrupt(args, cfg: RunConfig) -> int:
    if args.fraction not in FRACTIONS:
        raise UsageError(f"--fraction must be one of {FRACTIONS}")
    src = Path(args.manifest)
    utts = read_manifest(src)
    corruption = cfg.workbench.corruption
    if args.mode:
        corruption = dataclasses.replace(corruption, mode=args.mode)
    out = _out(cfg)
    weak = corrupt_corpus(utts, corruption, args.fraction, cfg.seed, NeighborIndex(load_vocab()))
    for u in weak:
        if u.audio_path:
            u.audio_path = os.path.relpath(src.parent / u.audio_path, out)
    write_manifest(out / "manifest.jsonl", weak)
    label_wer = corpus_wer([(a.tokens, b.tokens) for a, b in zip(utts, weak)])
    print(f"corrupted {len(weak)} transcripts ({corruption.mode}, {args.fraction:g}); "
          f"label WER {100 * label_wer.wer:.2f}%")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    wb = cfg.workbench
    corpus = read_manifest(args.manifest, load_frames=True)
    dev = read_manifest(args.dev, load_frames=True) if args.dev else []
    if args.init:
        model = load_checkpoint(args.init)
    else:
        model = AcousticModel.init(wb.data.voice.dim, wb.model.context, wb.model.hidden, seed=cfg.seed)
    tcfg = dataclasses.replace(wb.finetune if args.finetune else wb.pretrain, seed=cfg.seed)
    model, hist = train(model, corpus, dev, tcfg)
    out = _out(cfg)
    save_checkpoint(model, out / "model.wspm")
    (out / "history.json").write_text(json.dumps(
        {"step": hist.step, "train_loss": hist.train_loss, "dev_wer": hist.dev_wer,
         "skipped_per_epoch": hist.skipped_per_epoch, "best_step": hist.best_step}, indent=1), encoding="utf-8")
    print(f"trained on {len(corpus)} utterances in {hist.wall_time_s:.1f}s; wrote {out / 'model.wspm'}")
    return EXIT_OK


def cmd_decode(args, cfg: RunConfig) -> int:
    decodes = ("greedy", "lm") if args.decode == "both" else (args.decode,)
    if "lm" in decodes and not args.lm:
        raise UsageError("LM decoding needs --lm")
    model = load_checkpoint(args.model)
    lm = NgramLM.load(args.lm) if args.lm else None
    utts = read_manifest(args.manifest, load_frames=True)
    hyps = {d: [] for d in decodes}
    for u in utts:
        logp = model.forward(u.frames)
        for d in decodes:
            hyp = greedy_decode(logp) if d == "greedy" else beam_decode(logp, lm, cfg.workbench.decoder)
            hyps[d].append((u.id, list(u.tokens), hyp))
    out = _out(cfg)
    write_hyps(out / "hyps.jsonl", hyps)
    print(f"decoded {len(utts)} utterances; wrote {out / 'hyps.jsonl'}")
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    hyps = read_hyps(args.hyps)
    if not hyps:
        raise ValueError(f"{args.hyps}: no hypotheses")
    scores = {}
    for d, rows in hyps.items():
        r = corpus_wer([(ref, hyp) for _, ref, hyp in rows])
        scores[d] = {"wer": r.wer, "n_ref": r.n_ref, "subs": r.subs, "dels": r.dels, "ins": r.ins}
        print(f"{d}: WER {100 * r.wer:.2f}% (S={r.subs} D={r.dels} I={r.ins} N={r.n_ref})")
    if args.out_dir:
        (_out(cfg) / "score.json").write_text(json.dumps(scores, indent=1), encoding="utf-8")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out(cfg)
    result = run_config(cfg, out)
    n_flag = sum(r["flagged"] for r in result.rows)
    print(f"{len(result.rows)} rows written to {out / 'results.csv'} ({n_flag} flagged)")
    return EXIT_FLAGGED if any_flagged(result) else EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    result = recompute(read_results(out / "results.csv"), out)
    doc = report(result, pick_samples(result, out, args.samples), cfg.sweep.fixed_cell)
    (out / "report.md").write_text(doc, encoding="utf-8")
    print(f"wrote {out / 'report.md'}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "corrupt": cmd_corrupt, "train": cmd_train, "decode": cmd_decode,
            "score": cmd_score, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"wspbench: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as e:
        print(f"wspbench: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"wspbench: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
