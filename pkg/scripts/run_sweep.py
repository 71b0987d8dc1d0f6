"""Run a configured sweep and write results.csv plus report.md next to it.

    python scripts/run_sweep.py configs/acceptance.yaml
    python scripts/run_sweep.py configs/default.yaml --out-dir runs/full --seeds 0 1
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from wspbench.harness.config import load_config
from wspbench.harness.report import pick_samples, recompute, report
from wspbench.harness.sweep import any_flagged, run_config


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out-dir")
    ap.add_argument("--seeds", type=int, nargs="+", help="override the sweep seeds")
    ap.add_argument("--samples", type=int, default=3)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    if args.seeds:
        cfg = dataclasses.replace(cfg, sweep=dataclasses.replace(cfg.sweep, seeds=tuple(args.seeds)))
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_config(cfg, out)
    result = recompute(result, out)
    doc = report(result, pick_samples(result, out, args.samples), cfg.sweep.fixed_cell)
    (out / "report.md").write_text(doc, encoding="utf-8")
    print(f"{len(result.rows)} rows -> {out / 'results.csv'}, report -> {out / 'report.md'}")
    return 3 if any_flagged(result) else 0


if __name__ == "__main__":
    sys.exit(main())
