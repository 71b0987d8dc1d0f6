"""Grid sweeps over regimes x corruption cells x seeds, merged into one CSV."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

from .config import REGIMES, ExperimentSpec, RunConfig, SweepGrid, WorkbenchConfig, dump_config
from .experiments import ROW_FIELDS, ExperimentResult, _row_labels, failed_rows, get_workbench, run_cell

log = logging.getLogger(__name__)

_INT_FIELDS = ("seed", "n_ref", "subs", "dels", "ins", "skipped_utts")
_FLOAT_FIELDS = ("pooled_wer", "wall_time_s")


def grid_specs(grid: SweepGrid, config: WorkbenchConfig) -> list[ExperimentSpec]:
    """One spec per distinct cell; corruption-free regimes appear once."""
    common = dict(seeds=tuple(grid.seeds), clean_subset_size=grid.clean_subset_size,
                  pool_fraction=grid.pool_fraction, teacher=grid.teacher,
                  pseudo_label_decode=grid.pseudo_label_decode, config=config)
    fixed_mode, fixed_fraction = grid.fixed_cell
    specs = []
    for regime in grid.regimes:
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}")
        if regime in ("weak_only", "wsp_ft"):
            specs += [ExperimentSpec(regime, m, float(f), **common) for m in grid.modes for f in grid.fractions]
        else:
            specs.append(ExperimentSpec(regime, fixed_mode, float(fixed_fraction), **common))
    return specs


def _sort_key(row):
    frac = row["fraction"]
    return (REGIMES.index(row["regime"]), row["mode"], -1.0 if frac == "" else float(frac),
            row["decode"], row["seed"])


def run_sweep(specs, out_dir=None) -> ExperimentResult:
    """Run every (spec, seed) cell, skipping cells already completed under `out_dir`.

    A failing cell yields flagged rows and the sweep carries on.
    """
    specs = list(specs)
    rows = []
    for spec in specs:
        bench = get_workbench(spec.config, out_dir)
        mode, fraction = _row_labels(spec)
        for seed in spec.seeds:
            try:
                outcome = run_cell(spec, seed, bench)
            except Exception as e:  # recorded, not raised
                log.exception("cell %s seed=%d failed", spec.regime, seed)
                rows += failed_rows(spec, seed, e)
                continue
            rows += [dict(r, mode=mode, fraction=fraction) for r in outcome.rows if r["decode"] in spec.decodes]
    rows.sort(key=_sort_key)
    result = ExperimentResult(rows)
    if out_dir is not None:
        write_results(Path(out_dir) / "results.csv", result)
    return result


def run_config(run: RunConfig, out_dir=None) -> ExperimentResult:
    out = Path(out_dir or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(run), encoding="utf-8")
    return run_sweep(grid_specs(run.sweep, run.workbench), out)


def write_results(path, result: ExperimentResult) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=ROW_FIELDS)
        w.writeheader()
        for r in result.rows:
            w.writerow({k: _fmt(r[k]) for k in ROW_FIELDS})
    tmp.replace(path)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def read_results(path) -> ExperimentResult:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for r in csv.DictReader(f):
            for k in _INT_FIELDS:
                r[k] = int(r[k])
            for k in _FLOAT_FIELDS:
                r[k] = float(r[k])
            r["fraction"] = float(r["fraction"]) if r["fraction"] != "" else ""
            r["flagged"] = r["flagged"] == "True"
            rows.append(r)
    return ExperimentResult(rows)


def any_flagged(result: ExperimentResult) -> bool:
    return any(r["flagged"] for r in result.rows)
