import csv
import dataclasses
import json

import pytest

from wspbench.acoustic import TrainConfig
from wspbench.harness.cli import main
from wspbench.harness.config import (
    ConfigError,
    DataConfig,
    ExperimentSpec,
    ModelConfig,
    RunConfig,
    SweepGrid,
    WorkbenchConfig,
    dump_config,
    load_config,
)
from wspbench.harness.experiments import (
    ROW_FIELDS,
    Workbench,
    cell_key,
    read_hyps,
    report_from_hyps,
    run_cell,
    run_direct_ft,
    run_self_training,
    run_weak_only,
    run_wsp_ft,
)
from wspbench.harness.report import cell, recompute, render_sample, report
from wspbench.harness.sweep import grid_specs, read_results, run_sweep
from wspbench.decode import DecoderConfig
from wspbench.textkit import normalize

TINY = WorkbenchConfig(
    data=DataConfig(n_train=40, n_dev=8, n_test=8, len_min=1, len_max=3, vocab_size=50),
    model=ModelConfig(hidden=16),
    pretrain=TrainConfig(max_epochs=2),
    finetune=TrainConfig(lr=1e-4, max_epochs=1),
    decoder=DecoderConfig(beam_width=4),
)


def tiny_spec(**kw):
    return ExperimentSpec(config=TINY, seeds=(0,), clean_subset_size=10, **kw)


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    grid = SweepGrid(seeds=(0,), fractions=(0.0, 0.5), clean_subset_size=10)
    result = run_sweep(grid_specs(grid, TINY), out)
    return out, result


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec(regime="nope")
    with pytest.raises(ConfigError):
        ExperimentSpec(fraction=0.3)
    with pytest.raises(ConfigError):
        ExperimentSpec(mode="partial")
    assert ExperimentSpec(decode="lm").decodes == ("lm",)


def test_config_yaml_round_trip(tmp_path):
    cfg = RunConfig(workbench=TINY, out_dir=str(tmp_path))
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("workbench:\n  data:\n    n_trian: 5\n")
    with pytest.raises(ConfigError, match="n_trian"):
        load_config(path)


def test_zero_fraction_cells_share_a_key():
    a = cell_key(tiny_spec(mode="full", fraction=0.0), 0)
    b = cell_key(tiny_spec(mode="random", fraction=0.0), 0)
    assert a == b
    assert cell_key(tiny_spec(mode="full", fraction=0.5), 0) != cell_key(tiny_spec(mode="random", fraction=0.5), 0)
    assert cell_key(tiny_spec(), 0) != cell_key(tiny_spec(), 1)


def test_sweep_cardinality(sweep_dir):
    _, result = sweep_dir
    weak = result.select(regime="weak_only")
    # 2 modes x 2 fractions x 1 seed x 2 decodes
    assert len(weak) == 8
    assert len(result.select(regime="direct_ft")) == 2
    assert {tuple(r) for r in result.rows} == {ROW_FIELDS}


def test_rows_match_persisted_hypotheses(sweep_dir):
    out, result = sweep_dir
    for r in result.rows:
        hyps = read_hyps(out / "cells" / r["cell_id"] / "hyps.jsonl")[r["decode"]]
        rep = report_from_hyps(hyps)
        assert (rep.wer, rep.subs, rep.dels, rep.ins, rep.n_ref) == (
            r["pooled_wer"], r["subs"], r["dels"], r["ins"], r["n_ref"])
        assert r["flagged"] == (r["pooled_wer"] >= 0.95 or bool(r["note"]))


def test_csv_round_trip_and_resume(sweep_dir):
    out, result = sweep_dir
    assert read_results(out / "results.csv").rows == result.rows
    before = (out / "results.csv").read_text()
    again = run_sweep(grid_specs(SweepGrid(seeds=(0,), fractions=(0.0, 0.5), clean_subset_size=10), TINY), out)
    assert again.rows == result.rows
    assert (out / "results.csv").read_text() == before


def test_rerun_is_deterministic_in_a_fresh_directory(tmp_path):
    spec = tiny_spec(mode="full", fraction=0.5)
    rows = []
    for name in ("a", "b"):
        bench = Workbench(TINY, tmp_path / name)
        outcome = run_cell(spec.with_(regime="wsp_ft"), 0, bench)
        rows.append([{k: v for k, v in r.items() if k != "wall_time_s"} for r in outcome.rows])
        rows.append((tmp_path / name / "cells" / outcome.key / "hyps.jsonl").read_text())
    assert rows[0] == rows[2] and rows[1] == rows[3]


def test_wsp_ft_with_empty_clean_subset_is_identity():
    spec = tiny_spec(mode="random", fraction=0.5)
    base = run_weak_only(spec)
    ft = run_wsp_ft(spec.with_(clean_subset_size=0))
    strip = lambda rows: [(r["decode"], r["pooled_wer"], r["subs"], r["dels"], r["ins"]) for r in rows]
    assert strip(base.rows) == strip(ft.rows)


def test_self_training_with_empty_pool_equals_direct():
    spec = tiny_spec()
    direct = run_direct_ft(spec)
    st = run_self_training(spec.with_(pool_fraction=0.0))
    strip = lambda rows: [(r["decode"], r["pooled_wer"], r["subs"], r["dels"], r["ins"]) for r in rows]
    assert strip(direct.rows) == strip(st.rows)


def test_degenerate_teacher_flags_self_training():
    spec = tiny_spec()
    result = run_self_training(spec)
    teacher = run_direct_ft(spec)
    if teacher.wer(decode="lm", seed=0) >= 0.95:
        assert all(r["flagged"] and "degenerate_teacher" in r["note"] for r in result.rows)


def test_report_format(sweep_dir):
    out, result = sweep_dir
    doc = report(recompute(result, out), [("sample", normalize("everybody talks about happiness these days"),
                                           normalize("e bod tal abou hapne thel da"))])
    assert "(116.67%)" in doc
    assert "| 0% |" in doc and "| 50% |" in doc
    assert cell(0.074, 0.0677) == "7.40/6.77"
    assert "## Sample transcriptions" not in report(result, [])


def test_render_sample():
    s = render_sample(["a", "b"], ["a", "c"])
    assert s.endswith("(50.00%)")


def test_report_requires_rows():
    from wspbench.harness.experiments import ExperimentResult

    with pytest.raises(ValueError):
        report(ExperimentResult([]))


# -- CLI ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = RunConfig(workbench=TINY, sweep=SweepGrid(regimes=("weak_only",), fractions=(0.0,), seeds=(0,)),
                    out_dir=str(root / "sweep"))
    path = root / "cfg.yaml"
    path.write_text(dump_config(cfg))
    assert main(["synth", "--config", str(path), "--out-dir", str(root / "data")]) == 0
    return root, path


def test_cli_pipeline(cli_env):
    root, cfg = cli_env
    data = root / "data"
    assert main(["corrupt", str(data / "train" / "manifest.jsonl"), "--config", str(cfg),
                 "--out-dir", str(root / "weak"), "--mode", "full", "--fraction", "0.5", "--seed", "3"]) == 0
    weak = [json.loads(l) for l in (root / "weak" / "manifest.jsonl").read_text().splitlines()]
    gold = [json.loads(l) for l in (data / "train" / "manifest.jsonl").read_text().splitlines()]
    assert sum(w["text"] != g["text"] for w, g in zip(weak, gold)) == 20
    assert main(["train", str(root / "weak" / "manifest.jsonl"), "--dev", str(data / "dev" / "manifest.jsonl"),
                 "--config", str(cfg), "--out-dir", str(root / "model")]) == 0
    assert main(["decode", str(root / "model" / "model.wspm"), str(data / "test" / "manifest.jsonl"),
                 "--lm", str(data / "lm.txt"), "--decode", "both", "--config", str(cfg),
                 "--out-dir", str(root / "hyps")]) == 0
    assert main(["score", str(root / "hyps" / "hyps.jsonl"), "--out-dir", str(root / "hyps")]) == 0
    scores = json.loads((root / "hyps" / "score.json").read_text())
    assert set(scores) == {"greedy", "lm"}


def test_cli_sweep_and_report(cli_env):
    root, cfg = cli_env
    code = main(["sweep", "--config", str(cfg)])
    assert code in (0, 3)
    rows = list(csv.DictReader(open(root / "sweep" / "results.csv")))
    assert len(rows) == 4
    assert (code == 3) == any(r["flagged"] == "True" for r in rows)
    assert main(["report", "--config", str(cfg)]) == 0
    assert "greedy/LM" in (root / "sweep" / "report.md").read_text()


def test_cli_exit_codes(cli_env, tmp_path):
    root, cfg = cli_env
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["decode", "m", "x", "--decode", "lm", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("workbench: {nope: 1}\n")
    assert main(["sweep", "--config", str(bad)]) == 1
    assert main(["score", str(tmp_path / "missing.jsonl")]) == 2
    junk = tmp_path / "junk.wspm"
    junk.write_bytes(b"junk")
    assert main(["decode", str(junk), str(root / "data" / "test" / "manifest.jsonl"),
                 "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
