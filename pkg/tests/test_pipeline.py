import json

import pytest

from enc2dfa.dataset import DatasetConfig
from enc2dfa.dcsa import DistillConfig
from enc2dfa.extraction import ExtractionBudget
from enc2dfa.pipeline import (
    ARTIFACTS, ConsistencyReport, PipelineConfig, PipelineError, reevaluate, run_pipeline,
)
from enc2dfa.transformer import TrainConfig


def tiny(**over):
    base = dict(grammar="tomita1", dataset=DatasetConfig(size=60, max_len=6, sparse_policy="repeat"),
                transformer={"max_len": 10}, train=TrainConfig(epochs=2), distill=DistillConfig(epochs=2),
                extraction=ExtractionBudget(random_probe_count=200), seed=7)
    base.update(over)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_pipeline(tiny(), out_dir=out)


def test_writes_every_artifact(first_run):
    out, report = first_run
    for name in ARTIFACTS:
        assert (out / name).exists(), name
    assert json.loads((out / "report.json").read_text()) == report.to_json()
    assert "digraph" in (out / "dfa.dot").read_text()


def test_report_contents(first_run):
    _, report = first_run
    for split in ("train", "test"):
        m = report.splits[split]
        assert m["C_LA"] >= m["C_LT"] + m["C_TA"] - 1
    assert report.minimal_dfa_states == 2
    assert report.verdict in ("learnable", "not learnable")
    assert report.learnable == (report.splits["test"]["C_LT"] > 0.9)
    assert len(report.history["transformer_loss"]) == 2
    assert set(report.timings) >= {"dataset", "transformer", "distill", "extraction", "evaluate"}
    assert ConsistencyReport.from_json(report.to_json()) == report
    assert "C(T,A)=" in report.summary()


def test_seeds_follow_the_master_seed(first_run):
    _, report = first_run
    cfg = report.config
    assert (cfg["dataset"]["seed"], cfg["train"]["seed"], cfg["distill"]["seed"]) == (8, 9, 10)
    assert cfg["extraction"]["probe_max_len"] == 12


def test_rerun_is_deterministic(first_run, tmp_path):
    _, report = first_run
    again = run_pipeline(tiny(), out_dir=tmp_path)
    assert again.deterministic_view() == report.deterministic_view()


def test_reevaluate_matches_report(first_run):
    out, report = first_run
    m = reevaluate(out)
    assert m["splits"] == report.splits
    assert m["diff1"] == report.diff1 and m["diff2"] == report.diff2


def test_reuse_keeps_transformer(first_run, tmp_path):
    out, report = first_run
    ablated = run_pipeline(tiny(distill=DistillConfig(epochs=2, alpha=0.0)), out_dir=tmp_path, reuse_dir=out)
    assert (tmp_path / "transformer.json").read_text() == (out / "transformer.json").read_text()
    assert ablated.splits["test"]["C_LT"] == report.splits["test"]["C_LT"]
    assert ablated.history["distill_rep_l1"] == [None, None]
    with pytest.raises(PipelineError):
        run_pipeline(tiny(seed=8), out_dir=tmp_path / "x", reuse_dir=out)


def test_config_round_trip_and_validation(tmp_path):
    cfg = tiny()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert PipelineConfig.load(path) == cfg
    assert PipelineConfig.load(path).digest() == cfg.digest()
    assert tiny(seed=1).digest() != cfg.digest()
    with pytest.raises(ValueError):
        PipelineConfig.from_json({**cfg.to_json(), "bogus": 1})
    with pytest.raises(ValueError):
        tiny(transformer={"max_len": 6})
    with pytest.raises(ValueError):
        PipelineConfig(regex="(ab)*")
    with pytest.raises(ValueError):
        tiny(grammar=None)


def test_regex_language(tmp_path):
    cfg = tiny(grammar=None, regex="(ab)*", alphabet="ab")
    report = run_pipeline(cfg, out_dir=tmp_path)
    assert report.language == "(ab)*" and report.minimal_dfa_states == 3


def test_stage_failure_names_the_stage(tmp_path):
    # 60 balanced items cannot be drawn without repeats from tomita1 up to length 6
    with pytest.raises(PipelineError) as info:
        run_pipeline(tiny(dataset=DatasetConfig(size=60, max_len=6)), out_dir=tmp_path)
    assert info.value.stage == "dataset"
    assert str(info.value).startswith("[dataset] InfeasibleDatasetError")
