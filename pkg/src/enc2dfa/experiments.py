"""Experiment presets and a run cache shared by the scripts and the acceptance suite."""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path
from typing import Optional

from .dataset import DatasetConfig
from .dcsa import DistillConfig
from .pipeline import ConsistencyReport, PipelineConfig, run_pipeline
from .transformer import TrainConfig

# classes with fewer than 1000 distinct strings up to length 24
SPARSE_GRAMMARS = frozenset({"tomita1", "tomita2", "aa_star", "abab_star"})

LEARNABLE = ("tomita1", "tomita2", "tomita4", "tomita7", "mod2", "mod4", "aa_star", "abab_star")
HARD = ("tomita3", "d2", "d4")
UNLEARNABLE = ("parity", "tomita5", "tomita6", "mod3", "mod5")


@dataclasses.dataclass(frozen=True)
class Budget:
    """Training lengths for a sweep; the defaults are the full protocol."""

    train_epochs: int = 200
    distill_epochs: int = 200
    stop_loss: Optional[float] = None
    size: int = 2000
    max_len: int = 24


# single-CPU budget used by the acceptance suite
DESK = Budget(train_epochs=100, distill_epochs=60, stop_loss=0.01)


def experiment_config(grammar: str, budget: Budget = Budget(), kind: str = "rnn", alpha: float = 1.0,
                      seed: int = 0) -> PipelineConfig:
    policy = "repeat" if grammar in SPARSE_GRAMMARS else "error"
    return PipelineConfig(
        grammar=grammar,
        dataset=DatasetConfig(size=budget.size, max_len=budget.max_len, sparse_policy=policy),
        train=TrainConfig(epochs=budget.train_epochs, stop_loss=budget.stop_loss),
        dcsa_kind=kind,
        distill=DistillConfig(epochs=budget.distill_epochs, alpha=alpha, stop_loss=budget.stop_loss),
        seed=seed,
    )


def default_runs_dir() -> Path:
    return Path(os.environ.get("ENC2DFA_RUNS", "runs"))


def run_dir(cfg: PipelineConfig, root=None) -> Path:
    root = Path(root) if root is not None else default_runs_dir()
    return root / f"{cfg.grammar or 'regex'}-{cfg.dcsa_kind}-{cfg.digest()}"


def shares_transformer(a: PipelineConfig, b: PipelineConfig) -> bool:
    keys = ("grammar", "regex", "alphabet", "dataset", "transformer", "train", "seed")
    return all(getattr(a, k) == getattr(b, k) for k in keys)


def run_cached(cfg: PipelineConfig, root=None, reuse_from: Optional[PipelineConfig] = None) -> tuple[ConsistencyReport, Path]:
    """Run ``cfg`` unless a finished run with the same digest exists.

    ``reuse_from`` names an earlier config whose dataset and transformer
    this run may share (it is run first if needed).
    """
    out = run_dir(cfg, root)
    report_path = out / "report.json"
    if report_path.exists():
        with open(report_path, encoding="utf-8") as f:
            return ConsistencyReport.from_json(json.load(f)), out
    reuse = None
    if reuse_from is not None:
        if not shares_transformer(cfg, reuse_from):
            raise ValueError("reuse_from must share the data and transformer configuration")
        _, reuse = run_cached(reuse_from, root)
    return run_pipeline(cfg, out_dir=out, reuse_dir=reuse), out
