"""End-to-end run: language -> dataset -> transformer -> DCSA -> extracted DFA -> report.

Every stage writes its artifact into the output directory; the report holds
the consistency rates of the four label functions (ground truth L,
transformer T, DCSA D, extracted DFA A) on both splits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .automata import Alphabet, Dfa, minimize, parse_regex, regex_to_dfa, to_dot
from .dataset import DatasetConfig, SequenceDataset, generate_dataset, load_dataset, save_dataset
from .dcsa import DcsaKind, DcsaModel, DistillConfig, build_dcsa, distill, rep_state_diff
from .extraction import ExtractionBudget, extract_dfa_from_dcsa
from .grammars import builtin_language
from .metrics import agreement, labels, triangle_bound_holds
from .transformer import TrainConfig, TransformerConfig, TransformerModel, build_transformer, train_transformer

log = logging.getLogger(__name__)

SEED_OFFSETS = {"data": 1, "transformer": 2, "dcsa": 3, "extraction": 4}
ARTIFACTS = ("config.json", "dataset.jsonl", "transformer.json", "dcsa.json", "dfa.json", "dfa.dot",
             "extraction_log.json", "report.json")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    """Full run description; sub-config seeds are overwritten from ``seed``."""

    grammar: Optional[str] = None
    regex: Optional[str] = None
    alphabet: Optional[str] = None  # required with ``regex``
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    # TransformerConfig fields other than vocab_size, which follows the alphabet
    transformer: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    dcsa_kind: str = "rnn"
    distill: DistillConfig = field(default_factory=DistillConfig)
    extraction: ExtractionBudget = field(default_factory=ExtractionBudget)
    out_dir: Optional[str] = None
    seed: int = 0
    learnable_threshold: float = 0.9

    def __post_init__(self):
        if (self.grammar is None) == (self.regex is None):
            raise ValueError("give exactly one of grammar or regex")
        if self.regex is not None and not self.alphabet:
            raise ValueError("a regex needs an alphabet")
        DcsaKind(self.dcsa_kind)
        if "vocab_size" in self.transformer:
            raise ValueError("vocab_size is derived from the alphabet")
        self.transformer_config(self.language().alphabet)
        if not 0 < self.learnable_threshold < 1:
            raise ValueError("learnable_threshold must be in (0, 1)")

    def language(self) -> Dfa:
        if self.grammar is not None:
            return builtin_language(self.grammar)
        alphabet = Alphabet(self.alphabet)
        return minimize(regex_to_dfa(parse_regex(self.regex, alphabet), alphabet))

    def transformer_config(self, alphabet: Alphabet) -> TransformerConfig:
        cfg = TransformerConfig.for_alphabet(alphabet, **self.transformer)
        if cfg.max_len < self.dataset.max_len + 2:
            raise ValueError(f"transformer max_len {cfg.max_len} cannot hold sequences of length "
                             f"{self.dataset.max_len} plus [CLS]/[SEP]")
        return cfg

    def stage_seed(self, stage: str) -> int:
        return self.seed + SEED_OFFSETS[stage]

    def resolved(self) -> "PipelineConfig":
        """Copy with every stage seed derived from the master seed."""
        rep = dataclasses.replace
        return rep(self,
                   dataset=rep(self.dataset, seed=self.stage_seed("data")),
                   train=rep(self.train, seed=self.stage_seed("transformer")),
                   distill=rep(self.distill, seed=self.stage_seed("dcsa")),
                   extraction=rep(self.extraction, probe_max_len=2 * self.dataset.max_len))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        for name, sub in (("dataset", DatasetConfig), ("train", TrainConfig),
                          ("distill", DistillConfig), ("extraction", ExtractionBudget)):
            if name in obj:
                obj[name] = sub(**obj[name])
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def digest(self) -> str:
        body = {k: v for k, v in self.to_json().items() if k != "out_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# evaluation


def split_metrics(L, T, D, A, items) -> dict:
    """All four label functions on the same item list."""
    lab = {"L": [it.label for it in items], "T": labels(T, items), "D": labels(D, items), "A": labels(A, items)}
    counts = {k: len(v) for k, v in lab.items()}
    if len(set(counts.values())) != 1:
        raise AssertionError(f"label functions evaluated on different item counts: {counts}")
    if L is not None:
        truth = labels(L, items)
        if list(truth) != list(lab["L"]):
            raise AssertionError("dataset labels disagree with the language DFA")
    out = {
        "n_items": len(items),
        "C_LT": agreement(lab["L"], lab["T"]),
        "C_TD": agreement(lab["T"], lab["D"]),
        "C_TA": agreement(lab["T"], lab["A"]),
        "C_LA": agreement(lab["L"], lab["A"]),
        "C_LD": agreement(lab["L"], lab["D"]),
    }
    if not triangle_bound_holds(out["C_LT"], out["C_TA"], out["C_LA"]):
        raise AssertionError(f"metric coherence violated: {out}")
    return out


def evaluate_models(language: Optional[Dfa], dataset: SequenceDataset, transformer: TransformerModel,
                    dcsa: DcsaModel, dfa: Dfa) -> dict:
    splits = {name: split_metrics(language, transformer, dcsa, dfa, dataset.select(name))
              for name in ("train", "test")}
    test_seqs = [it.tokens for it in dataset.test]
    return {
        "splits": splits,
        "diff1": rep_state_diff(transformer, dcsa, test_seqs, 1),
        "diff2": rep_state_diff(transformer, dcsa, test_seqs, 2),
    }


@dataclass
class ConsistencyReport:
    language: str
    splits: dict
    diff1: float
    diff2: float
    dfa_states: int
    minimal_dfa_states: int
    learnable: bool
    above_half: bool
    verdict: str
    extraction: dict
    history: dict
    timings: dict
    config: dict
    notes: list

    def to_json(self) -> dict:
        return asdict(self)

    def deterministic_view(self) -> dict:
        """The report without wall-clock fields."""
        obj = self.to_json()
        obj.pop("timings")
        obj["extraction"] = {k: v for k, v in obj["extraction"].items() if k != "wall_seconds"}
        return obj

    def summary(self) -> str:
        t = self.splits["test"]
        return (f"{self.language}: test C(L,T)={t['C_LT']:.4f} C(T,D)={t['C_TD']:.4f} "
                f"C(T,A)={t['C_TA']:.4f} C(L,A)={t['C_LA']:.4f} Diff1={self.diff1:.3f} "
                f"Diff2={self.diff2:.3f} |A|={self.dfa_states} ({self.verdict})")

    @classmethod
    def from_json(cls, obj: dict) -> "ConsistencyReport":
        return cls(**obj)


NOTES = [
    "DCSA membership and equivalence queries use an abstraction-based teacher plus a random-probe net",
    "learnability verdict uses test C(L,T) > learnable_threshold; above_half is the C > 1/2 criterion",
    "Rep(x) is computed on [CLS] x [SEP]; the DCSA reads x without specials",
]


# ---------------------------------------------------------------------------
# runner


class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except PipelineError:
            raise
        except Exception as e:
            raise PipelineError(name, e) from e
        finally:
            self.timings[name] = time.perf_counter() - start


def _reuse_ok(reuse_dir: Path, cfg: PipelineConfig) -> bool:
    path = reuse_dir / "config.json"
    if not path.exists():
        return False
    with open(path, encoding="utf-8") as f:
        old = PipelineConfig.from_json(json.load(f)).resolved()
    same = ("grammar", "regex", "alphabet", "dataset", "transformer", "train", "seed")
    return all(getattr(old, k) == getattr(cfg, k) for k in same)


def run_pipeline(config: PipelineConfig, out_dir=None, reuse_dir=None) -> ConsistencyReport:
    """Run every stage and write the artifacts.

    ``reuse_dir`` may point at an earlier run whose dataset and transformer
    were produced by an identical data/transformer configuration; they are
    loaded instead of rebuilt (used for ablations over the DCSA stage).
    """
    cfg = config.resolved()
    out = Path(out_dir or cfg.out_dir or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(config.to_json(), f, indent=2)
    stages = _Stages()
    history = {}

    language = stages.run("language", cfg.language)
    name = cfg.grammar or cfg.regex
    reuse = Path(reuse_dir) if reuse_dir is not None else None
    if reuse is not None and not _reuse_ok(reuse, cfg):
        raise PipelineError("reuse", ValueError(f"{reuse} was produced by a different data/transformer config"))

    if reuse is not None:
        dataset = stages.run("dataset", load_dataset, reuse / "dataset.jsonl")
    else:
        dataset = stages.run("dataset", generate_dataset, language, cfg.dataset)
    save_dataset(dataset, out / "dataset.jsonl")

    if reuse is not None:
        transformer = stages.run("transformer", TransformerModel.load, reuse / "transformer.json")
        with open(reuse / "report.json", encoding="utf-8") as f:
            history["transformer_loss"] = json.load(f)["history"].get("transformer_loss", [])
    else:
        def train():
            model = build_transformer(cfg.transformer_config(language.alphabet), language.alphabet,
                                      cfg.stage_seed("transformer"))
            return train_transformer(model, dataset, cfg.train)
        transformer, history["transformer_loss"] = stages.run("transformer", train)
    transformer.save(out / "transformer.json")

    def do_distill():
        dcsa = build_dcsa(cfg.dcsa_kind, transformer, cfg.stage_seed("dcsa"))
        return distill(dcsa, transformer, dataset, cfg.distill)
    dcsa, dh = stages.run("distill", do_distill)
    history["distill_loss_d"], history["distill_rep_l1"] = dh["loss_d"], dh["rep_l1"]
    dcsa.save(out / "dcsa.json")

    dfa, xlog = stages.run("extraction", extract_dfa_from_dcsa, dcsa, cfg.extraction, cfg.stage_seed("extraction"))
    dfa.save(out / "dfa.json")
    (out / "dfa.dot").write_text(to_dot(dfa, name="extracted"), encoding="utf-8")
    with open(out / "extraction_log.json", "w", encoding="utf-8") as f:
        json.dump(xlog.to_json(), f, indent=2)

    metrics = stages.run("evaluate", evaluate_models, language, dataset, transformer, dcsa, dfa)
    c_lt = metrics["splits"]["test"]["C_LT"]
    learnable = c_lt > cfg.learnable_threshold
    report = ConsistencyReport(
        language=name,
        splits=metrics["splits"],
        diff1=metrics["diff1"],
        diff2=metrics["diff2"],
        dfa_states=dfa.n_states,
        minimal_dfa_states=language.n_states,
        learnable=learnable,
        above_half=c_lt > 0.5,
        verdict="learnable" if learnable else "not learnable",
        extraction=xlog.to_json(),
        history=history,
        timings=stages.timings,
        config=cfg.to_json(),
        notes=NOTES + (["dataset and transformer reused from " + str(reuse)] if reuse else []),
    )
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2)
    log.info("%s", report.summary())
    return report


def reevaluate(run_dir) -> dict:
    """Reload every artifact of a finished run and recompute its metrics."""
    run_dir = Path(run_dir)
    cfg = PipelineConfig.load(run_dir / "config.json")
    return evaluate_models(cfg.language(), load_dataset(run_dir / "dataset.jsonl"),
                           TransformerModel.load(run_dir / "transformer.json"),
                           DcsaModel.load(run_dir / "dcsa.json"), Dfa.load(run_dir / "dfa.json"))
