"""DFA extraction from encoder-only transformers through a distilled continuous-state automaton."""

from .automata import Alphabet, Dfa, equivalent, minimize, parse_regex, regex_to_dfa, to_dot
from .dataset import DatasetConfig, generate_dataset, load_dataset, save_dataset
from .dcsa import DcsaKind, DcsaModel, DistillConfig, build_dcsa, distill
from .extraction import ExtractionBudget, extract_dfa_from_dcsa
from .grammars import BUILTIN_NAMES, builtin_language
from .lstar import lstar
from .metrics import consistency
from .pipeline import ConsistencyReport, PipelineConfig, run_pipeline
from .transformer import TrainConfig, TransformerConfig, build_transformer, train_transformer

__version__ = "0.1.0"
