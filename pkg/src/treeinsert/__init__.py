"""Insertion-based semantic parsing: trees, insertion steps, a small encoder and a greedy decoder."""

from .corpus import GrammarSpec, default_spec, generate, read_jsonl, read_top_tsv, split, write_jsonl
from .decoder import DecodeConfig, DecodeResult, decode, decode_corpus
from .encoder import Encoder, EncoderConfig, ScorerOutput, Vocab, oracle_scorer
from .evaluation import EvalReport, breakdown, evaluate, exact_match, span_prf, step_count_comparison, validity_rate
from .insertion import InsertionStep, Ordering, apply, decompose, reconstruct, valid_spans
from .training import TrainConfig, build_instances, grad_check, train
from .tree import (
    Close,
    Format,
    Label,
    Node,
    Open,
    ParseTree,
    Profile,
    Tok,
    TreeError,
    depth,
    from_linear,
    is_flat,
    parse_linearized,
    serialize,
    spans,
    to_linear,
)

__version__ = "0.1.0"
