"""Exact match, span P/R/F1, flat/composite breakdown, validity and step counts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

from .tree import Format, ParseTree, Profile, TreeError, is_flat, parse_linearized, spans, to_linear


class EvalError(ValueError):
    pass


class TokenMismatch(EvalError):
    pass


class LengthMismatch(EvalError):
    pass


def exact_match(pred: ParseTree, gold: ParseTree) -> bool:
    if pred.leaves() != gold.leaves():
        raise TokenMismatch(f"prediction leaves {pred.leaves()} differ from gold {gold.leaves()}")
    return pred == gold


def _aligned(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions for {len(golds)} gold trees")


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def span_prf(preds: Sequence[ParseTree | None], golds: Sequence[ParseTree]) -> PRF:
    """Micro-averaged labelled-span precision, recall and F1.

    A missing prediction (None) contributes no spans. Undefined ratios are 0.
    """
    _aligned(preds, golds)
    n_pred = n_gold = n_hit = 0
    for p, g in zip(preds, golds):
        gs = spans(g)
        ps = spans(p) if p is not None else set()
        n_pred += len(ps)
        n_gold += len(gs)
        n_hit += len(ps & gs)
    precision = n_hit / n_pred if n_pred else 0.0
    recall = n_hit / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1)


class Breakdown(NamedTuple):
    em_flat: float
    em_composite: float
    n_flat: int
    n_composite: int


def _em(pred: ParseTree | None, gold: ParseTree) -> bool:
    return pred is not None and exact_match(pred, gold)


def breakdown(preds: Sequence[ParseTree | None], golds: Sequence[ParseTree]) -> Breakdown:
    """EM within the gold-flat and gold-composite buckets; NaN marks an empty bucket."""
    _aligned(preds, golds)
    flat = [_em(p, g) for p, g in zip(preds, golds) if is_flat(g)]
    comp = [_em(p, g) for p, g in zip(preds, golds) if not is_flat(g)]
    return Breakdown(
        sum(flat) / len(flat) if flat else math.nan,
        sum(comp) / len(comp) if comp else math.nan,
        len(flat),
        len(comp),
    )


def rine_steps(tree: ParseTree) -> int:
    return len(tree.nonterminals()) + 1


def seq2seq_steps(tree: ParseTree) -> int:
    return len(to_linear(tree)) + 1


def step_count_comparison(golds: Sequence[ParseTree]) -> dict:
    """Mean decoding steps: one per label plus EoP, against one per output element plus EOS."""
    if not golds:
        raise EvalError("no trees")
    rine = sum(rine_steps(t) for t in golds) / len(golds)
    s2s = sum(seq2seq_steps(t) for t in golds) / len(golds)
    return {"rine_steps": rine, "seq2seq_steps": s2s, "ratio": s2s / rine}


def validity_rate(raw_outputs: Sequence[str], profile: Profile = Profile.TOP) -> float | None:
    """Fraction of linearized strings that parse as valid trees; None for no outputs."""
    if not raw_outputs:
        return None
    ok = 0
    for raw in raw_outputs:
        if not raw.strip():
            continue
        try:
            parse_linearized(raw, Format.LABELED, profile)
            ok += 1
        except (TreeError, ValueError):
            pass
    return ok / len(raw_outputs)


@dataclass
class EvalReport:
    n: int
    exact_match: float
    validity_rate: float | None
    em_flat: float
    em_composite: float
    span_precision: float
    span_recall: float
    span_f1: float
    n_flat: int
    n_composite: int
    precision_defined: bool = True
    mean_decode_steps: float | None = None
    sentences_per_second: float | None = None
    step_counts: dict = field(default_factory=dict)

    FIELDS = (
        "n", "exact_match", "validity_rate", "em_flat", "em_composite", "n_flat", "n_composite",
        "span_precision", "span_recall", "span_f1", "mean_decode_steps", "sentences_per_second",
    )

    def to_dict(self) -> dict:
        d = asdict(self)
        # NaN is not valid JSON; empty buckets are reported as null
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self) -> list[tuple[str, str]]:
        def fmt(v):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                return "n/a"
            return f"{v:.4f}" if isinstance(v, float) else str(v)

        return [(k, fmt(getattr(self, k))) for k in self.FIELDS]

    def to_table(self) -> str:
        width = max(len(k) for k in self.FIELDS)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in self.rows())

    def to_tsv(self) -> str:
        return "metric\tvalue\n" + "\n".join(f"{k}\t{v}" for k, v in self.rows()) + "\n"


def evaluate(preds: Sequence[ParseTree | None], golds: Sequence[ParseTree],
             raw_outputs: Sequence[str] | None = None, mean_decode_steps: float | None = None,
             sentences_per_second: float | None = None) -> EvalReport:
    _aligned(preds, golds)
    if not golds:
        raise EvalError("empty evaluation set")
    profile = golds[0].profile
    em = sum(_em(p, g) for p, g in zip(preds, golds)) / len(golds)
    bd = breakdown(preds, golds)
    prf = span_prf(preds, golds)
    if raw_outputs is None:
        raw_outputs = ["" if p is None else str(p) for p in preds]
    return EvalReport(
        n=len(golds),
        exact_match=em,
        validity_rate=validity_rate(raw_outputs, profile),
        em_flat=bd.em_flat,
        em_composite=bd.em_composite,
        span_precision=prf.precision,
        span_recall=prf.recall,
        span_f1=prf.f1,
        n_flat=bd.n_flat,
        n_composite=bd.n_composite,
        precision_defined=any(p is not None and spans(p) for p in preds),
        mean_decode_steps=mean_decode_steps,
        sentences_per_second=sentences_per_second,
        step_counts=step_count_comparison(golds),
    )
