"""Greedy recursive insertion decoding.

Starting from the bare utterance, the scorer is queried for a label and two
gap positions; the best insertion is applied and the grown sequence is fed
back until EoP is the most likely label.

In constrained mode (the default) the position pair is the best *valid* one:
``start[i] + end[j]`` is maximised in log space over spans that keep the
brackets balanced, so every output is a well-formed tree whatever the scorer
does. In unconstrained mode the start and end argmaxes are taken
independently and a bad pair raises :class:`InvalidInsertion`.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .encoder import ScorerOutput
from .insertion import InsertionError, InsertionStep, apply, bare, valid_span_mask
from .tree import (
    Close,
    Label,
    LinearSeq,
    Open,
    ParseTree,
    Profile,
    TreeError,
    from_linear,
    seq_to_string,
)

Scorer = Callable[[LinearSeq], ScorerOutput]


class DecodeError(RuntimeError):
    pass


class InvalidInsertion(DecodeError):
    """Unconstrained decoding produced an insertion that breaks the tree.

    ``raw`` holds the linearized output as it would be emitted, brackets and
    all, so validity can still be measured on it.
    """

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass
class DecodeConfig:
    max_steps: int | None = None  # None: 4 * n_tokens + 8
    constrain_to_valid: bool = True
    record_trace: bool = True

    def steps_for(self, n_tokens: int) -> int:
        steps = 4 * n_tokens + 8 if self.max_steps is None else self.max_steps
        if steps < 1:
            raise ValueError("max_steps must be at least 1")
        return steps


@dataclass
class TraceEntry:
    step: InsertionStep | None  # None marks EoP
    label_logprob: float
    start_logprob: float | None
    end_logprob: float | None
    seq_len_before: int
    seq_before: LinearSeq = ()
    forced: bool = False


@dataclass
class DecodeResult:
    tree: ParseTree
    seq: LinearSeq
    trace: list[TraceEntry]
    scorer_calls: int
    cap_hit: bool = False
    forced_root: bool = False

    @property
    def steps(self) -> list[InsertionStep]:
        return [e.step for e in self.trace if e.step is not None]


def _match(seq: Sequence) -> dict[int, int]:
    out, stack = {}, []
    for k, e in enumerate(seq):
        if isinstance(e, Open):
            stack.append(k)
        elif isinstance(e, Close):
            out[stack.pop()] = k
    return out


def _intent_rooted(seq: Sequence) -> bool:
    """True iff one intent bracket spans the whole sequence."""
    return (bool(seq) and isinstance(seq[0], Open) and seq[0].label.is_intent
            and _match(seq).get(0) == len(seq) - 1)


def best_span(seq: LinearSeq, out: ScorerOutput, label: Label) -> tuple[int, int] | None:
    """Highest-scoring admissible ``(i, j)`` for ``label``, or None.

    Besides bracket balance, a label may not directly wrap, or be directly
    wrapped by, itself over an identical span. This keeps a stuck scorer from
    nesting the same bracket forever.
    """
    m = len(seq)
    mask = valid_span_mask(seq)
    match = _match(seq)
    for o, c in match.items():
        if seq[o].label == label:
            mask[o + 1, c] = False
            mask[o, c + 1] = False
    if not mask.any():
        return None
    score = out.start_logprobs[:, None] + out.end_logprobs[None, :]
    score = np.where(mask, score, -np.inf)
    flat = int(np.argmax(score))
    if not np.isfinite(score.flat[flat]):
        # every admissible pair has zero probability; fall back to the first one
        flat = int(np.argmax(mask))
    return divmod(flat, m + 1)


def _raw_insert(seq: LinearSeq, label: Label, i: int, j: int) -> str:
    elems = list(seq)
    elems.insert(i, Open(label))
    elems.insert(min(j + 1, len(elems)), Close(label))
    return seq_to_string(elems)


def decode(scorer: Scorer, tokens: Sequence[str], config: DecodeConfig | None = None,
           profile: Profile = Profile.TOP) -> DecodeResult:
    if not tokens:
        raise ValueError("cannot decode an empty utterance")
    config = config or DecodeConfig()
    max_steps = config.steps_for(len(tokens))
    max_elems = getattr(scorer, "max_elements", None)
    seq: LinearSeq = bare(tokens)
    trace: list[TraceEntry] = []
    calls = 0
    cap_hit = False
    last: ScorerOutput | None = None

    while True:
        if calls >= max_steps or (max_elems is not None and len(seq) > max_elems):
            cap_hit = True
            break
        out = scorer(seq)
        last = out
        calls += 1
        labels = out.labels
        if config.constrain_to_valid:
            chosen = None
            for k in np.argsort(-out.label_logprobs, kind="stable"):
                label = labels[int(k)]
                if label.is_eop:
                    break
                span = best_span(seq, out, label)
                if span is not None:
                    chosen = (int(k), label, *span)
                    break
            if chosen is None:
                eop = next(k for k, l in enumerate(labels) if l.is_eop)
                if config.record_trace:
                    trace.append(TraceEntry(None, float(out.label_logprobs[eop]), None, None, len(seq), seq))
                break
            k, label, i, j = chosen
        else:
            k = int(np.argmax(out.label_logprobs))
            label = labels[k]
            if label.is_eop:
                if config.record_trace:
                    trace.append(TraceEntry(None, float(out.label_logprobs[k]), None, None, len(seq), seq))
                break
            i = int(np.argmax(out.start_logprobs))
            j = int(np.argmax(out.end_logprobs))
        step = InsertionStep(label, i, j)
        try:
            new_seq = apply(seq, step)
        except InsertionError as exc:
            raise InvalidInsertion(f"step {calls}: {step}: {exc}", _raw_insert(seq, label, i, j)) from exc
        if config.record_trace:
            trace.append(TraceEntry(step, float(out.label_logprobs[k]), float(out.start_logprobs[i]),
                                    float(out.end_logprobs[j]), len(seq), seq))
        seq = new_seq

    forced = False
    if profile is Profile.TOP and config.constrain_to_valid and not _intent_rooted(seq):
        # close the tree with the most likely intent over everything
        if last is None:
            last = scorer(seq)
            calls += 1
        intents = [k for k, l in enumerate(last.labels) if l.is_intent]
        if not intents:
            raise DecodeError("scorer has no intent labels to root a TOP tree")
        k = max(intents, key=lambda k: last.label_logprobs[k])
        step = InsertionStep(last.labels[k], 0, len(seq))
        if config.record_trace:
            trace.append(TraceEntry(step, float(last.label_logprobs[k]), None, None, len(seq), seq, forced=True))
        seq = apply(seq, step)
        forced = True
    try:
        tree = from_linear(seq, profile)
    except TreeError as exc:
        raise InvalidInsertion(f"output is not a valid tree: {exc}", seq_to_string(seq)) from exc
    return DecodeResult(tree, seq, trace, calls, cap_hit, forced)


@dataclass
class CorpusDecode:
    results: list[DecodeResult | None]
    errors: dict[int, str] = field(default_factory=dict)
    raw: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def trees(self) -> list[ParseTree | None]:
        return [r.tree if r is not None else None for r in self.results]

    @property
    def sentences_per_second(self) -> float:
        return len(self.results) / self.seconds if self.seconds > 0 else float("inf")

    @property
    def mean_steps(self) -> float:
        done = [r.scorer_calls for r in self.results if r is not None]
        return float(np.mean(done)) if done else float("nan")


def decode_corpus(scorer: Scorer | Sequence[Scorer], corpus_tokens: Sequence[Sequence[str]],
                  config: DecodeConfig | None = None, profile: Profile = Profile.TOP,
                  workers: int = 1) -> CorpusDecode:
    """Decode sentences one at a time, optionally across worker threads.

    ``scorer`` may also be a per-sentence sequence of scorers (used with oracle
    scorers). Per-sentence failures are collected, not raised; order is kept.
    """
    scorers = list(scorer) if isinstance(scorer, (list, tuple)) else None

    def one(k: int):
        s = scorers[k] if scorers is not None else scorer
        try:
            res = decode(s, corpus_tokens[k], config, profile)
            return res, None, seq_to_string(res.seq)
        except InvalidInsertion as exc:
            return None, f"{type(exc).__name__}: {exc}", exc.raw
        except Exception as exc:  # noqa: BLE001 - reported per sentence
            return None, f"{type(exc).__name__}: {exc}", ""

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, range(len(corpus_tokens))))
    else:
        outs = [one(k) for k in range(len(corpus_tokens))]
    seconds = time.perf_counter() - t0
    run = CorpusDecode([o[0] for o in outs], seconds=seconds, raw=[o[2] for o in outs])
    run.errors = {k: o[1] for k, o in enumerate(outs) if o[1] is not None}
    return run
