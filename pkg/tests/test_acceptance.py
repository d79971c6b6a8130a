"""The ten acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the terminal summary.
Trained models are cached per session, so criteria 6 and 7 share runs.
"""

import functools
import random
import time

import pytest

from treeinsert.corpus import default_spec, generate, split
from treeinsert.decoder import DecodeConfig, decode, decode_corpus
from treeinsert.encoder import Encoder, EncoderConfig, Vocab, oracle_scorer
from treeinsert.evaluation import evaluate, exact_match, span_prf, step_count_comparison, validity_rate
from treeinsert.insertion import Ordering, apply, decompose, reconstruct, valid_spans
from treeinsert.training import TrainConfig, build_instances, grad_check, train
from treeinsert.tree import Format, from_linear, parse_linearized, serialize, to_linear

from .conftest import ACCEPTANCE
from .fixtures import QUALITATIVE, SPAN_FIXTURES, brute_prf
from .strategies import HOME
from .test_evaluation import _fixture

pytestmark = pytest.mark.slow

# pinned after the first verified run; see the decisions ledger
EM_THRESHOLD = 0.95
ORDERING_TOLERANCE = 0.02
SEEDS = (0, 1, 2)


def criterion(n, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                ACCEPTANCE[n] = (False, f"{title}: {type(exc).__name__}: {str(exc).splitlines()[0][:200]}")
                raise
            ACCEPTANCE[n] = (True, f"{title}: {detail}")

        return run

    return wrap


def mixed_trees(n, seed=0):
    """Half TOP, half NER, with nesting and depth drawn per chunk."""
    rng = random.Random(seed)
    out = []
    while len(out) < n:
        profile = rng.choice(["top", "ner"])
        spec = default_spec(profile, nesting_prob=rng.uniform(0.0, 0.9), max_depth=rng.randint(1, 5))
        out.extend(generate(spec, 100, seed=rng.randrange(2**31)))
    return out[:n]


@pytest.fixture(scope="session")
def trees_10k():
    return mixed_trees(10_000)


@pytest.fixture(scope="session")
def default_corpus():
    trees = generate(default_spec("top"), 2400)
    return split(trees, [2000, 200, 200], seed=0)


_RUNS = {}


def trained(corpus, ordering, seed):
    key = (ordering, seed)
    if key not in _RUNS:
        tr, va, te = corpus
        t0 = time.perf_counter()
        res = train(tr, EncoderConfig(), TrainConfig(ordering=ordering, seed=seed), valid=va)
        seconds = time.perf_counter() - t0
        run = decode_corpus(res.model, [t.leaves() for t in te], DecodeConfig(record_trace=False))
        _RUNS[key] = (res, evaluate(run.trees, te, run.raw), seconds)
    return _RUNS[key]


@criterion(1, "round trips on 10,000 mixed trees")
def test_c1_round_trips(trees_10k):
    t0 = time.perf_counter()
    failures = 0
    for t in trees_10k:
        for fmt in Format:
            failures += parse_linearized(serialize(t, fmt), fmt, t.profile) != t
        failures += from_linear(to_linear(t), t.profile) != t
    seconds = time.perf_counter() - t0
    assert failures == 0, f"{failures} failures"
    assert seconds < 30, f"{seconds:.1f}s"
    return f"0 failures, {seconds:.1f}s"


@criterion(2, "reconstruction identity, both orderings")
def test_c2_reconstruction(trees_10k):
    t0 = time.perf_counter()
    failures = 0
    for t in trees_10k:
        for o in Ordering:
            pairs = decompose(t, o)
            for partial, step in pairs:
                failures += (step.i, step.j) not in valid_spans(partial)
            failures += reconstruct(t.leaves(), [s for _, s in pairs], t.profile) != t
    seconds = time.perf_counter() - t0
    assert failures == 0, f"{failures} failures"
    assert seconds < 60, f"{seconds:.1f}s"
    return f"0 failures, {seconds:.1f}s"


@criterion(3, "oracle decoding on 1,000 trees")
def test_c3_oracle_end_to_end():
    golds = generate(default_spec("top", nesting_prob=0.5), 500, seed=3) + \
        generate(default_spec("ner", nesting_prob=0.5), 500, seed=3)
    hits = calls_ok = 0
    for g in golds:
        scorer = oracle_scorer(g)
        res = decode(scorer, g.leaves(), DecodeConfig(record_trace=False), g.profile)
        hits += exact_match(res.tree, g)
        calls_ok += scorer.calls == res.scorer_calls == len(g.nonterminals()) + 1
    assert hits == len(golds), f"EM {hits / len(golds)}"
    assert calls_ok == len(golds), f"{len(golds) - calls_ok} step-count violations"
    return "EM 1.0, scorer calls = non-terminals + 1 for all"


@criterion(4, "validity with an untrained scorer")
def test_c4_validity_untrained():
    corpus = generate(default_spec("top"), 1000, seed=4)
    model = Encoder.create(EncoderConfig(), Vocab.from_trees(corpus), seed=4)
    config = DecodeConfig(record_trace=False)
    raws, within = [], 0
    for t in corpus:
        res = decode(model, t.leaves(), config)
        raws.append(serialize(res.tree))
        within += res.scorer_calls <= config.steps_for(len(t.leaves()))
    rate = validity_rate(raws)
    assert rate == 1.0, f"validity {rate}"
    assert within == len(corpus)
    return f"validity 1.0 over {len(corpus)}, all within max_steps"


@criterion(5, "gradient check")
def test_c5_grad_check():
    tiny = EncoderConfig(d_model=16, n_layers=2, n_heads=4, d_ff=32, max_len=64, label_head_hidden=16,
                         dropout=0.0, attn_dropout=0.0)
    trees = generate(default_spec("top"), 3, seed=5)
    model = Encoder.create(tiny, Vocab.from_trees(trees), seed=0)
    insts = build_instances(trees)
    t0 = time.perf_counter()
    # at 1e-3 the central difference's own truncation error reaches ~1e-4 on
    # entries far below their tensor's gradient scale; 1e-4 sits between
    # truncation and float64 round-off
    errs = grad_check(model, insts, epsilon=1e-4, samples_per_tensor=200, seed=0)
    seconds = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-4, f"{worst}: {errs[worst]:.2e}"
    assert seconds < 120, f"{seconds:.1f}s"
    return f"max rel. error {errs[worst]:.2e} ({worst}), {len(errs)} tensors, {seconds:.1f}s"


@criterion(6, "learning check on the default grammar")
def test_c6_learning(default_corpus):
    res, report, seconds = trained(default_corpus, "top-down", 0)
    epochs = len(res.history)
    assert report.exact_match >= EM_THRESHOLD, f"test EM {report.exact_match:.3f}"
    assert epochs <= 50 and seconds <= 20 * 60, f"{epochs} epochs, {seconds:.0f}s"
    return f"test EM {report.exact_match:.3f} >= {EM_THRESHOLD}, {epochs} epochs, {seconds:.0f}s"


@criterion(7, "ordering ablation over 3 seeds")
def test_c7_ordering(default_corpus):
    em = {o: [trained(default_corpus, o, s)[1].exact_match for s in SEEDS] for o in ("top-down", "bottom-up")}
    mean = {o: sum(v) / len(v) for o, v in em.items()}
    gap = abs(mean["top-down"] - mean["bottom-up"])
    detail = (f"top-down {mean['top-down']:.3f} {em['top-down']}, "
              f"bottom-up {mean['bottom-up']:.3f} {em['bottom-up']}, gap {100 * gap:.1f} pp")
    assert gap <= ORDERING_TOLERANCE, detail
    return detail


@criterion(8, "flat/composite breakdown")
def test_c8_breakdown():
    trees = generate(default_spec("top", nesting_prob=0.5), 1400, seed=8)
    tr, va, te = split(trees, [1000, 200, 200], seed=8)
    res = train(tr, EncoderConfig(), TrainConfig(epochs=10), valid=va)
    run = decode_corpus(res.model, [t.leaves() for t in te], DecodeConfig(record_trace=False))
    rep = evaluate(run.trees, te, run.raw)
    assert rep.n_flat > 0 and rep.n_composite > 0
    hits_flat = round(rep.em_flat * rep.n_flat)
    hits_comp = round(rep.em_composite * rep.n_composite)
    assert rep.em_flat * rep.n_flat == pytest.approx(hits_flat, abs=1e-9)
    assert rep.em_composite * rep.n_composite == pytest.approx(hits_comp, abs=1e-9)
    assert rep.exact_match == (hits_flat + hits_comp) / rep.n
    return (f"flat {rep.em_flat:.3f} (n={rep.n_flat}), composite {rep.em_composite:.3f} "
            f"(n={rep.n_composite}), total {rep.exact_match:.3f} recombines")


@criterion(9, "step-count ratio")
def test_c9_step_ratio(default_corpus):
    fig = step_count_comparison([HOME])
    assert fig == {"rine_steps": 4, "seq2seq_steps": 14, "ratio": 3.5}
    corpus = step_count_comparison(default_corpus[0])
    assert corpus["ratio"] >= 2.0, corpus
    return f"worked example 4/14/3.5; default corpus ratio {corpus['ratio']:.2f}"


@criterion(10, "metric oracle equivalence")
def test_c10_metric_oracles():
    for profile, pairs in SPAN_FIXTURES:
        preds, golds = _fixture(profile, pairs)
        assert tuple(span_prf(preds, golds)) == brute_prf(pairs), pairs
    for k, (target, s2s, rine) in enumerate(QUALITATIVE[:3]):
        target, s2s, rine = (parse_linearized(x) for x in (target, s2s, rine))
        assert exact_match(rine, target) and not exact_match(s2s, target), f"row {k + 1}"
    return f"{len(SPAN_FIXTURES)} span fixtures exact, qualitative rows 1-3 verdicts reproduced"
