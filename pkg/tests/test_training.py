import math

import numpy as np
import pytest

from treeinsert.encoder import Encoder, EncoderConfig, ScorerOutput, Vocab, oracle_scorer
from treeinsert.insertion import Ordering, bare
from treeinsert.training import (
    Adam,
    NonFiniteLoss,
    TrainConfig,
    TrainInstance,
    batch_loss,
    build_instances,
    grad_check,
    inverse_sqrt_lr,
    nll,
    train,
)
from treeinsert.tree import EOP, Format, parse_linearized, to_linear

from .strategies import HOME, HOME_TOKENS, L

TINY = EncoderConfig(d_model=12, n_layers=2, n_heads=3, d_ff=16, max_len=40, label_head_hidden=8,
                     dropout=0.0, attn_dropout=0.0)


def test_instance_counts():
    assert len(build_instances([HOME], Ordering.TOP_DOWN)) == 4
    flat = parse_linearized("[IN:A x y ]", Format.PLAIN)
    assert len(build_instances([flat])) == 2
    assert build_instances([]) == []
    insts = build_instances([HOME, flat])
    assert sum(i.label.is_eop for i in insts) == 2
    assert insts[3].input == to_linear(HOME) and insts[3].start is None


def test_instance_validation():
    with pytest.raises(ValueError):
        TrainInstance(bare(["a"]), EOP, 0, 1)
    with pytest.raises(ValueError):
        TrainInstance(bare(["a"]), L("IN:A"), 1, 1)


def test_loss_zero_under_oracle():
    o = oracle_scorer(HOME)
    for inst in build_instances([HOME]):
        assert nll(o(inst.input), inst) == 0.0


def test_loss_uniform_closed_form():
    labels = (L("IN:A"), L("SL:B"), L("SL:C"), EOP)
    m = 5
    out = ScorerOutput(np.full(4, -math.log(4)), np.full(m + 1, -math.log(m + 1)),
                       np.full(m + 1, -math.log(m + 1)), labels)
    inst = TrainInstance(bare(list("abcde")), L("SL:B"), 1, 3)
    assert nll(out, inst) == pytest.approx(math.log(4) + 2 * math.log(m + 1), abs=1e-12)


def test_loss_eop_single_term():
    labels = (L("IN:A"), EOP)
    out = ScorerOutput(np.log([0.5, 0.5]), np.zeros(1) - 50, np.zeros(1) - 50, labels)
    assert nll(out, TrainInstance(bare(["a"]), EOP)) == pytest.approx(math.log(2))


def test_lr_schedule():
    assert inverse_sqrt_lr(1, 5e-4, 500) == pytest.approx(1e-6)
    assert inverse_sqrt_lr(250, 5e-4, 500) == pytest.approx(2.5e-4)
    assert inverse_sqrt_lr(500, 5e-4, 500) == pytest.approx(5e-4)
    assert inverse_sqrt_lr(2000, 5e-4, 500) == pytest.approx(2.5e-4)


def _model(dtype=np.float64):
    return Encoder.create(TINY, Vocab.from_trees([HOME]), seed=0, dtype=dtype)


def test_batch_loss_matches_per_instance_nll():
    model = _model()
    insts = build_instances([HOME], Ordering.BOTTOM_UP)
    loss, _, parts = batch_loss(model, insts, with_grads=False)
    per = [nll(model(i.input), i) for i in insts]
    assert loss == pytest.approx(np.mean(per), rel=1e-10)
    assert loss == pytest.approx(sum(parts), rel=1e-12)


def test_loss_and_gradient_additivity():
    model = _model()
    insts = build_instances([HOME])
    _, g_all, _ = batch_loss(model, insts)
    singles = [batch_loss(model, insts, use_terms=tuple(k == t for k in range(3)))[1] for t in range(3)]
    for name, g in g_all.items():
        assert np.allclose(g, sum(s[name] for s in singles), atol=1e-12)
    # position terms never reach the label head
    for name in ("head_w1", "head_b1", "head_w2", "head_b2", "lnf_g", "lnf_b"):
        assert not singles[1][name].any() and not singles[2][name].any()


def test_batch_order_independence():
    model = _model()
    insts = build_instances([HOME, parse_linearized("[IN:GET_DIRECTIONS way home ]", Format.PLAIN)])
    a = batch_loss(model, insts, with_grads=False)[0]
    b = batch_loss(model, insts[::-1], with_grads=False)[0]
    assert a == pytest.approx(b, rel=1e-12)


def test_adam_moves_against_gradient():
    p = {"w": np.array([1.0, -1.0])}
    opt = Adam(p, weight_decay=0.0)
    opt.step(p, {"w": np.array([0.5, -0.5])}, lr=0.1)
    assert p["w"][0] < 1.0 and p["w"][1] > -1.0


def test_grad_check_tiny():
    model = _model()
    insts = build_instances([HOME])
    errs = grad_check(model, insts, epsilon=1e-3, samples_per_tensor=20)
    assert max(errs.values()) < 1e-4
    coarse = grad_check(model, insts, epsilon=1e-1, samples_per_tensor=20)
    assert max(coarse.values()) > max(errs.values())


def test_memorizes_one_tree():
    hyper = TrainConfig(lr_peak=1e-2, warmup_steps=10, epochs=200, batch_size=4, dropout=0.0, attn_dropout=0.0)
    res = train([HOME], TINY, hyper)
    assert res.history[-1]["loss"] < 0.05
    assert res.history[-1]["loss"] < res.history[0]["loss"] / 20
    # near-zero loss means a near-zero gradient
    insts = build_instances([HOME])

    def grad_norm(m):
        return math.sqrt(sum(float((g * g).sum()) for g in batch_loss(m, insts)[1].values()))

    assert grad_norm(res.model) < grad_norm(_model()) / 10


def test_training_is_deterministic():
    trees = [HOME, parse_linearized("[IN:GET_DIRECTIONS way [SL:DESTINATION home ] ]", Format.PLAIN)]
    hyper = TrainConfig(epochs=3, warmup_steps=5, batch_size=2)
    a = train(trees, TINY, hyper, valid=trees)
    b = train(trees, TINY, hyper, valid=trees)
    assert a.history == b.history
    assert all(set(r) == {"epoch", "loss", "em"} for r in a.history)


def test_nonfinite_loss_aborts(monkeypatch):
    import treeinsert.training as tr

    monkeypatch.setattr(tr, "batch_loss", lambda *a, **k: (float("nan"), {}, [0, 0, 0]))
    with pytest.raises(NonFiniteLoss) as info:
        train([HOME], TINY, TrainConfig(epochs=1))
    assert info.value.batch == 0


def test_train_config_roundtrip():
    cfg = TrainConfig(lr_peak=1e-3, betas=(0.8, 0.9))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"nope": 1})
