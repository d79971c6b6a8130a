"""Teacher-forced training of the insertion encoder."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .encoder import Encoder, EncoderConfig, ScorerOutput, Vocab, backward, forward, pad_batch
from .insertion import Ordering, decompose
from .tree import EOP, Label, LinearSeq, ParseTree, Profile, to_linear

log = logging.getLogger(__name__)


class NonFiniteLoss(ArithmeticError):
    def __init__(self, batch: int, value: float):
        super().__init__(f"non-finite loss {value} in batch {batch}")
        self.batch = batch


@dataclass(frozen=True)
class TrainInstance:
    input: LinearSeq
    label: Label
    start: int | None = None
    end: int | None = None

    def __post_init__(self):
        if self.label.is_eop:
            if self.start is not None or self.end is not None:
                raise ValueError("EoP instances carry no positions")
        elif self.start is None or self.end is None or not 0 <= self.start < self.end <= len(self.input):
            raise ValueError(f"bad gold positions ({self.start}, {self.end}) for length {len(self.input)}")


def build_instances(corpus: Iterable[ParseTree], ordering: Ordering = Ordering.TOP_DOWN) -> list[TrainInstance]:
    """One instance per gold step plus a terminal EoP instance per tree."""
    out = []
    for tree in corpus:
        for partial, step in decompose(tree, ordering):
            out.append(TrainInstance(partial, step.label, step.i, step.j))
        out.append(TrainInstance(to_linear(tree), EOP))
    return out


def nll(output: ScorerOutput, inst: TrainInstance) -> float:
    """Joint negative log-likelihood of one gold triple under a scorer output."""
    k = output.labels.index(inst.label)
    loss = -float(output.label_logprobs[k])
    if not inst.label.is_eop:
        loss -= float(output.start_logprobs[inst.start]) + float(output.end_logprobs[inst.end])
    return loss


def _position_loss(scores: np.ndarray, lengths: np.ndarray, gold: np.ndarray, active: np.ndarray):
    """NLL of gold gaps under folded attention rows, and its gradient w.r.t. the rows.

    Gap 0 gathers the mass on ``<s>`` (column 0) and element 0 (column 1);
    gap ``g > 0`` is column ``g + 1``.
    """
    B, L = scores.shape
    s = scores.astype(np.float64)
    valid = np.arange(L)[None, :] < lengths[:, None]
    s = np.where(valid, s, -np.inf)
    lse = np.logaddexp.reduce(s, axis=1)
    p = np.exp(s - lse[:, None])
    target = np.zeros_like(p)
    g = np.where(active, gold, 1)
    rows = np.arange(B)
    at_zero = g == 0
    num = np.where(at_zero, np.logaddexp(s[:, 0], s[:, 1]), s[rows, np.minimum(g + 1, L - 1)])
    target[rows[~at_zero], g[~at_zero] + 1] = 1.0
    z0 = rows[at_zero]
    target[z0, 0] = np.exp(s[z0, 0] - num[z0])
    target[z0, 1] = np.exp(s[z0, 1] - num[z0])
    losses = np.where(active, lse - num, 0.0)
    grad = np.where(active[:, None], p - target, 0.0)
    return losses, grad


def batch_loss(model: Encoder, batch: Sequence[TrainInstance], train: bool = False,
               rng: np.random.Generator | None = None, with_grads: bool = True,
               use_terms: tuple[bool, bool, bool] = (True, True, True)):
    """Mean joint loss over a batch and, optionally, gradients for every parameter.

    Returns ``(loss, grads, parts)`` with ``parts`` the mean label, start and
    end terms. ``use_terms`` drops individual terms (used to test additivity).
    """
    vocab = model.vocab
    ids, lengths = pad_batch([vocab.encode(inst.input) for inst in batch])
    logits, s_start, s_end, cache = forward(model.params, model.config, ids, lengths, train=train, rng=rng)
    B = len(batch)
    y = np.array([vocab.label_index[inst.label] for inst in batch])
    active = np.array([not inst.label.is_eop for inst in batch])
    gi = np.array([inst.start if inst.start is not None else 0 for inst in batch])
    gj = np.array([inst.end if inst.end is not None else 0 for inst in batch])

    z = logits.astype(np.float64)
    lse = np.logaddexp.reduce(z, axis=1)
    l_label = lse - z[np.arange(B), y]
    p = np.exp(z - lse[:, None])
    p[np.arange(B), y] -= 1.0
    l_start, g_start = _position_loss(s_start, lengths, gi, active)
    l_end, g_end = _position_loss(s_end, lengths, gj, active)
    terms = [l_label.mean(), l_start.mean(), l_end.mean()]
    loss = sum(t for t, use in zip(terms, use_terms) if use)
    if not with_grads:
        return loss, None, terms
    dtype = logits.dtype
    scale = [float(u) / B for u in use_terms]
    grads = backward(model.params, model.config, cache,
                     (p * scale[0]).astype(dtype), (g_start * scale[1]).astype(dtype),
                     (g_end * scale[2]).astype(dtype))
    return loss, grads, terms


# -- optimisation -----------------------------------------------------------------


def inverse_sqrt_lr(step: int, peak: float, warmup: int) -> float:
    """Linear warm-up to ``peak`` over ``warmup`` updates, then ``peak * sqrt(warmup / step)``."""
    if step < 1:
        raise ValueError("update numbers start at 1")
    if warmup <= 0:
        return peak / math.sqrt(step)
    if step <= warmup:
        return peak * step / warmup
    return peak * math.sqrt(warmup / step)


class Adam:
    """Adam with the L2 penalty added to the gradient (classic weight decay)."""

    def __init__(self, params: dict[str, np.ndarray], betas=(0.9, 0.98), eps=1e-6, weight_decay=1e-4):
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            w = params[k]
            if self.weight_decay:
                g = g + self.weight_decay * w
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            w -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(w.dtype)


@dataclass
class TrainConfig:
    lr_peak: float = 2e-3
    warmup_steps: int = 500
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-6
    dropout: float = 0.1
    attn_dropout: float = 0.1
    ordering: str = "top-down"
    profile: str = "top"
    stop_at_em: float | None = None  # stop once held-out EM reaches this
    patience: int | None = 10  # epochs without EM improvement before stopping
    eval_every: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Encoder
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def held_out_em(model: Encoder, trees: Sequence[ParseTree], profile: Profile) -> float:
    from .decoder import DecodeConfig, decode_corpus
    from .evaluation import exact_match

    run = decode_corpus(model, [t.leaves() for t in trees], DecodeConfig(record_trace=False), profile)
    hits = sum(p is not None and exact_match(p, g) for p, g in zip(run.trees, trees))
    return hits / len(trees) if trees else float("nan")


def train(corpus: Sequence[ParseTree], config: EncoderConfig | None = None, hyper: TrainConfig | None = None,
          valid: Sequence[ParseTree] | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train a fresh encoder; keep the parameters with the best held-out EM.

    Ties in EM go to the lower training loss. Without a held-out set the
    last epoch is kept.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    hyper = hyper or TrainConfig()
    config = config or EncoderConfig()
    config = EncoderConfig.from_dict({**asdict(config), "dropout": hyper.dropout, "attn_dropout": hyper.attn_dropout})
    ordering = Ordering(hyper.ordering)
    profile = Profile(hyper.profile)
    rng = np.random.default_rng(hyper.seed)

    vocab = Vocab.from_trees(corpus)
    longest = max(len(to_linear(t)) for t in corpus) + 2
    if longest > config.max_len:
        raise ValueError(f"max_len {config.max_len} is shorter than the longest training input ({longest})")
    model = Encoder.create(config, vocab, seed=int(rng.integers(2**31)))
    opt = Adam(model.params, hyper.betas, hyper.eps, hyper.weight_decay)
    instances = build_instances(corpus, ordering)

    best: tuple[float, float] | None = None
    best_params = {k: v.copy() for k, v in model.params.items()}
    result = TrainResult(model)
    stale = 0
    step = 0
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(instances))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), hyper.batch_size)):
            batch = [instances[k] for k in order[start:start + hyper.batch_size]]
            loss, grads, _ = batch_loss(model, batch, train=True, rng=rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss(b, loss)
            step += 1
            opt.step(model.params, grads, inverse_sqrt_lr(step, hyper.lr_peak, hyper.warmup_steps))
            total += loss * len(batch)
            count += len(batch)
        record = {"epoch": epoch, "loss": float(total / count), "em": None}
        if valid and (epoch % hyper.eval_every == 0 or epoch == hyper.epochs):
            record["em"] = held_out_em(model, valid, profile)
            key = (record["em"], -record["loss"])
            if best is None or key > best:
                best = key
                best_params = {k: v.copy() for k, v in model.params.items()}
                result.best_epoch = epoch
                stale = 0
            else:
                stale += 1
        result.history.append(record)
        log.info("epoch %d loss %.4f em %s", epoch, record["loss"], record["em"])
        if on_epoch:
            on_epoch(record)
        if record["em"] is not None:
            if hyper.stop_at_em is not None and record["em"] >= hyper.stop_at_em:
                break
            if hyper.patience is not None and stale >= hyper.patience:
                break
    if valid:
        model.params = best_params
    else:
        result.best_epoch = len(result.history)
    return result


# -- gradient check ------------------------------------------------------------------


def grad_check(model: Encoder, batch: Sequence[TrainInstance], epsilon: float = 1e-3,
               samples_per_tensor: int = 200, seed: int = 0, rel_floor: float = 1e-2,
               abs_floor: float = 1e-6) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients, per tensor.

    Runs in float64 with dropout off, on up to ``samples_per_tensor`` random
    entries of every tensor. The error of an entry is
    ``|a - n| / max(|a|, |n|, rel_floor * rms(grad), abs_floor)``: entries far
    below their tensor's gradient scale (e.g. key biases, whose true gradient
    is zero) are compared against that scale instead of against themselves.
    """
    m = model.astype(np.float64)
    _, grads, _ = batch_loss(m, batch)
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, w in m.params.items():
        flat = w.reshape(-1)
        g = grads[name].reshape(-1)
        floor = max(rel_floor * float(np.sqrt(np.mean(g * g))), abs_floor)
        picks = rng.choice(flat.size, size=min(samples_per_tensor, flat.size), replace=False)
        err = 0.0
        for k in picks:
            old = flat[k]
            flat[k] = old + epsilon
            up = batch_loss(m, batch, with_grads=False)[0]
            flat[k] = old - epsilon
            down = batch_loss(m, batch, with_grads=False)[0]
            flat[k] = old
            num = (up - down) / (2 * epsilon)
            a = float(g[k])
            err = max(err, abs(a - num) / max(abs(a), abs(num), floor))
        worst[name] = err
    return worst
