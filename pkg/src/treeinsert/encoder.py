"""A small pre-layer-norm transformer encoder written directly in numpy.

The encoder reads ``<s> elements </s>`` and produces three distributions:

* labels, from an MLP over the final ``<s>`` state;
* start and end insertion gaps, read off the ``<s>`` query row of two
  designated attention heads in the last layer.

Attention over ``m + 2`` positions is folded onto the ``m + 1`` insertion gaps:
mass on ``<s>`` and on element 0 both go to gap 0, element ``p`` to gap ``p``,
and ``</s>`` to gap ``m``. Because the gap distribution grows with the input,
no fixed output size caps the positions the model can point at.

Forward and backward passes are hand-written; ``training.grad_check`` verifies
them against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .tree import EOP, Close, Elem, Kind, Label, Open, Tok

CHECKPOINT_VERSION = 1
NEG_INF = -1e9
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class EncoderError(RuntimeError):
    pass


class SequenceTooLong(EncoderError):
    pass


class NonFiniteActivation(EncoderError):
    pass


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 160
    label_head_hidden: int = 64
    start_head: int = 0
    end_head: int = 1
    dropout: float = 0.1
    attn_dropout: float = 0.1

    def __post_init__(self):
        if self.n_heads < 3:
            raise ValueError("n_heads must be at least 3")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.start_head == self.end_head:
            raise ValueError("start_head and end_head must differ")
        if not (0 <= self.start_head < self.n_heads and 0 <= self.end_head < self.n_heads):
            raise ValueError("position heads must index existing heads")
        if self.n_layers < 1 or self.max_len < 3:
            raise ValueError("need at least one layer and max_len >= 3")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**d)


class Vocab:
    """Input ids for tokens and typed brackets, output ids for labels.

    Input layout: ``<pad> <unk> <s> </s>``, one Open id per label, one Close id
    per label, then corpus tokens. Output layout: intents, slots, EoP.
    """

    PAD, UNK, BOS, EOS = 0, 1, 2, 3
    SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")

    def __init__(self, tokens: Sequence[str], labels: Sequence[Label]):
        labels = sorted(set(labels), key=lambda l: (l.kind is not Kind.INTENT, l.name))
        if any(l.is_eop for l in labels):
            raise ValueError("EoP is implicit in the label vocabulary")
        self.tokens = sorted(set(tokens))
        self.labels: tuple[Label, ...] = tuple(labels) + (EOP,)
        n = len(labels)
        self._open = {l: 4 + k for k, l in enumerate(labels)}
        self._close = {l: 4 + n + k for k, l in enumerate(labels)}
        self._tok = {t: 4 + 2 * n + k for k, t in enumerate(self.tokens)}
        self.label_index = {l: k for k, l in enumerate(self.labels)}

    @property
    def size(self) -> int:
        return 4 + 2 * (len(self.labels) - 1) + len(self.tokens)

    @property
    def eop_index(self) -> int:
        return len(self.labels) - 1

    def elem_id(self, e: Elem) -> int:
        if isinstance(e, Tok):
            return self._tok.get(e.token, self.UNK)
        if isinstance(e, Open):
            return self._open.get(e.label, self.UNK)
        if isinstance(e, Close):
            return self._close.get(e.label, self.UNK)
        raise TypeError(f"not a sequence element: {e!r}")

    def encode(self, seq: Sequence[Elem]) -> np.ndarray:
        return np.array([self.BOS, *(self.elem_id(e) for e in seq), self.EOS], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "labels": [l.name for l in self.labels[:-1]]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(d["tokens"], [Label.parse(n) for n in d["labels"]])

    @classmethod
    def from_trees(cls, trees) -> "Vocab":
        tokens: set[str] = set()
        labels: set[Label] = set()
        for t in trees:
            tokens.update(t.leaves())
            labels.update(n.label for n in t.nonterminals())
        return cls(sorted(tokens), labels)


@dataclass
class ScorerOutput:
    """Log-probabilities over labels and over the ``m + 1`` insertion gaps."""

    label_logprobs: np.ndarray
    start_logprobs: np.ndarray
    end_logprobs: np.ndarray
    labels: tuple[Label, ...]


# -- parameters -------------------------------------------------------------------

_LAYER_KEYS = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
               "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


def param_shapes(cfg: EncoderConfig, vocab_size: int, n_labels: int) -> dict[str, tuple[int, ...]]:
    d, f, h = cfg.d_model, cfg.d_ff, cfg.label_head_hidden
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (vocab_size, d), "pos_emb": (cfg.max_len, d)}
    for l in range(cfg.n_layers):
        layer = {
            "ln1_g": (d,), "ln1_b": (d,),
            "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,), "wv": (d, d), "bv": (d,),
            "wo": (d, d), "bo": (d,),
            "ln2_g": (d,), "ln2_b": (d,),
            "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
        }
        shapes.update({f"layers.{l}.{k}": v for k, v in layer.items()})
    shapes.update({
        "lnf_g": (d,), "lnf_b": (d,),
        "head_w1": (d, h), "head_b1": (h,), "head_w2": (h, n_labels), "head_b2": (n_labels,),
    })
    return shapes


def sinusoid_table(n_pos: int, dim: int) -> np.ndarray:
    """Fixed sine/cosine table, unit variance per row; used only to initialise the learned positions."""
    pos = np.arange(n_pos)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((n_pos, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return table


def init_params(cfg: EncoderConfig, vocab_size: int, n_labels: int,
                rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Unit-variance token embeddings, sinusoid-initialised positions, LeCun-normal matrices, zero biases, unit LN gains."""
    params = {}
    for name, shape in param_shapes(cfg, vocab_size, n_labels).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        elif name == "pos_emb":
            arr = sinusoid_table(*shape)
        elif leaf.endswith("_emb"):
            arr = rng.normal(0.0, 1.0, size=shape)
        else:
            arr = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        params[name] = arr.astype(dtype)
    return params


# -- building blocks ----------------------------------------------------------------


def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_back(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    n = dy.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    th = np.tanh(_GELU_C * (u + 0.044715 * (u * u * u)))
    return 0.5 * u * (1.0 + th), th


def _gelu_back(du_out, u, th):
    inner = _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * inner)


def _dropout(x, rate, rng, train):
    if not train or rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def _softmax(s):
    e = np.exp(s - s.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def _split(x, n_heads):
    B, L, d = x.shape
    return x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


# -- forward / backward --------------------------------------------------------------


def forward(params: dict, cfg: EncoderConfig, ids: np.ndarray, lengths: np.ndarray,
            train: bool = False, rng: np.random.Generator | None = None):
    """Batched forward pass.

    ``ids`` is ``(B, L)`` with ``<s>`` at column 0 and PAD after ``lengths``.
    Returns ``(label_logits (B, V), start_scores (B, L), end_scores (B, L), cache)``
    where the scores are the masked pre-softmax attention logits of the ``<s>``
    query in the two position heads of the last layer.
    """
    B, L = ids.shape
    if L > cfg.max_len:
        raise SequenceTooLong(f"input of {L} positions exceeds max_len {cfg.max_len}")
    if train and rng is None:
        raise ValueError("training forward needs an rng for dropout")
    dtype = params["tok_emb"].dtype
    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    keymask = np.arange(L)[None, :] < lengths[:, None]
    neg = np.where(keymask, 0.0, NEG_INF).astype(dtype)[:, None, None, :]

    x = params["tok_emb"][ids] + params["pos_emb"][:L]
    x, emb_mask = _dropout(x, cfg.dropout, rng, train)
    layers = []
    scores = None
    for l in range(cfg.n_layers):
        p = {k: params[f"layers.{l}.{k}"] for k in _LAYER_KEYS}
        a, ln1 = _layernorm(x, p["ln1_g"], p["ln1_b"])
        q = _split(a @ p["wq"] + p["bq"], H)
        k = _split(a @ p["wk"] + p["bk"], H)
        v = _split(a @ p["wv"] + p["bv"], H)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale + neg
        probs = _softmax(scores)
        probs_d, attn_mask = _dropout(probs, cfg.attn_dropout, rng, train)
        ctx = _merge(probs_d @ v)
        o = ctx @ p["wo"] + p["bo"]
        o, res1_mask = _dropout(o, cfg.dropout, rng, train)
        x = x + o
        c, ln2 = _layernorm(x, p["ln2_g"], p["ln2_b"])
        u = c @ p["w1"] + p["b1"]
        gu, th = _gelu(u)
        f = gu @ p["w2"] + p["b2"]
        f, res2_mask = _dropout(f, cfg.dropout, rng, train)
        x = x + f
        layers.append(dict(a=a, ln1=ln1, q=q, k=k, v=v, probs=probs, probs_d=probs_d,
                           attn_mask=attn_mask, ctx=ctx, res1_mask=res1_mask, c=c, ln2=ln2,
                           u=u, gu=gu, th=th, res2_mask=res2_mask))
    hf, lnf = _layernorm(x[:, 0], params["lnf_g"], params["lnf_b"])
    t = np.tanh(hf @ params["head_w1"] + params["head_b1"])
    logits = t @ params["head_w2"] + params["head_b2"]
    start_scores = scores[:, cfg.start_head, 0, :]
    end_scores = scores[:, cfg.end_head, 0, :]
    if not (np.isfinite(logits).all() and np.isfinite(x).all()):
        raise NonFiniteActivation("non-finite activation in encoder forward pass")
    cache = dict(ids=ids, L=L, emb_mask=emb_mask, layers=layers, lnf=lnf, hf=hf, t=t, scale=scale)
    return logits, start_scores, end_scores, cache


def backward(params: dict, cfg: EncoderConfig, cache: dict, d_logits: np.ndarray,
             d_start: np.ndarray, d_end: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradients w.r.t. the forward outputs."""
    grads: dict[str, np.ndarray] = {}
    H = cfg.n_heads
    scale = cache["scale"]
    t, hf = cache["t"], cache["hf"]
    grads["head_w2"] = t.T @ d_logits
    grads["head_b2"] = d_logits.sum(0)
    dz = (d_logits @ params["head_w2"].T) * (1.0 - t * t)
    grads["head_w1"] = hf.T @ dz
    grads["head_b1"] = dz.sum(0)
    dh0, grads["lnf_g"], grads["lnf_b"] = _layernorm_back(dz @ params["head_w1"].T, cache["lnf"])

    ids = cache["ids"]
    B, L = ids.shape
    dx = np.zeros((B, L, cfg.d_model), dtype=d_logits.dtype)
    dx[:, 0] = dh0
    for l in reversed(range(cfg.n_layers)):
        c_ = cache["layers"][l]
        pre = f"layers.{l}."
        p = {k: params[pre + k] for k in _LAYER_KEYS}
        # feed-forward branch
        df = dx if c_["res2_mask"] is None else dx * c_["res2_mask"]
        grads[pre + "w2"] = np.einsum("blf,bld->fd", c_["gu"], df)
        grads[pre + "b2"] = df.sum((0, 1))
        du = _gelu_back(df @ p["w2"].T, c_["u"], c_["th"])
        grads[pre + "w1"] = np.einsum("bld,blf->df", c_["c"], du)
        grads[pre + "b1"] = du.sum((0, 1))
        dc, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _layernorm_back(du @ p["w1"].T, c_["ln2"])
        dx = dx + dc
        # attention branch
        do = dx if c_["res1_mask"] is None else dx * c_["res1_mask"]
        grads[pre + "wo"] = np.einsum("bli,blj->ij", c_["ctx"], do)
        grads[pre + "bo"] = do.sum((0, 1))
        dctx = _split(do @ p["wo"].T, H)
        dprobs_d = dctx @ c_["v"].transpose(0, 1, 3, 2)
        dv = c_["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_d if c_["attn_mask"] is None else dprobs_d * c_["attn_mask"]
        probs = c_["probs"]
        ds = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
        if l == cfg.n_layers - 1:
            ds[:, cfg.start_head, 0, :] += d_start
            ds[:, cfg.end_head, 0, :] += d_end
        dq = (ds @ c_["k"]) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ c_["q"]) * scale
        dq, dk, dv = _merge(dq), _merge(dk), _merge(dv)
        a = c_["a"]
        grads[pre + "wq"] = np.einsum("bli,blj->ij", a, dq)
        grads[pre + "wk"] = np.einsum("bli,blj->ij", a, dk)
        grads[pre + "wv"] = np.einsum("bli,blj->ij", a, dv)
        grads[pre + "bq"] = dq.sum((0, 1))
        grads[pre + "bk"] = dk.sum((0, 1))
        grads[pre + "bv"] = dv.sum((0, 1))
        da = dq @ p["wq"].T + dk @ p["wk"].T + dv @ p["wv"].T
        dln1, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _layernorm_back(da, c_["ln1"])
        dx = dx + dln1
    if cache["emb_mask"] is not None:
        dx = dx * cache["emb_mask"]
    g_tok = np.zeros_like(params["tok_emb"])
    np.add.at(g_tok, ids.reshape(-1), dx.reshape(-1, cfg.d_model))
    grads["tok_emb"] = g_tok
    g_pos = np.zeros_like(params["pos_emb"])
    g_pos[:L] = dx.sum(0)
    grads["pos_emb"] = g_pos
    return grads


def fold_positions(scores: np.ndarray, n_elems: int) -> np.ndarray:
    """Gap log-probabilities from one row of attention logits over ``<s> ... </s>``."""
    z = scores[: n_elems + 2].astype(np.float64)
    lse = np.logaddexp.reduce(z)
    out = np.empty(n_elems + 1)
    out[0] = np.logaddexp(z[0], z[1])
    out[1:] = z[2:]
    return out - lse


def pad_batch(id_rows: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in id_rows], dtype=np.int64)
    ids = np.full((len(id_rows), int(lengths.max())), Vocab.PAD, dtype=np.int64)
    for b, r in enumerate(id_rows):
        ids[b, : len(r)] = r
    return ids, lengths


# -- model ------------------------------------------------------------------------------


class Encoder:
    """Parameters, configuration and vocabulary; callable as a scorer."""

    def __init__(self, config: EncoderConfig, vocab: Vocab, params: dict[str, np.ndarray]):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.extra: dict = {}  # free-form metadata carried through checkpoints
        expected = param_shapes(config, vocab.size, len(vocab.labels))
        if set(expected) != set(params):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != {shape}")

    @classmethod
    def create(cls, config: EncoderConfig, vocab: Vocab, seed: int = 0, dtype=np.float32) -> "Encoder":
        rng = np.random.default_rng(seed)
        return cls(config, vocab, init_params(config, vocab.size, len(vocab.labels), rng, dtype))

    @property
    def labels(self) -> tuple[Label, ...]:
        return self.vocab.labels

    @property
    def max_elements(self) -> int:
        return self.config.max_len - 2

    def astype(self, dtype) -> "Encoder":
        return Encoder(self.config, self.vocab, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Encoder":
        return Encoder(self.config, self.vocab, {k: v.copy() for k, v in self.params.items()})

    def encode(self, seq: Sequence[Elem]) -> ScorerOutput:
        m = len(seq)
        if m + 2 > self.config.max_len:
            raise SequenceTooLong(f"sequence of {m} elements needs {m + 2} > max_len {self.config.max_len}")
        ids, lengths = pad_batch([self.vocab.encode(seq)])
        logits, s_start, s_end, _ = forward(self.params, self.config, ids, lengths)
        z = logits[0].astype(np.float64)
        return ScorerOutput(
            label_logprobs=z - np.logaddexp.reduce(z),
            start_logprobs=fold_positions(s_start[0], m),
            end_logprobs=fold_positions(s_end[0], m),
            labels=self.vocab.labels,
        )

    __call__ = encode

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # Checkpoint layout (numpy .npz): one array per parameter under its dotted
    # name, plus "__meta__", a 0-d unicode array holding JSON with keys
    # "format" ("treeinsert-encoder"), "version", "config", "vocab" and
    # "shapes" (name -> list of ints).
    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "format": "treeinsert-encoder",
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "vocab": self.vocab.to_dict(),
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "extra": extra or {},
        }
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **self.params)

    @classmethod
    def load(cls, path: str | Path) -> "Encoder":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != "treeinsert-encoder":
                raise ValueError(f"{path}: not an encoder checkpoint")
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {meta['version']}")
            params = {k: data[k] for k in meta["shapes"]}
        model = cls(EncoderConfig.from_dict(meta["config"]), Vocab.from_dict(meta["vocab"]), params)
        model.extra = meta.get("extra", {})
        return model


def encode(model: Encoder, seq: Sequence[Elem]) -> ScorerOutput:
    return model.encode(seq)


# -- oracle -------------------------------------------------------------------------------


class PartialMismatch(ValueError):
    pass


class OracleScorer:
    """Scorer double that replays a gold decomposition as point masses.

    Fed the ``t``-th gold partial sequence it puts all mass on the ``t``-th gold
    step; fed the finished tree it puts all mass on EoP. ``calls`` counts queries.
    """

    def __init__(self, gold, ordering=None):
        from .insertion import Ordering, decompose
        from .tree import to_linear

        pairs = decompose(gold, ordering or Ordering.TOP_DOWN)
        self.labels: tuple[Label, ...] = Vocab([], {n.label for n in gold.nonterminals()}).labels
        self._index = {l: k for k, l in enumerate(self.labels)}
        self._steps = {partial: step for partial, step in pairs}
        self._final = to_linear(gold)
        self.calls = 0

    def __call__(self, seq: Sequence[Elem]) -> ScorerOutput:
        self.calls += 1
        seq = tuple(seq)
        m = len(seq)
        lab = np.full(len(self.labels), -np.inf)
        start = np.full(m + 1, -np.inf)
        end = np.full(m + 1, -np.inf)
        if seq == self._final:
            lab[-1] = 0.0
            start[:] = end[:] = -np.log(m + 1)
        elif seq in self._steps:
            step = self._steps[seq]
            lab[self._index[step.label]] = 0.0
            start[step.i] = 0.0
            end[step.j] = 0.0
        else:
            raise PartialMismatch("sequence is not a state of the gold decomposition")
        return ScorerOutput(lab, start, end, self.labels)


def oracle_scorer(gold, ordering=None) -> OracleScorer:
    return OracleScorer(gold, ordering)
