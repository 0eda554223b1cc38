"""Two-tower template scorer.

A source sentence and a linearized template are encoded independently by small
pre-LN transformer stacks, projected by a one-hidden-layer feed-forward net and
compared through the token x constituent dot-product matrix ``C``.  Each side is
pooled by weighting its vectors with the row/column maxima of ``C``; the two
pooled vectors are concatenated and mapped to a probability by a linear head.

Everything runs in float64 numpy; gradients are derived by hand.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    EmptyInput,
    FormatVersionMismatch,
    StaleCache,
    TraceMismatch,
)
from .syntree import LinearTemplate

PAD, UNK = "<pad>", "<unk>"
CKPT_FORMAT = "syntempo-ckpt"
CKPT_VERSION = 1
CACHE_FORMAT = "syntempo-cache"
LN_EPS = 1e-5
MASK_NEG = -1e9
CHUNK = 128  # library entries per scoring chunk; fixed so results never depend on threads


class Vocab:
    """Token -> index map. Index 0 is padding, index 1 the single OOV slot."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for seq in sequences:
            for tok in seq:
                counts[tok] = counts.get(tok, 0) + 1
        return cls(sorted(t for t, c in counts.items() if c >= min_count))

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, 1) for t in tokens], dtype=np.int64)


@dataclass
class Hyper:
    sentence_vocab: Vocab
    template_vocab: Vocab
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_hidden: int = 128
    max_sentence_len: int = 64
    max_template_len: int = 192
    head_bias: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.endswith("_vocab")}
        d["sentence_vocab"] = self.sentence_vocab.itos[2:]
        d["template_vocab"] = self.template_vocab.itos[2:]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Hyper":
        d = dict(d)
        d["sentence_vocab"] = Vocab(d["sentence_vocab"])
        d["template_vocab"] = Vocab(d["template_vocab"])
        return cls(**d)


def _tower_shapes(prefix: str, vocab_size: int, h: Hyper) -> list[tuple[str, tuple]]:
    d, f = h.d_model, h.ffn_hidden
    shapes = [(f"{prefix}.emb", (vocab_size, d))]
    for l in range(h.n_layers):
        p = f"{prefix}.{l}."
        shapes += [
            (p + "ln1.g", (d,)), (p + "ln1.b", (d,)),
            (p + "wq", (d, d)), (p + "bq", (d,)),
            (p + "wk", (d, d)), (p + "bk", (d,)),
            (p + "wv", (d, d)), (p + "bv", (d,)),
            (p + "wo", (d, d)), (p + "bo", (d,)),
            (p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
            (p + "w1", (d, f)), (p + "b1", (f,)),
            (p + "w2", (f, d)), (p + "b2", (d,)),
        ]
    shapes += [
        (f"{prefix}.lnf.g", (d,)), (f"{prefix}.lnf.b", (d,)),
        (f"{prefix}.proj.w1", (d, f)), (f"{prefix}.proj.b1", (f,)),
        (f"{prefix}.proj.w2", (f, d)), (f"{prefix}.proj.b2", (d,)),
    ]
    return shapes


def param_shapes(h: Hyper) -> list[tuple[str, tuple]]:
    shapes = _tower_shapes("s", len(h.sentence_vocab), h)
    shapes += _tower_shapes("t", len(h.template_vocab), h)
    shapes.append(("head.w", (2 * h.d_model,)))
    if h.head_bias:
        shapes.append(("head.b", (1,)))
    return shapes


class ModelParams:
    """Ordered name -> float64 array store.

    ``version`` is bumped by every mutation made through this API (optimizer
    steps included) and lets a trace detect that it is stale.
    """

    def __init__(self, hyper: Hyper, tensors: dict[str, np.ndarray]):
        self.hyper = hyper
        self.tensors = {}
        for name, shape in param_shapes(hyper):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise DimMismatch(f"{name}: expected {shape}, got {arr.shape}")
            self.tensors[name] = arr
        self.version = 0

    @classmethod
    def init(cls, hyper: Hyper, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in param_shapes(hyper):
            leaf = name.rsplit(".", 1)[-1]
            if name.endswith(("ln1.g", "ln2.g", "lnf.g")):
                tensors[name] = np.ones(shape)
            elif leaf.startswith("b"):
                tensors[name] = np.zeros(shape)
            else:
                fan_in = 1 if leaf == "emb" else shape[0]
                bound = 1.0 / math.sqrt(fan_in)
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(hyper, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self.tensors[name].shape:
            raise DimMismatch(f"{name}: shape {arr.shape} != {self.tensors[name].shape}")
        self.tensors[name] = arr.copy()
        self.version += 1

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def touch(self):
        self.version += 1

    def copy(self) -> "ModelParams":
        return ModelParams(self.hyper, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.hyper.to_json(), sort_keys=True).encode())
        for name, arr in self.tensors.items():
            h.update(name.encode())
            h.update(arr.astype("<f8", copy=False).tobytes())
        return h.hexdigest()

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


# ---------------------------------------------------------------------------
# primitives


def _sinusoid(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


_POS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positions(length: int, d: int) -> np.ndarray:
    key = (length, d)
    if key not in _POS_CACHE:
        _POS_CACHE[key] = _sinusoid(length, d)
    return _POS_CACHE[key]


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_tanh(x):
    x2 = x * x
    return np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))


def gelu(x, t=None):
    """tanh-approximated GELU; ``t`` is the precomputed inner tanh, if any."""
    if t is None:
        t = _gelu_tanh(x)
    return 0.5 * x * (1.0 + t)


def gelu_grad(x, t=None):
    if t is None:
        t = _gelu_tanh(x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * rstd
    return xh * g + b, (xh, rstd)


def _ln_bwd(dy, cache, g):
    xh, rstd = cache
    dg = (dy * xh).reshape(-1, xh.shape[-1]).sum(0)
    db = dy.reshape(-1, xh.shape[-1]).sum(0)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))
    return dx, dg, db


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# ---------------------------------------------------------------------------
# towers


def _tower_forward(params: ModelParams, prefix: str, ids: np.ndarray, mask: np.ndarray):
    hy = params.hyper
    P = params.tensors
    B, L = ids.shape
    d, H = hy.d_model, hy.n_heads
    dh = d // H
    scale = 1.0 / math.sqrt(dh)
    x = P[f"{prefix}.emb"][ids] + positions(L, d)
    keybias = np.where(mask, 0.0, MASK_NEG)[:, None, None, :]
    layers = []
    for l in range(hy.n_layers):
        p = f"{prefix}.{l}."
        u, c1 = _ln_fwd(x, P[p + "ln1.g"], P[p + "ln1.b"])
        q = (u @ P[p + "wq"] + P[p + "bq"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        k = (u @ P[p + "wk"] + P[p + "bk"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        v = (u @ P[p + "wv"] + P[p + "bv"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        s = q @ k.transpose(0, 1, 3, 2) * scale + keybias
        s = s - s.max(-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(-1, keepdims=True)
        o = (a @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
        x1 = x + o @ P[p + "wo"] + P[p + "bo"]
        u2, c2 = _ln_fwd(x1, P[p + "ln2.g"], P[p + "ln2.b"])
        pre = u2 @ P[p + "w1"] + P[p + "b1"]
        tp = _gelu_tanh(pre)
        hid = gelu(pre, tp)
        x = x1 + hid @ P[p + "w2"] + P[p + "b2"]
        layers.append((u, c1, q, k, v, a, o, u2, c2, pre, tp, hid))
    h, cf = _ln_fwd(x, P[f"{prefix}.lnf.g"], P[f"{prefix}.lnf.b"])
    z = h @ P[f"{prefix}.proj.w1"] + P[f"{prefix}.proj.b1"]
    tz = _gelu_tanh(z)
    g = gelu(z, tz)
    e = g @ P[f"{prefix}.proj.w2"] + P[f"{prefix}.proj.b2"]
    return h, e, (ids, layers, cf, h, z, tz, g)


def _tower_backward(params: ModelParams, prefix: str, cache, de: np.ndarray, grads: dict):
    hy = params.hyper
    P = params.tensors
    ids, layers, cf, h, z, tz, g = cache
    B, L = ids.shape
    d, H = hy.d_model, hy.n_heads
    dh = d // H
    scale = 1.0 / math.sqrt(dh)

    grads[f"{prefix}.proj.w2"] += _flat(g).T @ _flat(de)
    grads[f"{prefix}.proj.b2"] += _flat(de).sum(0)
    dz = (de @ P[f"{prefix}.proj.w2"].T) * gelu_grad(z, tz)
    grads[f"{prefix}.proj.w1"] += _flat(h).T @ _flat(dz)
    grads[f"{prefix}.proj.b1"] += _flat(dz).sum(0)
    dx, dgf, dbf = _ln_bwd(dz @ P[f"{prefix}.proj.w1"].T, cf, P[f"{prefix}.lnf.g"])
    grads[f"{prefix}.lnf.g"] += dgf
    grads[f"{prefix}.lnf.b"] += dbf

    for l in reversed(range(hy.n_layers)):
        p = f"{prefix}.{l}."
        u, c1, q, k, v, a, o, u2, c2, pre, tp, hid = layers[l]
        # feed-forward sublayer
        grads[p + "w2"] += _flat(hid).T @ _flat(dx)
        grads[p + "b2"] += _flat(dx).sum(0)
        dpre = (dx @ P[p + "w2"].T) * gelu_grad(pre, tp)
        grads[p + "w1"] += _flat(u2).T @ _flat(dpre)
        grads[p + "b1"] += _flat(dpre).sum(0)
        du2, dg2, db2 = _ln_bwd(dpre @ P[p + "w1"].T, c2, P[p + "ln2.g"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dx = dx + du2
        # attention sublayer
        grads[p + "wo"] += _flat(o).T @ _flat(dx)
        grads[p + "bo"] += _flat(dx).sum(0)
        do = (dx @ P[p + "wo"].T).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dq, dk, dv = (t.transpose(0, 2, 1, 3).reshape(B, L, d) for t in (dq, dk, dv))
        uf = _flat(u)
        du = np.zeros_like(u)
        for name, dt in (("q", dq), ("k", dk), ("v", dv)):
            grads[p + "w" + name] += uf.T @ _flat(dt)
            grads[p + "b" + name] += _flat(dt).sum(0)
            du += dt @ P[p + "w" + name].T
        du1, dg1, db1 = _ln_bwd(du, c1, P[p + "ln1.g"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dx = dx + du1
    np.add.at(grads[f"{prefix}.emb"], ids, dx)


# ---------------------------------------------------------------------------
# public encoding ops


def sentence_ids(params: ModelParams, tokens: Sequence[str]) -> np.ndarray:
    tokens = list(tokens)[: params.hyper.max_sentence_len]
    if not tokens:
        raise EmptyInput("empty sentence")
    return params.hyper.sentence_vocab.encode(tokens)


def template_ids(params: ModelParams, template) -> np.ndarray:
    toks = list(template.tokens if isinstance(template, LinearTemplate) else template)
    toks = toks[: params.hyper.max_template_len]
    if not toks:
        raise EmptyInput("empty template")
    return params.hyper.template_vocab.encode(toks)


def _pad(seqs: Sequence[np.ndarray]):
    L = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), L), dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def encode_sentence(params: ModelParams, tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(h, e)``, the encoder states and projected embeddings, each n x d."""
    ids = sentence_ids(params, tokens)[None, :]
    h, e, _ = _tower_forward(params, "s", ids, np.ones_like(ids, dtype=bool))
    return h[0], e[0]


def encode_template(params: ModelParams, template) -> tuple[np.ndarray, np.ndarray]:
    ids = template_ids(params, template)[None, :]
    h, e, _ = _tower_forward(params, "t", ids, np.ones_like(ids, dtype=bool))
    return h[0], e[0]


def encode_templates(params: ModelParams, templates: Sequence) -> list[np.ndarray]:
    """Projected embeddings for many templates, padded and run as one batch."""
    if not templates:
        return []
    ids, mask = _pad([template_ids(params, t) for t in templates])
    _, e, _ = _tower_forward(params, "t", ids, mask)
    return [e[i, : mask[i].sum()].copy() for i in range(len(templates))]


def correlation(es: np.ndarray, et: np.ndarray) -> np.ndarray:
    if es.ndim != 2 or et.ndim != 2 or es.shape[1] != et.shape[1]:
        raise DimMismatch(f"cannot correlate {es.shape} with {et.shape}")
    return es @ et.T


def pool(es: np.ndarray, et: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max-weighted averages of sentence rows and template rows."""
    n, m = C.shape
    vs = (C.max(1)[:, None] * es).sum(0) / n
    vt = (C.max(0)[:, None] * et).sum(0) / m
    return vs, vt


# ---------------------------------------------------------------------------
# scoring


@dataclass
class ScoreTrace:
    """Intermediate values of one forward pass over a batch of (sentence, template) pairs.

    Sentence-side arrays are indexed by sentence (``S x N x d``), template-side and
    pair arrays by pair (``B x ...``); ``owner[b]`` is the sentence of pair ``b``.
    Padding is excluded through ``mask_s`` / ``mask_t``.
    """

    h_s: np.ndarray
    e_s: np.ndarray
    mask_s: np.ndarray
    h_t: np.ndarray
    e_t: np.ndarray
    mask_t: np.ndarray
    owner: np.ndarray
    C: np.ndarray
    row_arg: np.ndarray
    col_arg: np.ndarray
    v_s: np.ndarray
    v_t: np.ndarray
    logit: np.ndarray
    s: np.ndarray
    _params_id: int = field(repr=False, default=0)
    _params_version: int = field(repr=False, default=0)
    _caches: tuple = field(repr=False, default=())

    def pair(self, b: int = 0) -> dict:
        """Unpadded view of pair ``b``; ``C`` is n x m."""
        o = int(self.owner[b])
        n = int(self.mask_s[o].sum())
        m = int(self.mask_t[b].sum())
        return {
            "h_s": self.h_s[o, :n], "e_s": self.e_s[o, :n],
            "h_t": self.h_t[b, :m], "e_t": self.e_t[b, :m],
            "C": self.C[b, :n, :m],
            "row_arg": self.row_arg[b, :n], "col_arg": self.col_arg[b, :m],
            "v_s": self.v_s[b], "v_t": self.v_t[b],
            "logit": float(self.logit[b]), "s": float(self.s[b]),
        }


def _head(params: ModelParams, v_s, v_t):
    w = params["head.w"]
    d = params.hyper.d_model
    z = v_s @ w[:d] + v_t @ w[d:]
    if params.hyper.head_bias:
        z = z + params["head.b"][0]
    return z


def score_pairs(params: ModelParams, sentences: Sequence[Sequence[str]], templates: Sequence,
                owner: Sequence[int]) -> tuple[np.ndarray, ScoreTrace]:
    """Score template ``b`` against sentence ``owner[b]`` for every ``b``."""
    if not templates or not sentences:
        raise EmptyInput("nothing to score")
    owner = np.asarray(owner, dtype=np.int64)
    if owner.shape != (len(templates),):
        raise DimMismatch("owner must give one sentence index per template")
    s_ids, mask_s = _pad([sentence_ids(params, t) for t in sentences])
    h_s, e_s, s_cache = _tower_forward(params, "s", s_ids, mask_s)
    t_ids, mask_t = _pad([template_ids(params, t) for t in templates])
    h_t, e_t, t_cache = _tower_forward(params, "t", t_ids, mask_t)

    es = e_s[owner]  # B x N x d
    ms = mask_s[owner]
    n = ms.sum(1)
    m = mask_t.sum(1)
    C = es @ e_t.transpose(0, 2, 1)  # B x N x M
    row_arg = np.where(mask_t[:, None, :], C, -np.inf).argmax(2)
    row_max = np.take_along_axis(C, row_arg[:, :, None], 2)[:, :, 0] * ms
    col_arg = np.where(ms[:, :, None], C, -np.inf).argmax(1)
    col_max = np.take_along_axis(C, col_arg[:, None, :], 1)[:, 0, :] * mask_t
    v_s = (row_max[:, :, None] * es).sum(1) / n[:, None]
    v_t = (col_max[:, :, None] * e_t).sum(1) / m[:, None]
    z = _head(params, v_s, v_t)
    s = sigmoid(z)
    trace = ScoreTrace(
        h_s=h_s, e_s=e_s, mask_s=mask_s, h_t=h_t, e_t=e_t, mask_t=mask_t, owner=owner,
        C=C, row_arg=row_arg, col_arg=col_arg, v_s=v_s, v_t=v_t, logit=z, s=s,
        _params_id=id(params), _params_version=params.version,
        _caches=(s_cache, t_cache, row_max, col_max),
    )
    return s, trace


def score_batch(params: ModelParams, tokens: Sequence[str], templates: Sequence) -> tuple[np.ndarray, ScoreTrace]:
    """Score one sentence against several templates."""
    return score_pairs(params, [tokens], templates, np.zeros(len(templates), dtype=np.int64))


def score(params: ModelParams, tokens: Sequence[str], template) -> tuple[float, ScoreTrace]:
    s, trace = score_batch(params, tokens, [template])
    return float(s[0]), trace


def backward(params: ModelParams, trace: ScoreTrace, dloss_ds) -> dict[str, np.ndarray]:
    """Gradients of a loss w.r.t. every parameter given dL/ds per scored pair."""
    if trace._params_id != id(params) or trace._params_version != params.version:
        raise TraceMismatch("trace was produced with different parameters")
    ds = np.asarray(dloss_ds, dtype=np.float64).reshape(-1)
    if ds.shape[0] != trace.s.shape[0]:
        raise TraceMismatch(f"{ds.shape[0]} upstream gradients for {trace.s.shape[0]} scores")
    hy = params.hyper
    d = hy.d_model
    grads = params.zeros_like()
    s_cache, t_cache, row_max, col_max = trace._caches
    owner, et, mask_t = trace.owner, trace.e_t, trace.mask_t
    es = trace.e_s[owner]
    ms = trace.mask_s[owner]
    B, N, M = trace.C.shape
    n = ms.sum(1)
    m = mask_t.sum(1)
    w = params["head.w"]

    dz = ds * trace.s * (1.0 - trace.s)
    grads["head.w"][:d] = dz @ trace.v_s
    grads["head.w"][d:] = dz @ trace.v_t
    if hy.head_bias:
        grads["head.b"][0] = dz.sum()
    dvs = (dz / n)[:, None] * w[:d]  # B x d, already divided by n
    dvt = (dz / m)[:, None] * w[d:]

    des = row_max[:, :, None] * dvs[:, None, :]  # B x N x d
    det = col_max[:, :, None] * dvt[:, None, :]
    drow = (es @ dvs[:, :, None])[:, :, 0] * ms
    dcol = (et @ dvt[:, :, None])[:, :, 0] * mask_t

    dC = np.zeros_like(trace.C)
    bi = np.arange(B)[:, None]
    np.add.at(dC, (bi, np.arange(N)[None, :], trace.row_arg), drow)
    np.add.at(dC, (bi, trace.col_arg, np.arange(M)[None, :]), dcol)
    des += dC @ et
    det += dC.transpose(0, 2, 1) @ es

    des_sent = np.zeros_like(trace.e_s)
    np.add.at(des_sent, owner, des)
    _tower_backward(params, "s", s_cache, des_sent, grads)
    _tower_backward(params, "t", t_cache, det, grads)
    return grads


# ---------------------------------------------------------------------------
# template-side cache


@dataclass
class TemplateEncodingCache:
    params_hash: str
    embeddings: list[np.ndarray]  # per library id, m_j x d

    def __len__(self):
        return len(self.embeddings)

    def save(self, path) -> None:
        lengths = np.array([e.shape[0] for e in self.embeddings], dtype=np.int64)
        d = self.embeddings[0].shape[1] if self.embeddings else 0
        flat = np.concatenate(self.embeddings) if self.embeddings else np.zeros((0, d))
        with open(path, "wb") as fh:
            np.savez(fh, format=np.array(CACHE_FORMAT), params_hash=np.array(self.params_hash),
                     lengths=lengths, flat=flat.astype("<f8"))

    @classmethod
    def load(cls, path) -> "TemplateEncodingCache":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != CACHE_FORMAT:
                raise FormatVersionMismatch("not a template encoding cache")
            lengths = z["lengths"]
            flat = z["flat"]
            h = str(z["params_hash"])
        offs = np.concatenate([[0], np.cumsum(lengths)])
        return cls(h, [flat[offs[i] : offs[i + 1]].copy() for i in range(len(lengths))])


def encode_library(params: ModelParams, lib, chunk: int = CHUNK) -> TemplateEncodingCache:
    templates = [e.template for e in lib]
    embs: list[np.ndarray] = []
    for lo in range(0, len(templates), chunk):
        embs.extend(encode_templates(params, templates[lo : lo + chunk]))
    return TemplateEncodingCache(params.content_hash(), embs)


def _check_cache(params: ModelParams, cache: TemplateEncodingCache, params_hash: Optional[str]):
    h = params_hash or params.content_hash()
    if h != cache.params_hash:
        raise StaleCache("template cache was built from different parameters")


def _pooled_scores(params: ModelParams, es: np.ndarray, embs: Sequence[np.ndarray]) -> np.ndarray:
    n = es.shape[0]
    lengths = np.array([e.shape[0] for e in embs])
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    E = np.concatenate(embs)
    C = es @ E.T  # n x total
    row_max = np.maximum.reduceat(C, offsets, axis=1)  # n x B
    v_s = row_max.T @ es / n
    col_max = C.max(0)
    v_t = np.add.reduceat(col_max[:, None] * E, offsets, axis=0) / lengths[:, None]
    return sigmoid(_head(params, v_s, v_t))


def score_with_cache(params: ModelParams, tokens: Sequence[str], cache: TemplateEncodingCache, id: int,
                     params_hash: Optional[str] = None) -> float:
    _check_cache(params, cache, params_hash)
    _, es = encode_sentence(params, tokens)
    return float(_pooled_scores(params, es, [cache.embeddings[id]])[0])


def score_library(params: ModelParams, tokens: Sequence[str], cache: TemplateEncodingCache,
                  threads: int = 1, params_hash: Optional[str] = None) -> np.ndarray:
    """Scores for every cached template, in id order.

    Work is split into fixed-size chunks so the numbers do not depend on how
    many threads evaluate them.
    """
    _check_cache(params, cache, params_hash)
    out = np.empty(len(cache))
    if not len(cache):
        return out
    _, es = encode_sentence(params, tokens)
    spans = [(lo, min(lo + CHUNK, len(cache))) for lo in range(0, len(cache), CHUNK)]

    def run(span):
        lo, hi = span
        out[lo:hi] = _pooled_scores(params, es, cache.embeddings[lo:hi])

    if threads <= 1 or len(spans) == 1:
        for sp in spans:
            run(sp)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool_:
            list(pool_.map(run, spans))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path, hyper: Optional[Hyper] = None) -> None:
    hyper = hyper or params.hyper
    header = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "hyper": hyper.to_json(),
        "params_hash": params.content_hash(),
        "tensors": [[name, list(arr.shape)] for name, arr in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for arr in params.tensors.values():
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl].decode("utf-8")) if nl >= 0 else None
    except (UnicodeDecodeError, json.JSONDecodeError):
        header = None
    if not isinstance(header, dict) or header.get("format") != CKPT_FORMAT:
        raise FormatVersionMismatch("not a checkpoint file")
    if header.get("version") != CKPT_VERSION:
        raise FormatVersionMismatch(f"unsupported checkpoint version {header.get('version')!r}")
    hyper = Hyper.from_json(header["hyper"])
    buf = io.BytesIO(raw[nl + 1 :])
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        chunk = buf.read(8 * count)
        if len(chunk) != 8 * count:
            raise OSError(f"checkpoint truncated inside tensor {name}")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
    if buf.read(1):
        raise OSError("trailing bytes after the last tensor")
    params = ModelParams(hyper, tensors)
    if params.content_hash() != header["params_hash"]:
        raise OSError("checkpoint content hash mismatch")
    return params
