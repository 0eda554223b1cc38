"""Shared builders for model, retrieval and acceptance tests."""

import numpy as np

from oracles import random_tree
from syntempo import library as L
from syntempo import model as qm
from syntempo.syntree import to_bracket, truncate

WORDS = [f"w{i}" for i in range(6)]
LABELS = ["S", "NP", "VP"]


def random_template_tokens(rng, max_tokens):
    """Bracket tokens of a random tree with at most ``max_tokens`` tokens."""
    n_nodes = int(rng.integers(1, max_tokens // 3 + 1))
    parents = [-1] + [int(rng.integers(i)) for i in range(1, n_nodes)]
    kids = {i: [j for j in range(n_nodes) if parents[j] == i] for i in range(n_nodes)}
    labels = [LABELS[int(rng.integers(len(LABELS)))] for _ in range(n_nodes)]
    out = []

    def emit(i):
        out.extend(["(", labels[i]])
        for c in kids[i]:
            emit(c)
        out.append(")")

    emit(0)
    return out


def gradcheck_case(seed, d_model=16, max_tokens=8, max_constituents=16):
    """A small random model plus a batch of pairs with informative gradients.

    Non-embedding weights are jittered so no gradient is trivially tiny, and
    the head is rescaled to keep logits in the sigmoid's linear-ish range.
    """
    rng = np.random.default_rng(seed)
    hyper = qm.Hyper(
        qm.Vocab(WORDS[:-1]),  # the last word is out of vocabulary
        qm.Vocab(["(", ")"] + LABELS),
        d_model=d_model,
        n_layers=2 if rng.random() < 0.3 else 1,
        n_heads=int(rng.choice([1, 2, 4])),
        ffn_hidden=8,
        head_bias=bool(rng.integers(2)),
    )
    params = qm.ModelParams.init(hyper, seed=seed)
    for name, arr in params.items():
        if not name.endswith("emb"):
            params[name] = arr + rng.normal(0.0, 0.15, arr.shape)
    n_sent = int(rng.integers(1, 3))
    sents = [[WORDS[int(i)] for i in rng.integers(len(WORDS), size=int(rng.integers(1, max_tokens + 1)))]
             for _ in range(n_sent)]
    n_pairs = int(rng.integers(1, 4))
    templates = [random_template_tokens(rng, max_constituents) for _ in range(n_pairs)]
    owner = rng.integers(n_sent, size=n_pairs)
    _, trace = qm.score_pairs(params, sents, templates, owner)
    params["head.w"] = params["head.w"] * (1.5 / max(np.abs(trace.logit).max(), 1e-3))
    upstream = rng.normal(size=n_pairs)
    return params, sents, templates, owner, upstream


TAGS = ("ROOT", "S", "NP", "VP", "PP", "SBAR", ".")


def random_library(n, seed=0, with_sources=False):
    """``n`` distinct random templates (truncated to 4 levels), optionally with paired sources."""
    rng = np.random.default_rng(seed)
    seen, targets, sources = set(), [], []
    while len(targets) < n:
        t = to_bracket(truncate(random_tree(rng, int(rng.integers(2, 25)), TAGS), 4))
        if t in seen:
            continue
        seen.add(t)
        targets.append(t)
        sources.append(to_bracket(random_tree(rng, int(rng.integers(2, 25)), TAGS)))
    return L.build_from_corpus(targets, sources if with_sources else None)


def model_for(lib, seed=0, d=16):
    """A jittered random model whose template vocabulary covers ``lib``."""
    sv = qm.Vocab([f"w{i}" for i in range(10)])
    tv = qm.Vocab.build(e.template.tokens for e in lib)
    params = qm.ModelParams.init(qm.Hyper(sv, tv, d_model=d, n_layers=1, n_heads=2, ffn_hidden=16), seed)
    rng = np.random.default_rng(seed)
    for name, arr in params.items():
        params[name] = arr + rng.normal(0, 0.3, arr.shape)
    return params
