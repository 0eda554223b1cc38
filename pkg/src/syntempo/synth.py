"""Synthetic parallel corpus: grammar-sampled parse trees with POS-specific words.

Each source sentence is the word yield of a sampled tree, so its template is
recoverable from the tokens alone; the reference is an independently sampled
tree. Used with :class:`~syntempo.oracle.PlantedOracle` to exercise training
end to end without an external paraphrase generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .syntree import SyntaxTree, to_bracket

# nonterminal -> [(weight, rhs)]; rhs symbols without an entry are POS tags
GRAMMAR: dict[str, list[tuple[float, tuple[str, ...]]]] = {
    "ROOT": [(0.7, ("S",)), (0.3, ("SBARQ",))],
    "S": [
        (0.45, ("NP", "VP", ".")),
        (0.15, ("PP", ",", "NP", "VP", ".")),
        (0.15, ("VP", ".")),
        (0.10, ("NP", "VP")),
        (0.15, ("S", "CC", "S", ".")),
    ],
    "SBARQ": [(0.6, ("WHNP", "SQ", "?")), (0.4, ("WHADVP", "SQ", "?"))],
    "SQ": [(0.5, ("VBZ", "NP", "VP")), (0.3, ("MD", "NP", "VP")), (0.2, ("VBD", "NP"))],
    "WHNP": [(0.6, ("WP",)), (0.4, ("WDT", "NN"))],
    "WHADVP": [(1.0, ("WRB",))],
    "NP": [
        (0.25, ("DT", "NN")),
        (0.15, ("DT", "JJ", "NN")),
        (0.15, ("PRP",)),
        (0.10, ("NNP",)),
        (0.15, ("NP", "PP")),
        (0.10, ("DT", "NNS")),
        (0.10, ("CD", "NNS")),
    ],
    "VP": [
        (0.25, ("VBZ", "NP")),
        (0.15, ("VBD", "NP", "PP")),
        (0.15, ("MD", "VP")),
        (0.15, ("VBZ", "ADJP")),
        (0.10, ("VBD",)),
        (0.10, ("VBG", "NP")),
        (0.10, ("TO", "VP")),
    ],
    "PP": [(1.0, ("IN", "NP"))],
    "ADJP": [(0.6, ("JJ",)), (0.4, ("RB", "JJ"))],
}

# preferred non-recursive expansions once a branch gets deep
_SHALLOW = {
    "S": ("NP", "VP", "."),
    "NP": ("DT", "NN"),
    "VP": ("VBD",),
    "SQ": ("VBD", "NP"),
}

POS_SHARES = {
    "NN": 30, "NNS": 20, "NNP": 20, "JJ": 20, "VBZ": 15, "VBD": 15, "VBG": 10,
    "RB": 10, "IN": 10, "DT": 6, "PRP": 6, "CD": 6, "MD": 4, "CC": 3, "WP": 3,
    "WDT": 2, "WRB": 3, "TO": 1, ".": 1, ",": 1, "?": 1,
}
MAX_DEPTH = 7


def pos_vocabulary(size: int = 200) -> dict[str, list[str]]:
    """Split ``size`` word types across POS tags in proportion to ``POS_SHARES``."""
    total = sum(POS_SHARES.values())
    tags = list(POS_SHARES)
    if size < len(tags):
        raise ValueError(f"vocabulary size must be at least {len(tags)}, one word per tag")
    counts = {t: max(1, int(size * POS_SHARES[t] / total)) for t in tags}
    # hand the rounding remainder to the open classes, largest share first
    short = size - sum(counts.values())
    order = sorted(tags, key=lambda t: -POS_SHARES[t])
    i = 0
    while short > 0:
        counts[order[i % len(order)]] += 1
        short -= 1
        i += 1
    while short < 0:
        t = order[i % len(order)]
        if counts[t] > 1:
            counts[t] -= 1
            short += 1
        i += 1
    words = {}
    for t in tags:
        stem = {".": "PERIOD", ",": "COMMA", "?": "QMARK"}.get(t, t)
        words[t] = [f"{stem.lower()}_{j}" for j in range(counts[t])]
    return words


def sample_tree(rng: np.random.Generator, symbol: str = "ROOT", depth: int = 0) -> SyntaxTree:
    rules = GRAMMAR.get(symbol)
    if rules is None:
        return SyntaxTree(symbol)
    if depth >= MAX_DEPTH and symbol in _SHALLOW:
        rhs = _SHALLOW[symbol]
    else:
        weights = np.array([w for w, _ in rules])
        rhs = rules[rng.choice(len(rules), p=weights / weights.sum())][1]
    return SyntaxTree(symbol, tuple(sample_tree(rng, s, depth + 1) for s in rhs))


def tree_yield(tree: SyntaxTree, words: dict[str, list[str]], rng: np.random.Generator) -> list[str]:
    """One word per POS leaf, drawn uniformly from that tag's word list."""
    out = []
    for node in tree.preorder():
        if not node.children:
            choices = words[node.label]
            out.append(choices[int(rng.integers(len(choices)))])
    return out


@dataclass
class SynthExample:
    source_tokens: list[str]
    source_tree: SyntaxTree
    reference_tree: SyntaxTree

    def to_json(self) -> dict:
        return {
            "source_tokens": self.source_tokens,
            "source_tree": to_bracket(self.source_tree),
            "reference_tree": to_bracket(self.reference_tree),
        }


def generate(n: int, seed: int = 0, vocab_size: int = 200, max_tokens: int = 64) -> list[SynthExample]:
    rng = np.random.default_rng(seed)
    words = pos_vocabulary(vocab_size)
    out = []
    while len(out) < n:
        x = sample_tree(rng)
        toks = tree_yield(x, words, rng)
        if len(toks) > max_tokens:
            continue
        y = sample_tree(rng)
        out.append(SynthExample(toks, x, y))
    return out


def write_corpus(out_dir, n_train: int = 2000, n_dev: int = 400, seed: int = 0, vocab_size: int = 200,
                 planted_seed: int = 0) -> dict[str, str]:
    """Write train/dev datasets, parallel tree corpora and a planted-oracle description.

    Returns the written paths by role.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    examples = generate(n_train + n_dev, seed=seed, vocab_size=vocab_size)
    train, dev = examples[:n_train], examples[n_train:]
    paths = {
        "train": out / "train.jsonl",
        "dev": out / "dev.jsonl",
        "targets": out / "targets.txt",
        "sources": out / "sources.txt",
        "oracle": out / "oracle.json",
    }
    for name, rows in (("train", train), ("dev", dev)):
        with open(paths[name], "w", encoding="utf-8", newline="\n") as fh:
            for ex in rows:
                fh.write(json.dumps(ex.to_json()) + "\n")
    with open(paths["targets"], "w", encoding="utf-8", newline="\n") as ft, \
            open(paths["sources"], "w", encoding="utf-8", newline="\n") as fs:
        for ex in train:
            ft.write(to_bracket(ex.reference_tree) + "\n")
            fs.write(to_bracket(ex.source_tree) + "\n")
    with open(paths["oracle"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"variant": "planted", "seed": planted_seed, "ted_weight": 0.6, "hash_weight": 0.4,
                   "max_levels": 4}, fh)
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}
