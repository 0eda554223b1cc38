"""Ordered tree edit distance (Zhang & Shasha keyroot algorithm)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .syntree import SyntaxTree, node_count, parse_bracket, to_bracket


@dataclass(frozen=True)
class TedCosts:
    insert: float = 1.0
    delete: float = 1.0
    relabel: float = 1.0

    def __post_init__(self):
        if min(self.insert, self.delete, self.relabel) < 0:
            raise ValueError("edit costs must be non-negative")
        if self.relabel > self.insert + self.delete:
            raise ValueError("relabel cost exceeds insert + delete")


UNIT = TedCosts()


def _annotate(tree: SyntaxTree):
    """Postorder labels, leftmost-leaf indices and keyroots."""
    labels: list[str] = []
    lmld: list[int] = []
    # iterative postorder carrying each node's leftmost descendant
    stack = [(tree, False)]
    pending: list[int] = []
    while stack:
        node, done = stack.pop()
        if done:
            idx = len(labels)
            labels.append(node.label)
            first = pending.pop()
            lmld.append(idx if first < 0 else first)
            if pending and pending[-1] < 0:
                pending[-1] = lmld[idx]
            continue
        stack.append((node, True))
        pending.append(-1)
        for child in reversed(node.children):
            stack.append((child, False))
    # keyroot: the highest node sharing a given leftmost leaf
    seen = {}
    for i, l in enumerate(lmld):
        seen[l] = i
    keyroots = sorted(seen.values())
    return labels, lmld, keyroots


def ted(a: SyntaxTree, b: SyntaxTree, costs: TedCosts = UNIT) -> float:
    """Minimum cost of insert/delete/relabel operations turning ``a`` into ``b``."""
    la, ma, ka = _annotate(a)
    lb, mb, kb = _annotate(b)
    ins, dele, rel = costs.insert, costs.delete, costs.relabel
    td = [[0.0] * len(lb) for _ in range(len(la))]

    for i in ka:
        for j in kb:
            li, lj = ma[i], mb[j]
            rows, cols = i - li + 2, j - lj + 2
            fd = [[0.0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + dele
            for y in range(1, cols):
                fd[0][y] = fd[0][y - 1] + ins
            for x in range(1, rows):
                ai = x + li - 1
                fx, fx1 = fd[x], fd[x - 1]
                for y in range(1, cols):
                    bj = y + lj - 1
                    if ma[ai] == li and mb[bj] == lj:
                        sub = 0.0 if la[ai] == lb[bj] else rel
                        v = min(fx1[y] + dele, fx[y - 1] + ins, fx1[y - 1] + sub)
                        fx[y] = v
                        td[ai][bj] = v
                    else:
                        p = ma[ai] - li
                        q = mb[bj] - lj
                        fx[y] = min(fx1[y] + dele, fx[y - 1] + ins, fd[p][q] + td[ai][bj])
    return td[-1][-1]


def normalized_ted(a: SyntaxTree, b: SyntaxTree, costs: TedCosts = UNIT) -> float:
    """``ted / max(|a|, |b|)`` clamped to [0, 1]."""
    d = ted(a, b, costs) / max(node_count(a), node_count(b))
    return min(max(d, 0.0), 1.0)


@lru_cache(maxsize=200_000)
def _cached_normalized(text_a: str, text_b: str) -> float:
    return normalized_ted(parse_bracket(text_a), parse_bracket(text_b))


def normalized_ted_text(text_a: str, text_b: str) -> float:
    """Unit-cost normalized TED keyed by canonical bracket strings (memoized)."""
    if text_a == text_b:
        return 0.0
    if text_b < text_a:
        text_a, text_b = text_b, text_a
    return _cached_normalized(text_a, text_b)


def tree_text(tree: SyntaxTree) -> str:
    return to_bracket(tree)
