"""Constituency trees used as syntactic templates.

Trees are immutable: a label plus an ordered tuple of children.  Terminal words
are never stored, so a preterminal such as ``(LS )`` is simply a node without
children.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .errors import EmptyLabel, ParseError, TrailingContent, UnbalancedParens

_SPECIAL = frozenset("()")


@dataclass(frozen=True)
class SyntaxTree:
    label: str
    children: tuple[SyntaxTree, ...] = ()

    def __post_init__(self):
        if not self.label or any(c in _SPECIAL or c.isspace() for c in self.label):
            raise EmptyLabel(f"invalid label {self.label!r}")
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    def __str__(self):
        return to_bracket(self)

    def preorder(self) -> Iterator[SyntaxTree]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def labels(self) -> list[str]:
        return [n.label for n in self.preorder()]


@dataclass(frozen=True)
class LinearTemplate:
    """Bracket token sequence, e.g. ``("(", "ROOT", "(", "S", ")", ")")``."""

    tokens: tuple[str, ...]
    _text: str = field(default="", repr=False, compare=False)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    @property
    def text(self) -> str:
        """Canonical bracket string; doubles as the library dedup key."""
        if not self._text:
            object.__setattr__(self, "_text", _tokens_to_text(self.tokens))
        return self._text

    def to_tree(self) -> SyntaxTree:
        return parse_tokens(self.tokens)


def _tokens_to_text(tokens: Sequence[str]) -> str:
    out = []
    for i, tok in enumerate(tokens):
        if tok == "(":
            if i and tokens[i - 1] != "(":
                out.append(" ")
            out.append("(")
        elif tok == ")":
            if tokens[i - 1] != ")":
                out.append(" ")
            out.append(")")
        else:
            out.append(tok)
    return "".join(out)


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str) -> list[tuple[str, int]]:
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in _SPECIAL:
            toks.append((c, i))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in _SPECIAL:
                j += 1
            toks.append((text[i:j], i))
            i = j
    return toks


def _build(tokens: Sequence[tuple[str, int]], text: str) -> SyntaxTree:
    def offset(k):
        if k >= len(tokens):
            return len(text.encode("utf-8"))
        return _byte_offset(text, tokens[k][1])

    if not tokens:
        raise UnbalancedParens("empty input", offset=0)
    if tokens[0][0] != "(":
        raise UnbalancedParens("expected '('", offset=offset(0))

    # each frame: [label, children]
    stack: list[list] = []
    root = None
    k = 0
    while k < len(tokens):
        tok = tokens[k][0]
        if root is not None:
            raise TrailingContent("content after the root closes", offset=offset(k))
        if tok == "(":
            if k + 1 >= len(tokens):
                raise UnbalancedParens("unclosed '('", offset=offset(k))
            label = tokens[k + 1][0]
            if label in _SPECIAL:
                raise EmptyLabel("missing label after '('", offset=offset(k + 1))
            stack.append([label, []])
            k += 2
        elif tok == ")":
            if not stack:
                raise UnbalancedParens("unmatched ')'", offset=offset(k))
            label, kids = stack.pop()
            node = SyntaxTree(label, tuple(kids))
            if stack:
                stack[-1][1].append(node)
            else:
                root = node
            k += 1
        else:
            if not stack:
                raise TrailingContent("bare token outside brackets", offset=offset(k))
            # terminal word: templates never keep words
            k += 1
    if stack:
        raise UnbalancedParens("unclosed '('", offset=offset(len(tokens)))
    return root


def parse_bracket(text: str) -> SyntaxTree:
    """Parse one bracket expression such as ``"(ROOT (S (VP )))"``.

    Whitespace between tokens is ignored. Bare words inside a constituent are
    treated as terminals and dropped.
    """
    return _build(_tokenize(text), text)


def parse_tokens(tokens: Sequence[str]) -> SyntaxTree:
    text = " ".join(tokens)
    positions = []
    pos = 0
    for tok in tokens:
        positions.append((tok, pos))
        pos += len(tok) + 1
    return _build(positions, text)


def linearize(tree: SyntaxTree) -> LinearTemplate:
    out: list[str] = []
    stack: list[object] = [tree]
    while stack:
        item = stack.pop()
        if item is None:
            out.append(")")
            continue
        out.append("(")
        out.append(item.label)
        stack.append(None)
        stack.extend(reversed(item.children))
    return LinearTemplate(tuple(out))


def to_bracket(tree: SyntaxTree) -> str:
    return linearize(tree).text


def truncate(tree: SyntaxTree, max_levels: int) -> SyntaxTree:
    """Keep nodes at depth < max_levels (root has depth 0)."""
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")

    def cut(node, depth):
        if depth + 1 >= max_levels:
            return SyntaxTree(node.label)
        return SyntaxTree(node.label, tuple(cut(c, depth + 1) for c in node.children))

    return cut(tree, 0)


def node_count(tree: SyntaxTree) -> int:
    return sum(1 for _ in tree.preorder())


def height(tree: SyntaxTree) -> int:
    """Number of levels; a root-only tree has height 1."""
    best = 0
    stack = [(tree, 1)]
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        stack.extend((c, d + 1) for c in node.children)
    return best


def read_trees(path, skip_blank: bool = True) -> Iterator[tuple[int, SyntaxTree]]:
    """Yield ``(line_number, tree)`` for each non-blank line of a corpus file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if skip_blank and not line.strip():
                continue
            try:
                yield lineno, parse_bracket(line)
            except ParseError as exc:
                raise type(exc)(exc.reason, offset=exc.offset, line=lineno) from None
