"""Template library: truncated, deduplicated target-side parse trees.

File layout (JSON lines, UTF-8)::

    {"format": "syntempo-lib", "version": 1, "entries": N, "occurrences": M, "max_levels": 4}
    {"id": 0, "template": "(ROOT (S ))", "frequency": 3, "paired": ["(ROOT (S ))"]}
    ...
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import zip_longest
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DataError,
    EmptyLibrary,
    FormatVersionMismatch,
    LengthMismatch,
    ParseError,
    SampleTooLarge,
)
from .syntree import LinearTemplate, SyntaxTree, linearize, parse_bracket, truncate

FORMAT_NAME = "syntempo-lib"
FORMAT_VERSION = 1


@dataclass
class TemplateEntry:
    id: int
    template: LinearTemplate
    tree: SyntaxTree
    frequency: int = 1
    paired_source_trees: list[SyntaxTree] = field(default_factory=list)

    @property
    def text(self) -> str:
        return self.template.text


class TemplateLibrary:
    def __init__(self, entries: Optional[list[TemplateEntry]] = None, max_levels: int = 4):
        self.entries: list[TemplateEntry] = []
        self.by_template: dict[str, int] = {}
        self.max_levels = max_levels
        for e in entries or []:
            self._append(e)

    def _append(self, entry: TemplateEntry):
        if entry.id != len(self.entries):
            raise DataError(f"entry id {entry.id} is not dense (expected {len(self.entries)})")
        if entry.text in self.by_template:
            raise DataError(f"duplicate template {entry.text!r}")
        self.entries.append(entry)
        self.by_template[entry.text] = entry.id

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx: int) -> TemplateEntry:
        return self.entries[idx]

    def __eq__(self, other):
        if not isinstance(other, TemplateLibrary):
            return NotImplemented
        return self.max_levels == other.max_levels and _records(self) == _records(other)

    def lookup(self, tree_or_text) -> Optional[TemplateEntry]:
        """Exact match on the truncated canonical form; None when absent."""
        if isinstance(tree_or_text, str):
            tree_or_text = parse_bracket(tree_or_text)
        key = linearize(truncate(tree_or_text, self.max_levels)).text
        idx = self.by_template.get(key)
        return None if idx is None else self.entries[idx]

    def add(self, target: SyntaxTree, source: Optional[SyntaxTree] = None) -> TemplateEntry:
        tree = truncate(target, self.max_levels)
        template = linearize(tree)
        idx = self.by_template.get(template.text)
        if idx is None:
            entry = TemplateEntry(len(self.entries), template, tree, 0)
            self._append(entry)
        else:
            entry = self.entries[idx]
        entry.frequency += 1
        if source is not None:
            entry.paired_source_trees.append(truncate(source, self.max_levels))
        return entry

    @property
    def total_frequency(self) -> int:
        return sum(e.frequency for e in self.entries)

    def texts(self) -> list[str]:
        return [e.text for e in self.entries]


_MISSING = object()


def build_from_corpus(
    target_trees: Iterable,
    source_trees: Optional[Iterable] = None,
    max_levels: int = 4,
) -> TemplateLibrary:
    """Build a library from bracket strings (or trees), one per target sentence.

    Blank strings are skipped; if a source stream is given it must be parallel to
    the target stream and each source tree is stored as pairing metadata.
    """
    lib = TemplateLibrary(max_levels=max_levels)
    sources = source_trees if source_trees is not None else ()
    fill = _MISSING
    for lineno, (tgt, src) in enumerate(zip_longest(target_trees, sources, fillvalue=fill), 1):
        if tgt is _MISSING or (source_trees is not None and src is _MISSING):
            raise LengthMismatch(f"source and target streams differ in length at line {lineno}")
        if isinstance(tgt, str) and not tgt.strip():
            if source_trees is not None and not (isinstance(src, str) and not src.strip()):
                raise LengthMismatch(f"blank target paired with non-blank source at line {lineno}")
            continue
        try:
            t = parse_bracket(tgt) if isinstance(tgt, str) else tgt
            s = None
            if source_trees is not None:
                s = parse_bracket(src) if isinstance(src, str) else src
        except ParseError as exc:
            raise type(exc)(exc.reason, offset=exc.offset, line=lineno) from None
        lib.add(t, s)
    return lib


def build_from_files(target_path, source_path=None, max_levels: int = 4) -> TemplateLibrary:
    with open(target_path, encoding="utf-8") as tf:
        if source_path is None:
            return build_from_corpus((line.rstrip("\n") for line in tf), max_levels=max_levels)
        with open(source_path, encoding="utf-8") as sf:
            return build_from_corpus(
                (line.rstrip("\n") for line in tf),
                (line.rstrip("\n") for line in sf),
                max_levels=max_levels,
            )


def most_frequent(lib: TemplateLibrary) -> TemplateEntry:
    if not len(lib):
        raise EmptyLibrary("library is empty")
    best = lib.entries[0]
    for e in lib.entries[1:]:
        if e.frequency > best.frequency:
            best = e
    return best


def random_sample(lib: TemplateLibrary, n: int, rng_seed: int) -> list[TemplateEntry]:
    """Uniform draw of ``n`` distinct entries, reproducible for a given seed."""
    if n > len(lib):
        raise SampleTooLarge(f"cannot draw {n} from {len(lib)} entries")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(lib), size=n, replace=False)
    return [lib.entries[int(i)] for i in picks]


def _records(lib: TemplateLibrary) -> list[dict]:
    return [
        {
            "id": e.id,
            "template": e.text,
            "frequency": e.frequency,
            "paired": [linearize(p).text for p in e.paired_source_trees],
        }
        for e in lib.entries
    ]


def dumps(lib: TemplateLibrary) -> str:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "entries": len(lib),
        "occurrences": lib.total_frequency,
        "max_levels": lib.max_levels,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(r, ensure_ascii=False) for r in _records(lib))
    return "\n".join(lines) + "\n"


def save(lib: TemplateLibrary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(lib))


def load(path) -> TemplateLibrary:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatVersionMismatch("empty library file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise FormatVersionMismatch("library header is not JSON") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise FormatVersionMismatch("not a template library file")
    if header.get("version") != FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported library version {header.get('version')!r}")

    lib = TemplateLibrary(max_levels=int(header.get("max_levels", 4)))
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            tree = parse_bracket(rec["template"])
            entry = TemplateEntry(
                id=int(rec["id"]),
                template=linearize(tree),
                tree=tree,
                frequency=int(rec["frequency"]),
                paired_source_trees=[parse_bracket(p) for p in rec.get("paired", [])],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad library record at line {lineno}: {exc}") from None
        lib._append(entry)
    if len(lib) != header.get("entries") or lib.total_frequency != header.get("occurrences"):
        raise DataError("library header counts disagree with its records")
    return lib
