"""Template retrieval: exact top-k, Diverse Templates Search, heuristic baselines.

DTS is a single pass over the library in ascending id order. The first ``d``
templates are pushed unconditionally; after that a template replaces the
heap minimum only if its normalized TED to every current member (including
the one about to be popped) exceeds ``beta`` and its score beats the minimum.
Because of the fill phase the final set is not guaranteed to be pairwise
diverse; ``strict=True`` applies the diversity test during fill as well.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model as qm
from .errors import EmptyLibrary, KTooLarge, NoPairings
from .library import TemplateEntry, TemplateLibrary, most_frequent
from .syntree import SyntaxTree, to_bracket, truncate
from .ted import normalized_ted_text


@dataclass
class RetrievalResult:
    ranked: list[tuple[int, float]]
    source_tokens: list[str] = field(default_factory=list)
    model_hash: Optional[str] = None
    wall_time: float = 0.0

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.ranked]

    def to_jsonl(self, lib: TemplateLibrary) -> str:
        return "".join(
            json.dumps({"rank": r, "template": lib[i].text, "score": s}) + "\n"
            for r, (i, s) in enumerate(self.ranked, 1)
        )


def library_scores(x_tokens: Sequence[str], lib: TemplateLibrary, params: qm.ModelParams,
                   cache: Optional[qm.TemplateEncodingCache] = None, threads: int = 1) -> np.ndarray:
    """Score every library entry against one sentence, in id order."""
    params_hash = params.content_hash()
    if cache is None:
        cache = qm.encode_library(params, lib)
    return qm.score_library(params, x_tokens, cache, threads=threads, params_hash=params_hash)


def rank_scores(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top ``k`` (id, score) pairs: score descending, ties to the lower id."""
    scores = np.asarray(scores, dtype=np.float64)
    if k > len(scores):
        raise KTooLarge(f"k={k} exceeds library size {len(scores)}")
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return [(int(i), float(scores[i])) for i in order]


def retrieve_topk(x_tokens: Sequence[str], lib: TemplateLibrary, params: qm.ModelParams, k: int,
                  cache: Optional[qm.TemplateEncodingCache] = None, threads: int = 1) -> RetrievalResult:
    if k > len(lib):
        raise KTooLarge(f"k={k} exceeds library size {len(lib)}")
    t0 = time.perf_counter()
    scores = library_scores(x_tokens, lib, params, cache, threads)
    return RetrievalResult(rank_scores(scores, k), list(x_tokens), params.content_hash(),
                           time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Diverse Templates Search


@dataclass
class DiverseSet:
    capacity: int
    beta: float
    heap: list[tuple[float, int]] = field(default_factory=list)  # (score, id), heapq order
    events: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.heap)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(i, s) for s, i in self.heap]

    def ranked(self) -> list[tuple[int, float]]:
        return [(i, s) for s, i in sorted(self.heap, key=lambda e: (-e[0], e[1]))]

    def min_score(self) -> float:
        return self.heap[0][0]

    def to_result(self, source_tokens=(), model_hash=None, wall_time=0.0) -> RetrievalResult:
        return RetrievalResult(self.ranked(), list(source_tokens), model_hash, wall_time)

    def replay_log(self) -> str:
        return "".join(json.dumps(ev) + "\n" for ev in self.events)


def _min_ted(text: str, members: Sequence[str]) -> float:
    return min(normalized_ted_text(text, m) for m in members)


def dts_from_scores(scores: Sequence[float], lib: TemplateLibrary, d: int = 10, beta: float = 0.2,
                    strict: bool = False) -> DiverseSet:
    """Run the DTS state machine over pre-computed id-ordered scores."""
    if d < 1:
        raise ValueError("d must be at least 1")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if len(scores) != len(lib):
        raise ValueError(f"{len(scores)} scores for a library of {len(lib)}")
    out = DiverseSet(d, beta)
    heap = out.heap
    texts: dict[int, str] = {}
    for i, s in enumerate(scores):
        s = float(s)
        text = lib[i].text
        if len(heap) < d:
            if strict and heap and _min_ted(text, list(texts.values())) <= beta:
                continue
            heapq.heappush(heap, (s, i))
            texts[i] = text
            out.events.append({"event": "push", "step": i, "id": i, "score": s,
                               "heap_min": heap[0][0], "size": len(heap)})
            continue
        # cheap score test first; the conjunction is the same either way
        low_s, low_id = heap[0]
        if not s > low_s:
            continue
        gap = _min_ted(text, list(texts.values()))
        if not gap > beta:
            continue
        heapq.heapreplace(heap, (s, i))
        del texts[low_id]
        texts[i] = text
        out.events.append({"event": "replace", "step": i, "id": i, "score": s, "popped_id": low_id,
                           "popped_score": low_s, "min_ted": gap, "heap_min": heap[0][0],
                           "size": len(heap)})
    return out


def dts(x_tokens: Sequence[str], lib: TemplateLibrary, params: qm.ModelParams, d: int = 10,
        beta: float = 0.2, cache: Optional[qm.TemplateEncodingCache] = None, threads: int = 1,
        strict: bool = False) -> DiverseSet:
    scores = library_scores(x_tokens, lib, params, cache, threads)
    return dts_from_scores(scores, lib, d, beta, strict)


# ---------------------------------------------------------------------------
# baselines


def baseline_random(lib: TemplateLibrary, seed: int = 0) -> TemplateEntry:
    if not len(lib):
        raise EmptyLibrary("cannot draw from an empty library")
    return lib[int(np.random.default_rng(seed).integers(len(lib)))]


def baseline_freq(lib: TemplateLibrary) -> TemplateEntry:
    return most_frequent(lib)


def baseline_aesop_r(x_tree: SyntaxTree, lib: TemplateLibrary) -> TemplateEntry:
    """Entry whose paired source tree is structurally closest to ``x_tree``."""
    x_text = to_bracket(truncate(x_tree, lib.max_levels))
    best: Optional[tuple[float, int]] = None
    for entry in lib:
        for src in entry.paired_source_trees:
            dist = normalized_ted_text(x_text, to_bracket(src))
            # strict < keeps the lower id, then the first pairing
            if best is None or dist < best[0]:
                best = (dist, entry.id)
    if best is None:
        raise NoPairings("library has no paired source trees")
    return lib[best[1]]
