"""Paraphrase evaluation: BLEU, iBLEU, TED, M-BLEU, Rep-Rate and embedding cosine.

BLEU is corpus-level with four n-gram orders, uniform weights and the usual
brevity penalty. A zero match count for n >= 2 is smoothed to 1/(total+1);
a zero unigram match gives 0. Scores are on the 0-100 scale.

Rep-Rate counts, within each source, paraphrases whose exact token sequence
already occurred earlier in that source's list, and divides the total count
by the total number of paraphrases over all sources.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, EmptyCorpus, MissingEmbedding, TooFewParaphrases, ZeroVector
from .syntree import SyntaxTree, parse_bracket, truncate
from .ted import normalized_ted
from .trainer import pcc  # noqa: F401  (re-exported)

MAX_N = 4
IBLEU_ALPHA = 0.8


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyp: Sequence[str], ref: Sequence[str], max_n: int = MAX_N) -> np.ndarray:
    """[hyp_len, ref_len, match_1, total_1, ..., match_n, total_n] for one pair."""
    out = np.zeros(2 + 2 * max_n, dtype=np.int64)
    out[0], out[1] = len(hyp), len(ref)
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        out[2 * n] = sum(min(c, r[g]) for g, c in h.items())
        out[2 * n + 1] = max(len(hyp) - n + 1, 0)
    return out


def bleu_from_stats(stats: np.ndarray, max_n: int = MAX_N) -> float:
    hyp_len, ref_len = int(stats[0]), int(stats[1])
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        m, t = int(stats[2 * n]), int(stats[2 * n + 1])
        if m == 0:
            if n == 1:
                return 0.0
            m, t = 1, t + 1
        log_p += math.log(m / t) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    if not hypotheses:
        raise EmptyCorpus("no hypotheses")
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    total = sum(bleu_stats(h, r) for h, r in zip(hypotheses, references))
    return bleu_from_stats(total)


def ibleu(bleu_r: float, bleu_s: float, alpha: float = IBLEU_ALPHA) -> float:
    return alpha * bleu_r - (1.0 - alpha) * bleu_s


@dataclass
class ParaphraseSet:
    source: list[str]
    paraphrases: list[list[str]]
    reference: Optional[list[str]] = None
    trees: Optional[list[SyntaxTree]] = None

    def __post_init__(self):
        if not self.paraphrases:
            raise DataError("a paraphrase set needs at least one paraphrase")
        if self.trees is not None and len(self.trees) != len(self.paraphrases):
            raise DataError(f"{len(self.trees)} trees for {len(self.paraphrases)} paraphrases")


def _as_sets(sets) -> list[ParaphraseSet]:
    return [sets] if isinstance(sets, ParaphraseSet) else list(sets)


def m_bleu(sets) -> float:
    """Mean over ordered paraphrase positions (i, j), i != j, of corpus BLEU(i vs j).

    Each corpus runs over the sources that have both positions.
    """
    sets = _as_sets(sets)
    if not sets:
        raise EmptyCorpus("no paraphrase sets")
    if any(len(s.paraphrases) < 2 for s in sets):
        raise TooFewParaphrases("M-BLEU needs at least two paraphrases per source")
    width = max(len(s.paraphrases) for s in sets)
    scores = []
    for i in range(width):
        for j in range(width):
            if i == j:
                continue
            pairs = [(s.paraphrases[i], s.paraphrases[j]) for s in sets if len(s.paraphrases) > max(i, j)]
            if pairs:
                scores.append(bleu([h for h, _ in pairs], [r for _, r in pairs]))
    return float(np.mean(scores))


def rep_rate(sets) -> float:
    sets = _as_sets(sets)
    if not sets:
        raise EmptyCorpus("no paraphrase sets")
    if any(len(s.paraphrases) < 2 for s in sets):
        raise TooFewParaphrases("Rep-Rate needs at least two paraphrases per source")
    repeats = total = 0
    for s in sets:
        seen = set()
        for p in s.paraphrases:
            key = tuple(p)
            repeats += key in seen
            seen.add(key)
        total += len(s.paraphrases)
    return 100.0 * repeats / total


def ted_metric(paraphrase_tree: SyntaxTree, template_tree: SyntaxTree, max_levels: int = 4,
               full_depth: bool = False) -> float:
    if not full_depth:
        paraphrase_tree = truncate(paraphrase_tree, max_levels)
        template_tree = truncate(template_tree, max_levels)
    return normalized_ted(paraphrase_tree, template_tree)


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    dim: Optional[int] = None

    def add(self, sentence: str, vector) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.ndim != 1:
            raise DataError(f"embedding for {sentence!r} is not a vector")
        if self.dim is None:
            self.dim = v.shape[0]
        elif v.shape[0] != self.dim:
            raise DataError(f"embedding for {sentence!r} has dimension {v.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(v)):
            raise DataError(f"embedding for {sentence!r} is not finite")
        self.vectors[sentence] = v

    def __getitem__(self, sentence: str) -> np.ndarray:
        try:
            return self.vectors[sentence]
        except KeyError:
            raise MissingEmbedding(f"no embedding for {sentence!r}") from None

    def __contains__(self, sentence):
        return sentence in self.vectors

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        table = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    sentence, vector = rec["sentence"], rec["vector"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"bad embedding record at line {lineno}: {exc}") from None
                table.add(sentence, vector)
        return table


def cosine(a: str, b: str, table: EmbeddingTable) -> float:
    u, v = table[a], table[b]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector(f"zero embedding for {a if nu == 0.0 else b!r}")
    return float(u @ v / (nu * nv))


# ---------------------------------------------------------------------------
# report


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def report(sets: Sequence[ParaphraseSet], templates: Optional[Sequence[SyntaxTree]] = None,
           embeddings: Optional[EmbeddingTable] = None, alpha: float = IBLEU_ALPHA,
           max_levels: int = 4, full_depth: bool = False) -> dict:
    """Metric report over a corpus of paraphrase sets.

    BLEU, TED and cosine use each set's first paraphrase (the top-1 template);
    M-BLEU and Rep-Rate use the whole list. Entries are None when their inputs
    are missing.
    """
    sets = list(sets)
    if not sets:
        raise EmptyCorpus("no paraphrase sets")
    top = [s.paraphrases[0] for s in sets]
    out = dict.fromkeys(["bleu_s", "bleu_r", "ibleu", "ted", "m_bleu", "rep_rate", "cos_s", "cos_r"])
    out["bleu_s"] = bleu(top, [s.source for s in sets])
    if all(s.reference is not None for s in sets):
        out["bleu_r"] = bleu(top, [s.reference for s in sets])
        out["ibleu"] = ibleu(out["bleu_r"], out["bleu_s"], alpha)
    if templates is not None:
        if len(templates) != len(sets):
            raise DataError(f"{len(templates)} templates for {len(sets)} sources")
        if all(s.trees is not None for s in sets):
            out["ted"] = _mean([ted_metric(s.trees[0], t, max_levels, full_depth)
                                for s, t in zip(sets, templates)])
    if all(len(s.paraphrases) >= 2 for s in sets):
        out["m_bleu"] = m_bleu(sets)
        out["rep_rate"] = rep_rate(sets)
    if embeddings is not None:
        out["cos_s"] = _mean([cosine(" ".join(p), " ".join(s.source), embeddings) for p, s in zip(top, sets)])
        if all(s.reference is not None for s in sets):
            out["cos_r"] = _mean([cosine(" ".join(p), " ".join(s.reference), embeddings)
                                  for p, s in zip(top, sets)])
    return out


def load_paraphrase_sets(path, references_path=None) -> list[ParaphraseSet]:
    """JSONL ``{"source", "paraphrases", "reference"?, "trees"?}``; strings are whitespace-tokenized.

    ``references_path``, when given, is a text file with one reference per
    line that overrides the inline field.
    """
    sets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                trees = rec.get("trees")
                sets.append(ParaphraseSet(
                    rec["source"].split(),
                    [p.split() for p in rec["paraphrases"]],
                    rec["reference"].split() if rec.get("reference") is not None else None,
                    [parse_bracket(t) for t in trees] if trees is not None else None,
                ))
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                raise DataError(f"bad paraphrase record at line {lineno}: {exc}") from None
    if references_path is not None:
        with open(references_path, encoding="utf-8") as fh:
            refs = [ln.split() for ln in fh.read().splitlines()]
        if len(refs) != len(sets):
            raise DataError(f"{len(refs)} references for {len(sets)} paraphrase sets")
        for s, r in zip(sets, refs):
            s.reference = r
    return sets
