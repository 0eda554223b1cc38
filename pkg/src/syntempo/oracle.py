"""Quality oracles supplying training targets q for (source, template) pairs.

Two variants:

* ``PrecomputedOracle`` reads JSON lines ``{"source", "template", "quality"}``
  (exact string keys: space-joined source tokens, canonical bracket template),
  e.g. real paraphrase-quality scores produced offline.
* ``PlantedOracle`` is a deterministic synthetic function used to check that the
  training machinery can recover a known signal.
"""

from __future__ import annotations

import hashlib
import json
import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DataError, OracleMiss
from .syntree import LinearTemplate, SyntaxTree, linearize, parse_bracket, to_bracket, truncate
from .ted import normalized_ted_text

FEATURE_DIM = 4
HASH_SHARPNESS = 4.0


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


@lru_cache(maxsize=None)
def _feature(seed: int, side: str, label: str) -> tuple[float, ...]:
    digest = hashlib.blake2b(f"{side}\x00{label}".encode(), digest_size=4 * FEATURE_DIM,
                             key=str(seed).encode()).digest()
    vals = np.frombuffer(digest, dtype="<u4") / 2**32
    return tuple(2.0 * vals - 1.0)


def _mean_feature(seed: int, side: str, labels: Sequence[str]) -> np.ndarray:
    return np.mean([_feature(seed, side, lab) for lab in labels], axis=0)


def hash_interaction(x_tree: SyntaxTree, t_tree: SyntaxTree, planted_seed: int) -> float:
    """Seeded interaction between the label bags of two trees, in [0, 1]."""
    a = _mean_feature(planted_seed, "x", x_tree.labels())
    b = _mean_feature(planted_seed, "t", t_tree.labels())
    return 0.5 * (1.0 + math.tanh(HASH_SHARPNESS * float(a @ b)))


def planted_quality(
    x_tree: SyntaxTree,
    t_tree: SyntaxTree,
    planted_seed: int,
    ted_weight: float = 0.6,
    hash_weight: float = 0.4,
    max_levels: int = 4,
) -> float:
    """``clamp(ted_weight * (1 - nTED(template(x), t)) + hash_weight * g(x, t))``."""
    x_t = truncate(x_tree, max_levels)
    t_t = truncate(t_tree, max_levels)
    q = ted_weight * (1.0 - normalized_ted_text(to_bracket(x_t), to_bracket(t_t)))
    if hash_weight:
        q += hash_weight * hash_interaction(x_t, t_t, planted_seed)
    return _clamp01(q)


class QualityOracle:
    def quality(self, source_tokens: Sequence[str], source_tree, template: LinearTemplate) -> float:
        raise NotImplementedError


class PlantedOracle(QualityOracle):
    def __init__(self, seed: int = 0, ted_weight: float = 0.6, hash_weight: float = 0.4, max_levels: int = 4):
        self.seed = seed
        self.ted_weight = ted_weight
        self.hash_weight = hash_weight
        self.max_levels = max_levels
        self._memo: dict[tuple[str, str], float] = {}

    def quality(self, source_tokens, source_tree, template):
        if source_tree is None:
            raise OracleMiss("planted oracle needs the source parse tree")
        x_text = source_tree if isinstance(source_tree, str) else to_bracket(source_tree)
        key = (x_text, template.text)
        if key not in self._memo:
            x = parse_bracket(x_text)
            self._memo[key] = planted_quality(
                x, template.to_tree(), self.seed, self.ted_weight, self.hash_weight, self.max_levels
            )
        return self._memo[key]

    def to_json(self) -> dict:
        return {
            "variant": "planted",
            "seed": self.seed,
            "ted_weight": self.ted_weight,
            "hash_weight": self.hash_weight,
            "max_levels": self.max_levels,
        }


class PrecomputedOracle(QualityOracle):
    def __init__(self, table: dict[tuple[str, str], float]):
        self.table = table

    @classmethod
    def load(cls, path) -> "PrecomputedOracle":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    template = linearize(parse_bracket(rec["template"])).text
                    table[(rec["source"], template)] = _clamp01(float(rec["quality"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"bad oracle record at line {lineno}: {exc}") from None
        return cls(table)

    def quality(self, source_tokens, source_tree, template):
        key = (" ".join(source_tokens), template.text)
        try:
            return self.table[key]
        except KeyError:
            raise OracleMiss(f"no quality for source {key[0]!r} with template {key[1]!r}") from None


def write_precomputed(path, records) -> None:
    """``records``: iterable of (source tokens, template, quality)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tokens, template, q in records:
            text = template.text if isinstance(template, LinearTemplate) else str(template)
            fh.write(json.dumps({"source": " ".join(tokens), "template": text, "quality": q}) + "\n")


def load_oracle(path) -> QualityOracle:
    """A JSON object with ``"variant": "planted"`` describes a planted oracle; anything else is a JSONL table."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        settings = json.loads(text)
    except json.JSONDecodeError:
        settings = None
    if isinstance(settings, dict) and settings.get("variant") == "planted":
        return PlantedOracle(
            seed=int(settings.get("seed", 0)),
            ted_weight=float(settings.get("ted_weight", 0.6)),
            hash_weight=float(settings.get("hash_weight", 0.4)),
            max_levels=int(settings.get("max_levels", 4)),
        )
    return PrecomputedOracle.load(path)
