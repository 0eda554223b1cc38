"""
Top-k retrieval against diverse template search
===============================================

Plain top-k retrieval tends to return near-duplicates: if one template scores
well, its one-node variants usually score well too. The diverse search walks
the library once, keeps a min-heap of ``d`` templates, and only lets a new
template in when it is far enough (normalized TED > beta) from everything
already kept.

The scorer here is a small briefly trained model on synthetic data, so the
absolute scores mean little; the point is the shape of the two result lists.

Run with ``python demos/diverse_search.py`` (about a minute).
"""

import numpy as np

from syntempo import library, retrieval
from syntempo import model as qm
from syntempo.oracle import PlantedOracle
from syntempo.synth import generate
from syntempo.syntree import to_bracket
from syntempo.ted import normalized_ted
from syntempo.trainer import Example, TrainConfig, build_candidate_sets, train_on_sets

examples = [Example(e.source_tokens, e.source_tree, e.reference_tree) for e in generate(300, seed=1)]
lib = library.build_from_corpus([to_bracket(e.reference_tree) for e in examples],
                                [to_bracket(e.source_tree) for e in examples])
print(f"library: {len(lib)} distinct templates from {lib.total_frequency} trees")

sets = build_candidate_sets(examples, lib, PlantedOracle(0), k=10, seed=0)
hyper = qm.Hyper(qm.Vocab.build(e.source_tokens for e in examples),
                 qm.Vocab.build([e.template.tokens for e in lib] + [t.tokens for s in sets for t in s.templates]),
                 d_model=16, n_layers=1, n_heads=2, ffn_hidden=32)
result = train_on_sets(qm.ModelParams.init(hyper, 0), sets,
                       TrainConfig(epochs=2, batch_size=8, lr=3e-3, seed=0))
params = result.params

query = examples[0].source_tokens
cache = qm.encode_library(params, lib)
top = retrieval.retrieve_topk(query, lib, params, k=5, cache=cache)
div = retrieval.dts(query, lib, params, d=5, beta=0.2, cache=cache)


def spread(ids):
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    return np.mean([normalized_ted(lib[a].tree, lib[b].tree) for a, b in pairs])


print("\nquery:", " ".join(query))
print("\ntop-5 by score")
for i, s in top.ranked:
    print(f"  {s:.3f}  {lib[i].text}")
print(f"  mean pairwise normalized TED {spread(top.ids):.3f}")

print("\ndiverse search, d=5, beta=0.2")
for i, s in div.ranked():
    print(f"  {s:.3f}  {lib[i].text}")
print(f"  mean pairwise normalized TED {spread([i for i, _ in div.ranked()]):.3f}")
replaced = sum(e["event"] == "replace" for e in div.events)
print(f"  {replaced} replacements after the heap filled")

print("\nbaselines")
print("  random   ", retrieval.baseline_random(lib, seed=0).text)
print("  frequent ", retrieval.baseline_freq(lib).text)
print("  AESOP-R  ", retrieval.baseline_aesop_r(examples[0].source_tree, lib).text)
