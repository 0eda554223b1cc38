"""
Scoring paraphrases
===================

The metric report compares each source's first paraphrase with the source
(BLEU-S, lower means more rewriting) and with a reference (BLEU-R), and folds
the two into iBLEU. When several paraphrases are given per source it also
measures how alike they are to each other (M-BLEU) and how many are exact
repeats (Rep-Rate).

Run with ``python demos/evaluate_paraphrases.py``.
"""

import json

from syntempo import metrics
from syntempo.syntree import parse_bracket

sets = [
    metrics.ParaphraseSet(
        source="how can i improve my english writing skills ?".split(),
        paraphrases=[p.split() for p in (
            "what should i do to write better english ?",
            "how do i get better at writing in english ?",
            "what should i do to write better english ?",
        )],
        reference="what can i do to improve my english writing ?".split(),
        trees=[parse_bracket(t) for t in (
            "(ROOT (SBARQ (WHNP ) (SQ ) (. )))",
            "(ROOT (SBARQ (WHADVP ) (SQ ) (. )))",
            "(ROOT (SBARQ (WHNP ) (SQ ) (. )))",
        )],
    ),
    metrics.ParaphraseSet(
        source="the meeting was moved to friday .".split(),
        paraphrases=[p.split() for p in (
            "they moved the meeting to friday .",
            "friday is the new day for the meeting .",
            "the meeting is now on friday .",
        )],
        reference="the meeting has been moved to friday .".split(),
        trees=[parse_bracket(t) for t in (
            "(ROOT (S (NP ) (VP ) (. )))",
            "(ROOT (S (NP ) (VP ) (. )))",
            "(ROOT (S (NP ) (VP ) (. )))",
        )],
    ),
]
templates = [parse_bracket("(ROOT (SBARQ (WHNP ) (SQ ) (. )))"), parse_bracket("(ROOT (S (NP ) (VP ) (. )))")]

report = metrics.report(sets, templates=templates)
print(json.dumps({k: (round(v, 3) if v is not None else None) for k, v in report.items()}, indent=2))

# cos_s and cos_r stay null without an embedding table; a toy one:
table = metrics.EmbeddingTable()
for s, vec in [(" ".join(sets[0].paraphrases[0]), [0.9, 0.1, 0.3]),
               (" ".join(sets[0].source), [0.8, 0.2, 0.4]),
               (" ".join(sets[0].reference), [0.85, 0.1, 0.35])]:
    table.add(s, vec)
print("\ncosine(paraphrase, source) =",
      round(metrics.cosine(" ".join(sets[0].paraphrases[0]), " ".join(sets[0].source), table), 4))
