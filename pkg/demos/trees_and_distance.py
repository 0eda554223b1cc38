"""
Templates, truncation and tree edit distance
============================================

A template is the top of a constituency parse with the words removed. This
walks through parsing a bracket string, cutting it down to a few levels,
turning it into model tokens, and comparing two templates.

Run with ``python demos/trees_and_distance.py``.
"""

from syntempo.syntree import height, linearize, node_count, parse_bracket, to_bracket, truncate
from syntempo.ted import normalized_ted, ted

# terminals are dropped by the parser; only the labelled skeleton remains
full = parse_bracket("(ROOT (S (NP (PRP I)) (VP (VBD saw) (NP (DT the) (NN cat))) (. .)))")
print("parsed      ", to_bracket(full))
print("nodes", node_count(full), "height", height(full))

# keep the top four levels; everything deeper is cut away
template = truncate(full, 4)
print("4 levels    ", to_bracket(template))
print("3 levels    ", to_bracket(truncate(full, 3)))

lin = linearize(template)
print("tokens      ", lin.tokens)

# two templates that differ by one phrase
question = parse_bracket("(ROOT (SQ (VBD ) (NP ) (VP ) (. )))")
print()
print("ted(declarative, question)      =", ted(template, question))
print("normalized                      =", round(normalized_ted(template, question), 3))
print("normalized with itself          =", normalized_ted(template, template))
