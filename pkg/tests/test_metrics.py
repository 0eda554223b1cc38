import json
import math
from collections import Counter

import numpy as np
import pytest

from oracles import bleu_reference
from syntempo import metrics as M
from syntempo.errors import DataError, EmptyCorpus, MissingEmbedding, TooFewParaphrases, ZeroVector
from syntempo.syntree import parse_bracket

VOCAB = [f"t{i}" for i in range(12)]


def random_sentence(rng, lo=3, hi=15):
    return [VOCAB[i] for i in rng.integers(0, len(VOCAB), int(rng.integers(lo, hi)))]


# ---------------------------------------------------------------------------
# BLEU


def test_bleu_against_reference_implementation():
    rng = np.random.default_rng(0)
    hyps = [random_sentence(rng) for _ in range(20)]
    refs = [random_sentence(rng) for _ in range(20)]
    assert M.bleu(hyps, refs) == pytest.approx(bleu_reference(hyps, refs), abs=1e-6)
    for h, r in zip(hyps, refs):
        assert M.bleu([h], [r]) == pytest.approx(bleu_reference([h], [r]), abs=1e-6)


def test_bleu_identity_and_disjoint():
    rng = np.random.default_rng(1)
    hyps = [random_sentence(rng, 4) for _ in range(7)]
    assert M.bleu(hyps, hyps) == pytest.approx(100.0, abs=1e-9)
    assert M.bleu([["a", "b", "c", "d"]], [["w", "x", "y", "z"]]) < 1.0


def test_bleu_known_values():
    # one bigram match out of 3, everything above smoothed: 4 unigrams, brevity 1
    hyp, ref = "the cat sat down".split(), "the cat ran off".split()
    expected = 100 * math.exp((math.log(2 / 4) + math.log(1 / 3) + math.log(1 / 3) + math.log(1 / 2)) / 4)
    assert M.bleu([hyp], [ref]) == pytest.approx(expected, abs=1e-12)
    # short hypothesis: brevity penalty exp(1 - 6/3)
    assert M.bleu([["a", "b", "c"]], [["a", "b", "c", "d", "e", "f"]]) == pytest.approx(
        100 * math.exp(1 - 2) * math.exp((math.log(1) + math.log(1) + math.log(1) + math.log(1 / 1)) / 4),
        abs=1e-9)


def test_bleu_errors_and_range():
    with pytest.raises(EmptyCorpus):
        M.bleu([], [])
    with pytest.raises(DataError):
        M.bleu([["a"]], [["a"], ["b"]])
    rng = np.random.default_rng(2)
    for _ in range(50):
        b = M.bleu([random_sentence(rng, 1)], [random_sentence(rng, 1)])
        assert 0.0 <= b <= 100.0


# ---------------------------------------------------------------------------
# iBLEU


@pytest.mark.parametrize("r, s, expected", [(22.080, 20.260, 13.612), (60.260, 22.430, 43.722),
                                            (36.710, 8.630, 27.642), (0.0, 0.0, 0.0)])
def test_ibleu_table_values(r, s, expected):
    assert round(M.ibleu(r, s, 0.8), 3) == expected


def test_ibleu_linearity():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r, s, r2, s2 = rng.uniform(0, 50, 4)
        assert M.ibleu(r, s) + M.ibleu(r2, s2) == pytest.approx(M.ibleu(r + r2, s + s2), abs=1e-12)


# ---------------------------------------------------------------------------
# M-BLEU and Rep-Rate


def m_bleu_loops(sets):
    scores = []
    n = len(sets[0].paraphrases)
    for i in range(n):
        for j in range(n):
            if i != j:
                scores.append(bleu_reference([s.paraphrases[i] for s in sets], [s.paraphrases[j] for s in sets]))
    return sum(scores) / len(scores)


def test_m_bleu_against_loops():
    rng = np.random.default_rng(4)
    sets = [M.ParaphraseSet(random_sentence(rng), [random_sentence(rng) for _ in range(3)]) for _ in range(5)]
    assert M.m_bleu(sets) == pytest.approx(m_bleu_loops(sets), abs=1e-6)


def test_m_bleu_extremes():
    p = "a b c d e".split()
    assert M.m_bleu(M.ParaphraseSet(p, [p] * 4)) == pytest.approx(100.0, abs=1e-9)
    disjoint = [[f"{c}{k}" for k in range(5)] for c in "xyz"]
    assert M.m_bleu(M.ParaphraseSet(p, disjoint)) < 1.0
    with pytest.raises(TooFewParaphrases):
        M.m_bleu(M.ParaphraseSet(p, [p]))


def test_rep_rate_counting():
    p = "a b c".split()
    assert M.rep_rate(M.ParaphraseSet(p, [p] * 10)) == pytest.approx(90.0, abs=1e-9)
    assert M.rep_rate(M.ParaphraseSet(p, [[str(i)] for i in range(10)])) == 0.0
    with pytest.raises(TooFewParaphrases):
        M.rep_rate(M.ParaphraseSet(p, [p]))


def test_rep_rate_recount_and_permutation():
    rng = np.random.default_rng(5)
    sets = []
    for _ in range(30):
        pool = [random_sentence(rng, 1, 3) for _ in range(3)]
        sets.append(M.ParaphraseSet(["x"], [pool[int(rng.integers(3))] for _ in range(int(rng.integers(2, 8)))]))
    dup = sum(sum(c - 1 for c in Counter(map(tuple, s.paraphrases)).values()) for s in sets)
    total = sum(len(s.paraphrases) for s in sets)
    assert M.rep_rate(sets) == pytest.approx(100.0 * dup / total, abs=1e-12)
    shuffled = [M.ParaphraseSet(s.source, [s.paraphrases[i] for i in rng.permutation(len(s.paraphrases))])
                for s in sets]
    assert M.rep_rate(shuffled) == M.rep_rate(sets)


# ---------------------------------------------------------------------------
# TED metric, cosine, report


def test_ted_metric_truncates_by_default():
    a = parse_bracket("(ROOT (S (NP (DT ) (NN )) (VP )))")
    b = parse_bracket("(ROOT (S (NP (PRP )) (VP )))")
    # relabel DT->PRP, delete NN; 6 nodes in the larger tree
    assert M.ted_metric(a, b) == pytest.approx(2 / 6)
    assert M.ted_metric(a, b, max_levels=3) == 0.0
    assert M.ted_metric(a, b, max_levels=3, full_depth=True) == pytest.approx(2 / 6)


def test_cosine():
    table = M.EmbeddingTable()
    rng = np.random.default_rng(6)
    u, v = rng.normal(size=8), rng.normal(size=8)
    table.add("u", u)
    table.add("v", v)
    table.add("e0", [1, 0, 0, 0, 0, 0, 0, 0])
    table.add("e1", [0, 1, 0, 0, 0, 0, 0, 0])
    table.add("zero", np.zeros(8))
    assert M.cosine("u", "u", table) == pytest.approx(1.0, abs=1e-12)
    assert M.cosine("e0", "e1", table) == 0.0
    assert M.cosine("u", "v", table) == pytest.approx(
        sum(a * b for a, b in zip(u, v)) / math.sqrt(sum(a * a for a in u) * sum(b * b for b in v)), abs=1e-12)
    with pytest.raises(MissingEmbedding):
        M.cosine("u", "nope", table)
    with pytest.raises(ZeroVector):
        M.cosine("u", "zero", table)
    with pytest.raises(DataError):
        table.add("short", [1.0])


def test_embedding_table_load(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text(json.dumps({"sentence": "a b", "vector": [1, 2]}) + "\n\n"
                    + json.dumps({"sentence": "c", "vector": [2, 4]}) + "\n")
    table = M.EmbeddingTable.load(path)
    assert M.cosine("a b", "c", table) == pytest.approx(1.0)
    path.write_text("{not json\n")
    with pytest.raises(DataError):
        M.EmbeddingTable.load(path)


def test_report_with_and_without_inputs(tmp_path):
    src = "the cat sat on the mat".split()
    sets = [M.ParaphraseSet(src, [src, "a cat sat".split()], reference="a cat sat on a mat".split(),
                            trees=[parse_bracket("(ROOT (S ))"), parse_bracket("(ROOT (NP ))")])]
    rep = M.report(sets)
    assert set(rep) == {"bleu_s", "bleu_r", "ibleu", "ted", "m_bleu", "rep_rate", "cos_s", "cos_r"}
    assert rep["bleu_s"] == pytest.approx(100.0)
    assert rep["ibleu"] == pytest.approx(0.8 * rep["bleu_r"] - 0.2 * rep["bleu_s"])
    assert rep["ted"] is None and rep["cos_s"] is None and rep["rep_rate"] == 0.0
    table = M.EmbeddingTable()
    for s, vec in [("the cat sat on the mat", [1, 0]), ("a cat sat on a mat", [1, 1])]:
        table.add(s, vec)
    rep = M.report(sets, templates=[parse_bracket("(ROOT (S ))")], embeddings=table)
    assert rep["ted"] == 0.0 and rep["cos_s"] == pytest.approx(1.0)
    assert rep["cos_r"] == pytest.approx(1 / math.sqrt(2))
    assert M.report([M.ParaphraseSet(src, [src])])["m_bleu"] is None
    with pytest.raises(EmptyCorpus):
        M.report([])


def test_load_paraphrase_sets(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"source": "a b", "paraphrases": ["b a", "a b"], "trees": ["(S )", "(NP )"]}) + "\n")
    refs = tmp_path / "refs.txt"
    refs.write_text("a c\n")
    sets = M.load_paraphrase_sets(path, refs)
    assert sets[0].paraphrases == [["b", "a"], ["a", "b"]] and sets[0].reference == ["a", "c"]
    assert sets[0].trees[1].label == "NP"
    with pytest.raises(DataError):
        M.ParaphraseSet(["a"], [])
    path.write_text(json.dumps({"source": "a", "paraphrases": ["b"], "trees": ["(S )", "(S )"]}) + "\n")
    with pytest.raises(DataError):
        M.load_paraphrase_sets(path)
