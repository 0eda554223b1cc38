import numpy as np
import pytest

from helpers import gradcheck_case
from oracles import gradient_check, random_tree, score_reference
from syntempo import library as L
from syntempo import model as qm
from syntempo.errors import DimMismatch, EmptyInput, FormatVersionMismatch, StaleCache, TraceMismatch
from syntempo.syntree import linearize, to_bracket


def small_model(seed=0, d=16, layers=1, heads=2, head_bias=True, words=20):
    sv = qm.Vocab([f"w{i}" for i in range(words)])
    tv = qm.Vocab(["(", ")", "ROOT", "S", "NP", "VP", "PP", "."])
    return qm.ModelParams.init(qm.Hyper(sv, tv, d_model=d, n_layers=layers, n_heads=heads, ffn_hidden=24,
                                        head_bias=head_bias), seed)


def jitter(params, seed=0, scale=0.2):
    rng = np.random.default_rng(seed)
    for name, arr in params.items():
        params[name] = arr + rng.normal(0, scale, arr.shape)
    return params


TEMPLATE = linearize(__import__("syntempo").parse_bracket("(ROOT (S (NP ) (VP (PP )) (. )))"))


def test_vocab():
    v = qm.Vocab.build([["b", "a"], ["a", "c"]])
    assert v.itos == ["<pad>", "<unk>", "a", "b", "c"]
    assert v.encode(["c", "zzz"]).tolist() == [4, 1]


def test_hyper_validation_and_json():
    with pytest.raises(ValueError):
        qm.Hyper(qm.Vocab(), qm.Vocab(), d_model=10, n_heads=4)
    h = small_model().hyper
    assert qm.Hyper.from_json(h.to_json()) == h


def test_parameter_count_deterministic():
    a, b = small_model(0), small_model(1)
    assert a.num_parameters() == b.num_parameters()
    assert [n for n, _ in a.items()] == [n for n, _ in qm.param_shapes(a.hyper)]
    assert "head.b" not in small_model(head_bias=False).tensors


def test_encoders_shapes_order_and_oov():
    p = jitter(small_model())
    h, e = qm.encode_sentence(p, ["w1"])
    assert h.shape == e.shape == (1, 16)
    _, e1 = qm.encode_sentence(p, ["w1", "w2", "w3"])
    _, e2 = qm.encode_sentence(p, ["w3", "w2", "w1"])
    assert not np.allclose(e1, e2[::-1])
    _, e = qm.encode_sentence(p, ["oov1", "oov2"])
    assert np.all(np.isfinite(e))

    _, t = qm.encode_template(p, ["(", "S", ")"])
    assert t.shape == (3, 16)
    _, t1 = qm.encode_template(p, TEMPLATE)
    _, t2 = qm.encode_template(p, list(reversed(TEMPLATE.tokens)))
    assert not np.allclose(t1, t2[::-1])
    _, t = qm.encode_template(p, ["(", "XX", "(", "YY", ")", ")"])
    assert np.all(np.isfinite(t))


def test_empty_inputs():
    p = small_model()
    with pytest.raises(EmptyInput):
        qm.encode_sentence(p, [])
    with pytest.raises(EmptyInput):
        qm.encode_template(p, [])


def test_inputs_truncated_to_max_length():
    p = jitter(small_model())
    long = [f"w{i % 20}" for i in range(100)]
    _, e = qm.encode_sentence(p, long)
    assert e.shape[0] == 64
    np.testing.assert_array_equal(e, qm.encode_sentence(p, long[:64])[1])


def test_correlation():
    np.testing.assert_array_equal(qm.correlation(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])), [[1.0]])
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    assert not qm.correlation(a, np.zeros((5, 4))).any()
    loop = np.array([[sum(a[i, k] * b[j, k] for k in range(4)) for j in range(5)] for i in range(3)])
    np.testing.assert_allclose(qm.correlation(a, b), loop, atol=1e-12, rtol=0)
    with pytest.raises(DimMismatch):
        qm.correlation(a, rng.normal(size=(5, 3)))


def test_pool():
    es, et = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]])
    vs, vt = qm.pool(es, et, np.array([[0.5]]))
    np.testing.assert_array_equal(vs, 0.5 * es[0])
    np.testing.assert_array_equal(vt, 0.5 * et[0])
    vs, vt = qm.pool(es, et, np.zeros((1, 1)))
    assert not vs.any() and not vt.any()

    rng = np.random.default_rng(1)
    es, et = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    C = es @ et.T
    vs_loop = [sum(max(C[i, j] for j in range(5)) * es[i, k] for i in range(3)) / 3 for k in range(4)]
    vt_loop = [sum(max(C[i, j] for i in range(3)) * et[j, k] for j in range(5)) / 5 for k in range(4)]
    vs, vt = qm.pool(es, et, C)
    np.testing.assert_allclose(vs, vs_loop, atol=1e-12, rtol=0)
    np.testing.assert_allclose(vt, vt_loop, atol=1e-12, rtol=0)


def test_pool_dominated_column():
    rng = np.random.default_rng(2)
    es, et = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))
    C = es @ et.T
    vs, vt = qm.pool(es, et, C)
    # a new constituent whose correlations are strictly below every row maximum
    extra = np.zeros((1, 4))
    C2 = np.hstack([C, C.min(1, keepdims=True) - 1.0])
    vs2, vt2 = qm.pool(es, np.vstack([et, extra]), C2)
    np.testing.assert_allclose(vs2, vs, atol=1e-15)
    np.testing.assert_allclose(vt2, vt * 4 / 5, atol=1e-15)


def test_zero_head_gives_half():
    p = jitter(small_model())
    p["head.w"] = np.zeros_like(p["head.w"])
    p["head.b"] = np.zeros_like(p["head.b"])
    s, _ = qm.score(p, ["w1", "w2"], TEMPLATE)
    assert s == 0.5


def test_score_matches_straight_line_reference():
    for seed in range(3):
        p = jitter(small_model(seed, layers=2, heads=4), seed, 0.3)
        rng = np.random.default_rng(seed)
        toks = [f"w{i}" for i in rng.integers(20, size=5)]
        tpl = linearize(random_tree(rng, 6, ("S", "NP", "VP", "PP")))
        s, trace = qm.score(p, toks, tpl)
        ref = score_reference(p, qm.sentence_ids(p, toks), qm.template_ids(p, tpl))
        assert abs(s - ref) < 1e-10
        assert 0.0 < s < 1.0
        pair = trace.pair(0)
        assert pair["C"].shape == (5, len(tpl))
        np.testing.assert_array_equal(pair["row_arg"], pair["C"].argmax(1))
        np.testing.assert_array_equal(pair["col_arg"], pair["C"].argmax(0))


def test_score_deterministic_and_batch_consistent():
    p = jitter(small_model(3))
    toks = ["w1", "w5", "w2"]
    tpls = [TEMPLATE, ["(", "S", ")"], ["(", "NP", "(", "VP", ")", ")"]]
    batch, _ = qm.score_batch(p, toks, tpls)
    singles = [qm.score(p, toks, t)[0] for t in tpls]
    np.testing.assert_allclose(batch, singles, atol=1e-12, rtol=0)
    assert qm.score(p, toks, TEMPLATE)[0] == qm.score(p, toks, TEMPLATE)[0]
    # padding a sentence inside a multi-sentence batch does not change its score
    s, _ = qm.score_pairs(p, [toks, ["w1"] * 9], tpls, [0, 1, 0])
    assert abs(s[0] - singles[0]) < 1e-12 and abs(s[2] - singles[2]) < 1e-12


def test_backward_zero_upstream_and_trace_checks():
    p = jitter(small_model())
    s, trace = qm.score(p, ["w1", "w2"], TEMPLATE)
    g = qm.backward(p, trace, [0.0])
    assert all(not v.any() for v in g.values())
    with pytest.raises(TraceMismatch):
        qm.backward(p, trace, [1.0, 2.0])
    p["head.w"] = p["head.w"] * 2
    with pytest.raises(TraceMismatch):
        qm.backward(p, trace, [1.0])
    with pytest.raises(TraceMismatch):
        qm.backward(small_model(), trace, [1.0])


def test_gradients_match_finite_differences():
    params, sents, templates, owner, upstream = gradcheck_case(123)
    _, trace = qm.score_pairs(params, sents, templates, owner)
    grads = qm.backward(params, trace, upstream)
    worst, where, checked = gradient_check(
        params, lambda: float(qm.score_pairs(params, sents, templates, owner)[0] @ upstream), grads)
    assert checked == params.num_parameters()
    assert worst < 1e-4, where
    # unused vocabulary rows (including padding) receive no gradient
    used = {int(i) for s in sents for i in qm.sentence_ids(params, s)}
    for row in range(len(params.hyper.sentence_vocab)):
        if row not in used:
            assert not grads["s.emb"][row].any()


def test_cache_matches_direct_scores():
    p = jitter(small_model(4))
    assert len(qm.encode_library(p, L.TemplateLibrary())) == 0
    rng = np.random.default_rng(0)
    lib = L.build_from_corpus(
        [to_bracket(random_tree(rng, int(rng.integers(1, 30)), ("ROOT", "S", "NP", "VP", "PP", ".")))
         for _ in range(150)]
    )
    lib = L.TemplateLibrary(lib.entries[:100])
    cache = qm.encode_library(p, lib)
    toks = ["w3", "w1", "w4", "w1"]
    direct = np.array([qm.score(p, toks, e.template)[0] for e in lib])
    cached = np.array([qm.score_with_cache(p, toks, cache, e.id) for e in lib])
    assert np.abs(direct - cached).max() <= 1e-9
    np.testing.assert_array_equal(qm.score_library(p, toks, cache, threads=1), qm.score_library(p, toks, cache, threads=3))
    # the template side does not depend on the sentence
    for e in list(lib)[:5]:
        np.testing.assert_allclose(cache.embeddings[e.id], qm.encode_template(p, e.template)[1], atol=1e-12)
    p["head.w"] = p["head.w"] + 1.0
    with pytest.raises(StaleCache):
        qm.score_with_cache(p, toks, cache, 0)


def test_cache_file_roundtrip(tmp_path):
    p = jitter(small_model(5))
    lib = L.build_from_corpus(["(ROOT (S ))", "(ROOT (NP (PP )))"])
    cache = qm.encode_library(p, lib)
    cache.save(tmp_path / "c.npz")
    back = qm.TemplateEncodingCache.load(tmp_path / "c.npz")
    assert back.params_hash == cache.params_hash
    for a, b in zip(back.embeddings, cache.embeddings):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    p = jitter(small_model(6, head_bias=False))
    path = tmp_path / "m.ckpt"
    qm.save_checkpoint(p, path)
    q = qm.load_checkpoint(path)
    assert q.hyper == p.hyper
    for name, arr in p.items():
        np.testing.assert_array_equal(q[name], arr)
    assert qm.score(q, ["w1", "w2"], TEMPLATE)[0] == qm.score(p, ["w1", "w2"], TEMPLATE)[0]
    assert q.content_hash() == p.content_hash()


def test_checkpoint_corruption(tmp_path):
    p = small_model(7)
    path = tmp_path / "m.ckpt"
    qm.save_checkpoint(p, path)
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(OSError):
        qm.load_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(OSError):
        qm.load_checkpoint(tmp_path / "long")
    (tmp_path / "flip").write_bytes(raw[:-1] + bytes([raw[-1] ^ 1]))
    with pytest.raises(OSError):
        qm.load_checkpoint(tmp_path / "flip")
    (tmp_path / "hdr").write_bytes(b"garbage\n" + raw)
    with pytest.raises(FormatVersionMismatch):
        qm.load_checkpoint(tmp_path / "hdr")
    (tmp_path / "ver").write_bytes(raw.replace(b'"version": 1', b'"version": 9', 1))
    with pytest.raises(FormatVersionMismatch):
        qm.load_checkpoint(tmp_path / "ver")
