import json
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wadcmsn.errors import ParseError, ValidationError
from wadcmsn.semantics import (SemanticTable, Taxonomy, TaxonomyNode, TextEmbeddingTable,
                               build_class_embedding, build_semantic_table, fit_combiner,
                               identity_autoencoder, jiang_conrath_distance,
                               jiang_conrath_similarity, path_similarity)


@pytest.fixture
def five():
    #        root(0)
    #       /      \
    #    A(2)      B(0)
    #             /    \
    #          b1(3)  b2(5)
    return Taxonomy([
        TaxonomyNode("r", "root", None, 0),
        TaxonomyNode("a", "A", "r", 2),
        TaxonomyNode("b", "B", "r", 0),
        TaxonomyNode("b1", "b1", "b", 3),
        TaxonomyNode("b2", "b2", "b", 5),
    ])


def random_taxonomy(seed, n):
    rng = np.random.default_rng(seed)
    nodes = [TaxonomyNode("n0", "c0", None, int(rng.integers(0, 3)))]
    for i in range(1, n):
        nodes.append(TaxonomyNode(f"n{i}", f"c{i}", f"n{rng.integers(0, i)}",
                                  int(rng.integers(1, 4))))
    return Taxonomy(nodes)


def test_path_similarity_examples(five):
    assert path_similarity(five, "b1", "b1") == 1.0
    assert path_similarity(five, "b1", "b2") == pytest.approx(1 / 3)
    assert path_similarity(five, "A", "b1") == pytest.approx(1 / 4)
    with pytest.raises(KeyError):
        path_similarity(five, "A", "zebra")


def test_jiang_conrath_hand_evaluation(five):
    ic = lambda c: -math.log(c / 10)
    d = ic(3) + ic(5) - 2 * ic(8)
    assert jiang_conrath_distance(five, "b1", "b2") == pytest.approx(d, abs=1e-15)
    assert jiang_conrath_similarity(five, "b1", "b2") == pytest.approx(1 / (1 + d), abs=1e-15)
    # lcs is the root, whose IC is zero
    assert jiang_conrath_distance(five, "A", "b1") == pytest.approx(ic(2) + ic(3), abs=1e-15)
    assert jiang_conrath_similarity(five, "b2", "b2") == 1.0


def test_jiang_conrath_zero_count():
    tax = Taxonomy([TaxonomyNode("r", "root", None, 1), TaxonomyNode("x", "x", "r", 0),
                    TaxonomyNode("y", "y", "r", 1)])
    with pytest.raises(ValidationError):
        jiang_conrath_similarity(tax, "x", "y")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 15))
def test_path_similarity_matches_bfs(seed, n):
    tax = random_taxonomy(seed, n)
    g = nx.Graph()
    g.add_edges_from((nid, node.parent) for nid, node in tax.nodes.items() if node.parent)
    g.add_nodes_from(tax.nodes)
    hops = dict(nx.all_pairs_shortest_path_length(g))
    for a in tax.nodes.values():
        for b in tax.nodes.values():
            assert path_similarity(tax, a.name, b.name) == 1.0 / (1 + hops[a.id][b.id])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 12))
def test_similarities_symmetric_bounded_and_maximal_at_self(seed, n):
    tax = random_taxonomy(seed, n)
    names = [node.name for node in tax.nodes.values()]
    for sim in (path_similarity, jiang_conrath_similarity):
        for a in names:
            assert sim(tax, a, a) == 1.0
            for b in names:
                v = sim(tax, a, b)
                assert v == sim(tax, b, a)
                assert 0 < v <= 1


def test_taxonomy_validation():
    with pytest.raises(ValidationError):
        Taxonomy([TaxonomyNode("a", "a", None), TaxonomyNode("b", "b", None)])
    with pytest.raises(ValidationError):
        Taxonomy([TaxonomyNode("r", "r", None), TaxonomyNode("a", "a", "b"),
                  TaxonomyNode("b", "b", "a")])
    with pytest.raises(ValidationError):
        Taxonomy([TaxonomyNode("r", "r", None), TaxonomyNode("a", "a", "zz")])
    tax = Taxonomy([TaxonomyNode("r", "r", None), TaxonomyNode("a", "dup", "r"),
                    TaxonomyNode("b", "dup", "r")])
    with pytest.raises(KeyError, match="ambiguous"):
        tax.resolve("dup")


def test_taxonomy_json_round_trip(tmp_path, five):
    path = tmp_path / "tax.json"
    five.save(path)
    again = Taxonomy.load(path)
    assert again.to_records() == five.to_records()
    (tmp_path / "bad.json").write_text('[{"id": "r", "name": "r"}]')
    with pytest.raises(ParseError):
        Taxonomy.load(tmp_path / "bad.json")
    (tmp_path / "broken.json").write_text('{"nodes": [')
    with pytest.raises(ParseError):
        Taxonomy.load(tmp_path / "broken.json")


def test_text_table_round_trip_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    table = TextEmbeddingTable({"cat": rng.normal(size=300), "dog": rng.normal(size=300)})
    table.save(tmp_path / "w.txt")
    again = TextEmbeddingTable.load(tmp_path / "w.txt")
    assert again.dim == 300
    for k in table:
        np.testing.assert_array_equal(again[k], table[k])
    (tmp_path / "bad.txt").write_text("cat 1 2 3\ndog 1 2\n")
    with pytest.raises(ParseError, match="line 2"):
        TextEmbeddingTable.load(tmp_path / "bad.txt")
    (tmp_path / "nan.txt").write_text("cat 1 x 3\n")
    with pytest.raises(ParseError, match="line 1"):
        TextEmbeddingTable.load(tmp_path / "nan.txt")


@pytest.fixture
def text_for_five():
    rng = np.random.default_rng(5)
    return TextEmbeddingTable({n: rng.normal(size=300) for n in ("A", "B", "b1", "b2", "root")})


def test_class_embedding_layout(five, text_for_five):
    seen = ["A", "b1", "b2"]
    for measure in ("path", "jc"):
        e = build_class_embedding("b1", text_for_five, five, measure, seen)
        assert e.shape == (303,)
        np.testing.assert_array_equal(e[:300], text_for_five["b1"])
        assert e[300 + seen.index("b1")] == 1.0
    seen10 = ["A", "b1", "b2", "B", "root"] * 2
    assert build_class_embedding("A", text_for_five, five, "path", seen10).shape == (310,)
    with pytest.raises(KeyError):
        build_class_embedding("zebra", text_for_five, five, "path", seen)


@pytest.mark.parametrize("measure", ["path", "jc"])
def test_siblings_have_closer_hierarchical_parts(five, text_for_five, measure):
    seen = ["A", "b1", "b2"]
    h = {c: build_class_embedding(c, text_for_five, five, measure, seen)[300:]
         for c in ("A", "b1", "b2")}
    assert np.linalg.norm(h["b1"] - h["b2"]) < np.linalg.norm(h["A"] - h["b1"])


def test_class_embedding_deterministic(five, text_for_five):
    a = build_class_embedding("b2", text_for_five, five, "jc", ["A", "b1"])
    b = build_class_embedding("b2", text_for_five, five, "jc", ["A", "b1"])
    np.testing.assert_array_equal(a, b)


def test_combiner_identity_capacity():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(6, 5))
    enc, dec = identity_autoencoder(5)
    # perturb away from identity so there is something to learn back
    enc.layers[0].weight += rng.normal(scale=0.3, size=(5, 5))
    comb = fit_combiner(emb, code_dim=5, steps=1500, learning_rate=1e-2,
                        encoder=enc, decoder=dec)
    h = np.array(comb.history)
    assert h[-1] < 1e-2 * h[0]
    # trend: the opening window dominates every later window
    windows = h[:1500].reshape(15, 100).mean(axis=1)
    assert np.all(windows[1:] < windows[0])


def test_combiner_reduces_loss_and_separates_classes():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(10, 40))
    comb = fit_combiner(emb, code_dim=8, steps=500, seed=3)
    assert comb.history[-1] < comb.history[0]
    codes = comb.encode(emb)
    d = np.linalg.norm(codes[:, None] - codes[None], axis=2)
    assert d[~np.eye(10, dtype=bool)].min() > 0


def test_combiner_validation():
    with pytest.raises(ValidationError):
        fit_combiner(np.ones((4, 3)), code_dim=2)
    with pytest.raises(ValidationError):
        fit_combiner(np.ones((1, 3)), code_dim=2)


def test_combiner_deterministic():
    emb = np.random.default_rng(2).normal(size=(5, 12))
    a = fit_combiner(emb, 4, steps=50, seed=7)
    b = fit_combiner(emb, 4, steps=50, seed=7)
    np.testing.assert_array_equal(a.encode(emb), b.encode(emb))


def test_semantic_table_zero_shot_and_round_trip(tmp_path, five, text_for_five):
    table, comb = build_semantic_table(["A", "b1", "b2"], ["A", "b1"], text_for_five, five,
                                       "jc", code_dim=4, steps=100, seed=0)
    assert table.code_dim == 4
    assert table.provenance["measure"] == "jc"
    assert table.provenance["seen_classes"] == ["A", "b1"]
    # unseen b2 is encoded by the fitted encoder only
    emb = build_class_embedding("b2", text_for_five, five, "jc", ["A", "b1"])
    np.testing.assert_array_equal(comb.encode(emb)[0], table.codes["b2"])
    table.save(tmp_path / "sem.json")
    again = SemanticTable.load(tmp_path / "sem.json")
    for k in table.codes:
        np.testing.assert_array_equal(again.codes[k], table.codes[k])
    assert json.loads((tmp_path / "sem.json").read_text())["code_dim"] == 4


def test_semantic_table_reports_uncovered(five, text_for_five):
    with pytest.raises(ValidationError, match="zebra"):
        build_semantic_table(["A", "zebra"], ["A", "b1"], text_for_five, five, "path")
