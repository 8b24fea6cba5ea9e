import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from polargraph.errors import CorruptFile, DuplicateEpisode
from polargraph.graph import EdgeKind, NodeId, NodeKind, PolarGraph
from polargraph.partition import Partition


def P(pos=(), neg=(), unc=()):
    return Partition.from_sets(pos, neg, unc)


def test_visual_episode_edges():
    g = PolarGraph()
    v = g.add_visual_episode("img/1.png", P({"dog"}, {"wolf"}, {"husky"}))
    assert len(g.visual) == 1 and g.concepts == {"dog", "wolf", "husky"}
    assert g.edge_count(EdgeKind.HAS) == 1 and g.edge_count(EdgeKind.NOT_HAS) == 1
    assert g.concept_neighborhood("husky").has_sources == frozenset()
    assert g.concept_neighborhood("husky").not_has_sources == frozenset()
    assert g.visual[v.key].uncertain_concepts == {"husky"}


def test_uncertain_only_node_is_uncovered():
    g = PolarGraph()
    g.add_visual_episode("a", P(unc={"x"}))
    assert g.edge_count() == 0
    assert g.compute_stats().verifiable_coverage == 0.0


def test_duplicate_episode():
    g = PolarGraph()
    g.add_visual_episode("a", P({"dog"}))
    with pytest.raises(DuplicateEpisode):
        g.add_visual_episode("a", P({"cat"}))


def test_overlapping_partition_rejected():
    g = PolarGraph()
    with pytest.raises(ValueError):
        g.add_visual_episode("a", P({"Dog"}, {"dog"}))


def test_align_only_to_logical_concepts():
    g = PolarGraph()
    g.add_visual_episode("a", P({"dog"}, unc={"unicorn"}))
    t = g.add_text_chunk("about dogs", {"dog", "unicorn"})
    assert g.linked(t, EdgeKind.ALIGN) == {"dog"}
    assert g.textual[t.key].entities == {"dog", "unicorn"}


def test_align_to_not_has_concepts():
    g = PolarGraph()
    g.add_visual_episode("a", P(neg={"wolf"}))
    t = g.add_text_chunk("wolves", {"wolf"})
    assert g.linked(t, EdgeKind.ALIGN) == {"wolf"}


def test_no_entities_no_edges():
    g = PolarGraph()
    t = g.add_text_chunk("plain", set())
    assert g.linked(t, EdgeKind.ALIGN) == frozenset() and g.edge_count() == 0


def test_two_chunks_two_align_edges():
    g = PolarGraph()
    g.add_visual_episode("a", P({"dog"}))
    t1 = g.add_text_chunk("one", {"dog"})
    t2 = g.add_text_chunk("two", {"dog"})
    assert t1 != t2
    assert g.concept_neighborhood("dog").align_sources == {t1, t2}


def test_empty_chunk_rejected():
    with pytest.raises(ValueError):
        PolarGraph().add_text_chunk("  ", {"dog"})


def test_lazy_alignment_and_relink():
    g = PolarGraph()
    t = g.add_text_chunk("early", {"dog"})
    g.add_visual_episode("a", P({"dog"}))
    assert g.linked(t, EdgeKind.ALIGN) == frozenset()
    assert g.relink_text() == 1
    assert g.linked(t, EdgeKind.ALIGN) == {"dog"}
    assert g.relink_text() == 0


def test_neighborhoods():
    g = PolarGraph()
    v = g.add_visual_episode("a", P({"dog"}, {"cat"}))
    assert g.concept_neighborhood("unknown").has_sources == frozenset()
    assert g.concept_neighborhood("unknown").align_sources == frozenset()
    assert g.concept_neighborhood("dog").has_sources == {v}
    assert g.concept_neighborhood("cat").not_has_sources == {v}


def test_conflicting_episodes_coexist():
    g = PolarGraph()
    a = g.add_visual_episode("a", P({"dog"}))
    b = g.add_visual_episode("b", P(neg={"dog"}))
    n = g.concept_neighborhood("dog")
    assert n.has_sources == {a} and n.not_has_sources == {b}


def test_stats_hand_built():
    # 5 memory nodes: 3 visual (2 covered) + 2 text
    g = PolarGraph()
    g.add_visual_episode("a", P({"dog", "cat"}, {"wolf"}))
    g.add_visual_episode("b", P(neg={"cat", "dog", "owl"}))
    g.add_visual_episode("c", P(unc={"x"}))
    g.add_text_chunk("t1", {"dog"})
    g.add_text_chunk("t2", {"x"})
    s = g.compute_stats()
    assert s.verifiable_coverage == pytest.approx(2 / 3)
    assert (s.max_has_per_image, s.max_not_has_per_image, s.total_not_has) == (2, 3, 4)
    assert (s.total_has, s.total_align, s.visual_nodes, s.textual_nodes) == (2, 1, 3, 2)


def test_max_has_141():
    g = PolarGraph()
    g.add_visual_episode("big", P({f"c{i}" for i in range(141)}))
    assert g.compute_stats().max_has_per_image == 141


def test_empty_stats():
    s = PolarGraph().compute_stats()
    assert s.verifiable_coverage == 0.0 and s.max_has_per_image == 0


def test_coverage_never_decreases():
    g = PolarGraph()
    prev = 0.0
    r = random.Random(0)
    for i in range(30):
        g.add_visual_episode(f"u{i}", P(unc={"x"}) if r.random() < 0.5 else P({"y"}))
        cur = g.compute_stats().verifiable_coverage
        assert 0 <= cur <= 1
    for i in range(5):
        g.add_visual_episode(f"w{i}", P({"z"}))
        cur = g.compute_stats().verifiable_coverage
        assert cur >= prev
        prev = cur


def test_invariants_on_random_graphs():
    for seed in range(20):
        g, _, _ = random_graph(seed)
        pairs = {}
        for e in g.edges():
            assert e.dst.kind is NodeKind.CONCEPT
            want = NodeKind.TEXTUAL if e.kind is EdgeKind.ALIGN else NodeKind.VISUAL
            assert e.src.kind is want
            if e.kind is not EdgeKind.ALIGN:
                assert (e.src, e.dst) not in pairs
                pairs[(e.src, e.dst)] = e.kind


def test_empty_round_trip(tmp_path):
    p = tmp_path / "g.jsonl"
    PolarGraph().save(p)
    assert PolarGraph.load(p).canonical() == PolarGraph().canonical()


def test_random_round_trip(tmp_path):
    # 100-node / ~500-edge graph
    g, _, _ = random_graph(11, n_visual=60, n_text=20, vocab_size=20)
    assert len(g.visual) + len(g.textual) + len(g.concepts) == 100
    assert g.edge_count() >= 400
    p = tmp_path / "g.jsonl"
    g.save(p)
    h = PolarGraph.load(p)
    assert h.canonical() == g.canonical()
    for key, node in g.visual.items():
        assert h.visual[key] == node
    for key, node in g.textual.items():
        assert h.textual[key] == node


def test_ingestion_determinism():
    def build():
        g = PolarGraph()
        for i in (3, 1, 2):
            g.add_visual_episode(f"u{i}", P({f"c{i}", "shared"}, {f"n{i}"}))
        g.add_text_chunk("t", {"shared"})
        return g.dumps()

    assert build() == build()


def test_header_shape():
    first = PolarGraph().dumps().splitlines()[0]
    assert first == '{"edges":0,"nodes":0,"t":"header","v":1}'


def test_truncated_file(tmp_path):
    g, _, _ = random_graph(2)
    data = g.dumps()
    with pytest.raises(CorruptFile):
        PolarGraph.loads(data[: len(data) // 2])
    # cut exactly at a record boundary: only the header counts notice
    lines = data.splitlines(keepends=True)
    with pytest.raises(CorruptFile, match="truncated"):
        PolarGraph.loads("".join(lines[:-3]))


@pytest.mark.parametrize("mutate, line", [
    (lambda ls: ls.__setitem__(2, "{not json"), 3),
    (lambda ls: ls.__setitem__(0, '{"t":"header","v":99}'), 1),
    (lambda ls: ls.__setitem__(1, '{"t":"mystery"}'), 2),
])
def test_corrupt_records_report_line(mutate, line):
    g, _, _ = random_graph(3)
    lines = g.dumps().splitlines()
    mutate(lines)
    with pytest.raises(CorruptFile) as info:
        PolarGraph.loads("\n".join(lines) + "\n")
    assert info.value.line == line


def _edit_edge(data: str, fn) -> str:
    import json
    out = []
    done = False
    for line in data.splitlines():
        rec = json.loads(line)
        if not done and rec.get("t") == "edge" and rec["edge_kind"] == "HAS":
            fn(rec)
            done = True
        out.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return "\n".join(out) + "\n"


def test_edge_domain_violation_detected():
    g, _, _ = random_graph(4)
    bad = _edit_edge(g.dumps(), lambda r: r.update(edge_kind="ALIGN"))
    with pytest.raises(CorruptFile):
        PolarGraph.loads(bad)


def test_orthogonality_violation_detected():
    g = PolarGraph()
    g.add_visual_episode("a", P({"dog"}, {"cat"}))
    bad = _edit_edge(g.dumps(), lambda r: r.update(dst_key="cat"))
    with pytest.raises(CorruptFile):
        PolarGraph.loads(bad)


def test_duplicate_node_detected():
    g = PolarGraph()
    g.add_visual_episode("a", P({"dog"}))
    lines = g.dumps().splitlines()
    lines.insert(2, lines[2])
    lines[0] = lines[0].replace('"nodes":2', '"nodes":3')
    with pytest.raises(CorruptFile):
        PolarGraph.loads("\n".join(lines) + "\n")


def test_non_utf8(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_bytes(b"\xff\xfe\n")
    with pytest.raises(CorruptFile):
        PolarGraph.load(p)


def test_node_id_parse():
    n = NodeId(NodeKind.VISUAL, "ep:1")
    assert NodeId.parse(str(n)) == n


def test_readers_never_see_half_episode():
    g = PolarGraph()
    stop = threading.Event()
    bad = []

    def reader():
        while not stop.is_set():
            for key in list(g.visual):
                node = g.visual[key]
                if g.linked(node.id, EdgeKind.HAS) != node.positive_concepts:
                    with g._lock:  # recheck under the writer lock to rule out a torn read
                        if g.linked(node.id, EdgeKind.HAS) != node.positive_concepts:
                            bad.append(key)

    t = threading.Thread(target=reader)
    t.start()
    for i in range(300):
        g.add_visual_episode(f"u{i}", P({f"c{j}" for j in range(i % 7 + 1)}))
    stop.set()
    t.join()
    assert not bad


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sets(st.sampled_from("abcdef")), st.sets(st.sampled_from("ghij"))), max_size=8))
def test_round_trip_property(episodes):
    g = PolarGraph()
    for i, (pos, neg) in enumerate(episodes):
        g.add_visual_episode(f"u{i}", P(pos, neg))
    assert PolarGraph.loads(g.dumps()).dumps() == g.dumps()
