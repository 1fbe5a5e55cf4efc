import pytest

from gesa.corpus import DataError, Mention, build_vocab
from gesa.graph import EdgeType, build_graph, export_graph, segment_sentences
from gesa.sequence import EntityKind, EntityToken, build_sequence


def _graph(inst):
    seq = build_sequence(inst, build_vocab([inst]), 128, 16)
    return build_graph(seq.entity_tokens, inst.mentions)


def test_labour_edges(labour):
    g = _graph(labour)
    # nodes: 0 plc, 1 Labour@s0, 2 Ed Balls, 3 Labour@s1, 4 VAT
    sent = {(a, b) for a, b, t in g.edges if t == EdgeType.SENT_BASED}
    match = {(a, b) for a, b, t in g.edges if t == EdgeType.MATCH}
    plc = {(a, b) for a, b, t in g.edges if t == EdgeType.PLC}
    assert sent == {(2, 3), (2, 4), (3, 4)}
    assert match == {(1, 3)}
    assert plc == {(0, j) for j in range(1, 5)}
    assert g.degree(0, EdgeType.PLC) == 4


def test_single_candidate_has_only_plc_edge(rex):
    assert _graph(rex).sorted_edges() == [(0, 1, EdgeType.PLC)]


def test_same_string_same_sentence_is_sent_not_match():
    ents = [EntityToken(EntityKind.PLC_ENTITY), EntityToken(EntityKind.CANDIDATE, 0, (0, 1)),
            EntityToken(EntityKind.CANDIDATE, 1, (2, 3))]
    ms = [Mention("Rex", 0, 0, 1), Mention("Rex", 0, 2, 3)]
    g = build_graph(ents, ms)
    assert g.edge_type(1, 2) == EdgeType.SENT_BASED
    assert g.edge_type(2, 1) == EdgeType.SENT_BASED


def test_match_uses_normalized_surface():
    ents = [EntityToken(EntityKind.PLC_ENTITY), EntityToken(EntityKind.CANDIDATE, 0, (0, 1)),
            EntityToken(EntityKind.CANDIDATE, 1, (2, 3))]
    g = build_graph(ents, [Mention("Labour.", 0, 0, 1), Mention("labour", 1, 0, 1)])
    assert g.edge_type(1, 2) == EdgeType.MATCH


def test_dangling_reference():
    ents = [EntityToken(EntityKind.PLC_ENTITY), EntityToken(EntityKind.CANDIDATE, 5, (0, 1))]
    with pytest.raises(DataError, match="dangling"):
        build_graph(ents, [Mention("a", 0, 0, 1)])


@pytest.mark.parametrize("tokens,expected", [
    (["a", "b", ".", "c"], [["a", "b", "."], ["c"]]),
    ([], []),
    (["a", "b"], [["a", "b"]]),
    (["hi!", "ok?", "yes."], [["hi!"], ["ok?"], ["yes."]]),
])
def test_segment_sentences(tokens, expected):
    assert segment_sentences(tokens) == expected


def test_export_graph(tmp_path, labour):
    p = tmp_path / "g.txt"
    export_graph(_graph(labour), p, header="seed=0")
    lines = p.read_text().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1:3] == ["0 1 PLC", "0 2 PLC"]
    assert "1 3 MATCH" in lines and "2 3 SENT_BASED" in lines
