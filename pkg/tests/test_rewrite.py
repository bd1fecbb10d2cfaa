import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from pdmsloss.fixtures import load_fixture
from pdmsloss.model import (
    NEQ, Atom, Const, Disjunct, GavRule, Mapping, PdmsError, PeerNetwork, PeerSchema, Predicate, Query,
    RelationSchema, Var, canonicalize,
)
from pdmsloss.parser import parse_query_sql
from pdmsloss.rewrite import UntranslatableError, contains, roundtrip, translate_back, unfold_forward

from gen_scenarios import check_edge_scenario


@pytest.fixture(scope="module")
def sc():
    return load_fixture()


def sql(sc, peer, text):
    return parse_query_sql(text, sc.network.peer(peer))


def test_forward_one_hop(sc):
    q = sc.query("Q1").query
    fwd = unfold_forward(q, sc.network.mapping("9DC", "H"), "H")
    expected = sql(sc, "H", 'SELECT SID, "Doctor" FROM Doctor UNION SELECT SID, "EMT" FROM EMT')
    assert fwd == canonicalize(expected)


def test_forward_two_hops_joins_lakeview_relations(sc):
    net = sc.network
    q1 = unfold_forward(sc.query("Q1").query, net.mapping("9DC", "H"), "H")
    q2 = unfold_forward(q1, net.mapping("H", "LH"), "LH")
    expected = sql(sc, "LH", """
        Select SID, class From Staff, Schedule Where Staff.SID = Schedule.SID and class = "Doctor"
        Union
        Select SID, class From Staff, Schedule, InAmbulance
        Where Staff.SID = Schedule.SID and Staff.SID = InAmbulance.SID and class = "EMT"
    """)
    assert q2 == canonicalize(expected)


def test_back_translation_restricts_skill(sc):
    rt = roundtrip(sc.query("Q1").query, sc.network.mapping("9DC", "H"))
    expected = sql(sc, "9DC", 'Select PID, skill From SkilledPerson Where skill = "Doctor" '
                              'Union Select PID, skill From SkilledPerson Where skill = "EMT"')
    assert rt.back == canonicalize(expected)
    assert rt.dropped == ()
    assert (rt.source, rt.target) == ("9DC", "H")


def test_back_translation_drops_unmatched_hospital_constant(sc):
    # Doctor(SID, "LH", "Portland", s, e) comes back with hospital/location free
    q = sql(sc, "H", "SELECT SID, start FROM Doctor")
    rt = roundtrip(q, sc.network.mapping("H", "LH"))
    assert rt.back == canonicalize(q)


def test_unreachable_disjunct_is_dropped_with_reason(sc):
    q = sql(sc, "H", 'SELECT SID FROM Doctor UNION SELECT SID FROM EMT')
    fwd = unfold_forward(q, sc.network.mapping("H", "FH"), "FH")
    assert len(fwd.disjuncts) == 1
    back, dropped = translate_back(fwd, sc.network.mapping("H", "FH"), "H")
    assert len(back.disjuncts) == 1 and dropped == ()


def test_untranslatable_names_blocking_atoms(sc):
    q = sql(sc, "H", "SELECT SID FROM EMT")
    with pytest.raises(UntranslatableError) as err:
        unfold_forward(q, sc.network.mapping("H", "FH"), "FH")
    assert any(a.relation == "EMT" for a in err.value.blocking)


def test_roundtrip_needs_single_peer_query(sc):
    mixed = Query([Disjunct([Var("x")], [Atom("9DC", "SkilledPerson", [Var("x"), Var("y")]),
                                         Atom("H", "Doctor", [Var("x"), Var("a"), Var("b"), Var("c"), Var("d")])])])
    with pytest.raises(PdmsError, match="spans peers"):
        roundtrip(mixed, sc.network.mapping("9DC", "H"))


def test_mapping_must_connect_the_peers(sc):
    with pytest.raises(PdmsError):
        unfold_forward(sc.query("Q1").query, sc.network.mapping("H", "LH"), "LH")


def test_containment_by_homomorphism():
    x, y, z = Var("x"), Var("y"), Var("z")
    general = Disjunct([x], [Atom("P", "R", [x, y])])
    specific = Disjunct([x], [Atom("P", "R", [x, Const("a")]), Atom("P", "S", [x])])
    assert contains(general, specific)
    assert not contains(specific, general)
    assert not contains(Disjunct([x], [Atom("P", "R", [x, z]), Atom("P", "R", [z, x])]), general)


def test_inverse_rules_with_predicates_must_be_entailed():
    x, y = Var("x"), Var("y")
    net = PeerNetwork(
        [PeerSchema("A", [RelationSchema("R", ["k", "v"])]), PeerSchema("B", [RelationSchema("S", ["k", "v"])])],
        [Mapping("A", "B", [GavRule(Atom("A", "R", [x, y]), [Atom("B", "S", [x, y])],
                                    [Predicate(y, NEQ, Const("z"))])])])
    q = Query([Disjunct([x, y], [Atom("A", "R", [x, y])])])
    rt = roundtrip(q, net.mapping("A", "B"))
    # S rows with v = "z" never reach R, and the way back keeps that restriction
    assert rt.back == canonicalize(q)


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2 ** 32 - 1))
def test_rewriting_is_exact_forward_and_sound_backward(seed):
    assert check_edge_scenario(seed)
