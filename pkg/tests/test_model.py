import pytest
from hypothesis import given, settings, strategies as st

from pdmsloss.model import (
    EQ, NEQ, Atom, ComparisonError, Const, Disjunct, GavRule, Mapping, PeerNetwork, PeerSchema, Predicate,
    Query, RelationSchema, ValidationError, Var, canonicalize, normalize, query_equal, validate_network,
)

x, y, z, w = Var("x"), Var("y"), Var("z"), Var("w")


def sp(*args):
    return Atom("9DC", "SkilledPerson", args)


def test_constant_choice_and_predicate_forms_agree():
    inline = Query([Disjunct([x, Const("Doctor")], [sp(x, Const("Doctor"))])])
    with_pred = Query([Disjunct([x, y], [sp(x, y)], [Predicate(y, EQ, Const("Doctor"))])])
    assert canonicalize(inline) == canonicalize(with_pred)


def test_variable_names_do_not_matter():
    a = Query([Disjunct([x, y], [sp(x, y)], [Predicate(y, NEQ, Const("EMT"))])])
    b = Query([Disjunct([z, w], [sp(z, w)], [Predicate(w, NEQ, Const("EMT"))])])
    assert query_equal(a, b)


def test_duplicate_disjuncts_collapse():
    d = Disjunct([x], [sp(x, y)])
    assert len(canonicalize(Query([d, d])).disjuncts) == 1


def test_disjunct_order_is_irrelevant():
    d1 = Disjunct([x], [sp(x, Const("Doctor"))])
    d2 = Disjunct([x], [sp(x, Const("EMT"))])
    assert canonicalize(Query([d1, d2])) == canonicalize(Query([d2, d1]))


def test_equal_constants_merge_variables():
    d = Disjunct([x, y], [sp(x, y), sp(z, w)], [Predicate(y, EQ, Const("a")), Predicate(w, EQ, Const("a"))])
    c = canonicalize(Query([d])).disjuncts[0]
    eqs = [p for p in c.predicates if p.op == EQ]
    assert len(eqs) == 1


def test_contradictory_disjunct_is_dropped():
    ok = Disjunct([x], [sp(x, y)])
    bad = Disjunct([x], [sp(x, y)], [Predicate(y, EQ, Const("a")), Predicate(y, NEQ, Const("a"))])
    assert canonicalize(Query([ok, bad])) == canonicalize(Query([ok]))
    with pytest.raises(ValidationError):
        canonicalize(Query([bad]))


def test_normalize_inlines_equalities_and_orients_neq():
    d = Disjunct([x, y], [sp(x, y)], [Predicate(Const("a"), NEQ, x), Predicate(y, EQ, Const("b"))])
    n = normalize(d)
    assert n.head == (x, Const("b"))
    assert n.predicates == (Predicate(x, NEQ, Const("a")),)


def test_unsafe_head_rejected():
    with pytest.raises(ValidationError):
        normalize(Disjunct([z], [sp(x, y)]))


def test_query_arities_must_agree():
    with pytest.raises(ValidationError):
        Query([Disjunct([x], [sp(x, y)]), Disjunct([x, y], [sp(x, y)])])
    with pytest.raises(ComparisonError):
        query_equal(Query([Disjunct([x], [sp(x, y)])]), Query([Disjunct([x, y], [sp(x, y)])]))


def test_predicate_requires_a_variable_or_constant_pair():
    with pytest.raises(ValidationError):
        Predicate(x, "LT", y)


def _net(rules, relations=None):
    peers = [
        PeerSchema("A", relations or [RelationSchema("R", ["a", "b"])]),
        PeerSchema("B", [RelationSchema("S", ["c", "d"])]),
    ]
    return PeerNetwork(peers, [Mapping("A", "B", rules)])


def test_validate_accepts_sound_network():
    rule = GavRule(Atom("A", "R", [x, Const("k")]), [Atom("B", "S", [x, y])])
    assert validate_network(_net([rule])) == []


@pytest.mark.parametrize("rule, kind", [
    (GavRule(Atom("A", "R", [x, z]), [Atom("B", "S", [x, y])]), "unsafe rule"),
    (GavRule(Atom("A", "R", [x]), [Atom("B", "S", [x, y])]), "arity mismatch"),
    (GavRule(Atom("A", "Nope", [x, y]), [Atom("B", "S", [x, y])]), "unknown relation"),
    (GavRule(Atom("A", "R", [x, y]), [Atom("A", "R", [x, y])]), "same-peer rule"),
])
def test_validate_reports_each_problem(rule, kind):
    kinds = {d.kind for d in validate_network(_net([rule]))}
    assert kind in kinds


def test_validate_flags_duplicate_attributes():
    kinds = {d.kind for d in validate_network(_net([], [RelationSchema("R", ["a", "a"])]))}
    assert "duplicate attribute" in kinds


# canonicalization properties over generated single-relation disjuncts

names = st.sampled_from(["p", "q", "r", "s"])
consts = st.sampled_from(["a", "b", "Doctor"])
terms = st.one_of(names.map(Var), consts.map(Const))


@st.composite
def disjuncts(draw):
    n = draw(st.integers(1, 3))
    body = [Atom("P", draw(st.sampled_from(["R", "T"])), [draw(terms), draw(terms)]) for _ in range(n)]
    body_vars = sorted({v for a in body for v in a.variables()}, key=lambda v: v.name)
    if body_vars:
        head = [draw(st.sampled_from(body_vars)), draw(st.one_of(st.sampled_from(body_vars), consts.map(Const)))]
    else:
        head = [draw(consts.map(Const)), draw(consts.map(Const))]
    preds = []
    if body_vars and draw(st.booleans()):
        preds.append(Predicate(draw(st.sampled_from(body_vars)), draw(st.sampled_from([EQ, NEQ])), draw(consts.map(Const))))
    return Disjunct(head, body, preds)


@settings(max_examples=300, deadline=None)
@given(st.lists(disjuncts(), min_size=1, max_size=3))
def test_canonicalize_is_idempotent(ds):
    try:
        c = canonicalize(Query(ds))
    except ValidationError:
        return
    assert canonicalize(c) == c


@settings(max_examples=300, deadline=None)
@given(disjuncts(), st.permutations(["p", "q", "r", "s"]), st.randoms(use_true_random=False))
def test_canonical_form_ignores_renaming_and_atom_order(d, perm, rnd):
    ren = {Var(a): Var(b + "2") for a, b in zip(["p", "q", "r", "s"], perm)}

    def rt(t):
        return ren.get(t, t)

    body = [Atom(a.peer, a.relation, [rt(t) for t in a.args]) for a in d.body]
    rnd.shuffle(body)
    other = Disjunct([rt(t) for t in d.head], body, [Predicate(rt(p.left), p.op, rt(p.right)) for p in d.predicates])
    try:
        c1 = canonicalize(Query([d]))
    except ValidationError:
        with pytest.raises(ValidationError):
            canonicalize(Query([other]))
        return
    assert c1 == canonicalize(Query([other]))
