"""Semantic-loss detection and repair across one mapping edge.

The loss of ``Q`` posed at ``P1`` and answered at ``P2`` is read off the
round trip ``Q -> Q' -> Q''``: every disjunct of ``Q''`` is paired with the
disjunct of ``Q`` that has the same atoms, and whatever predicates ``Q''``
adds are the restriction the reformulation introduced.  When that restriction
is a set of constant choices on one output column, a virtual complement
relation over ``P2`` restores the missing tuples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .model import (
    EQ, NEQ, Atom, Const, Disjunct, GavRule, Mapping, PdmsError, PeerNetwork, PeerSchema,
    Predicate, Query, RelationSchema, Var, canonical_disjunct, rename_pred, canonicalize, pred_key,
    subst_atom, subst_pred, validate_network, ComparisonError,
)
from .parser import normalize_rule, render_rule
from .rewrite import roundtrip


class AmbiguityError(PdmsError):
    pass


class CannotSynthesize(PdmsError):
    def __init__(self, message: str, report: "LossReport"):
        super().__init__(message)
        self.report = report


class RecoveryError(PdmsError):
    pass


@dataclass(frozen=True)
class Discriminator:
    disjunct: int
    position: int
    variable: str
    excluded: tuple

    def to_dict(self) -> dict:
        return {"position": self.position, "variable": self.variable, "excluded": list(self.excluded)}


@dataclass(frozen=True)
class LossReport:
    query: Query
    back: Query
    matches: tuple  # ((q_index, ((back_index, extra predicates), ...)), ...)
    lost_disjuncts: tuple
    dropped: tuple
    discriminator: Optional[Discriminator]
    empty: bool
    # per disjunct of ``query``: (canonical variable, name in the caller's query) pairs for display
    names: tuple = field(default=(), compare=False)

    def display(self, i: int, p: Predicate) -> str:
        renaming = dict(self.names[i]) if i < len(self.names) else {}
        return str(rename_pred(p, renaming))

    def to_dict(self) -> dict:
        return {
            "matches": [
                {"disjunct": i, "matches": [{"disjunct": j, "extra": [self.display(i, p) for p in extra]}
                                            for j, extra in group]}
                for i, group in self.matches
            ],
            "lostDisjuncts": list(self.lost_disjuncts),
            "dropped": [{"disjunct": _disjunct_text(d.disjunct), "reason": d.reason} for d in self.dropped],
            "discriminator": self.discriminator.to_dict() if self.discriminator else None,
            "empty": self.empty,
        }


def _disjunct_text(d: Disjunct) -> str:
    head = ", ".join(map(str, d.head))
    body = [str(a) for a in d.body] + [str(p) for p in d.predicates]
    return f"({head}) :- {', '.join(body)}"


@dataclass(frozen=True)
class ComplementSpec:
    relation: RelationSchema
    host_peer: str
    source_peer: str
    source_relation: RelationSchema
    definition_rule: GavRule
    contribution_rule: GavRule

    @property
    def excluded(self) -> tuple:
        return tuple(p.right.value for p in self.definition_rule.predicates
                     if p.op == NEQ and isinstance(p.right, Const))

    def to_dict(self) -> dict:
        return {
            "relation": f"{self.relation.name}({', '.join(self.relation.attributes)})",
            "hostPeer": self.host_peer,
            "definitionRule": render_rule(self.definition_rule),
            "contributionRule": render_rule(self.contribution_rule),
        }


# ---------------------------------------------------------------- detection

def _isomorphisms(src: Disjunct, dst: Disjunct):
    """Variable bijections taking ``src``'s head and atoms onto ``dst``'s (predicates ignored)."""
    if src.arity != dst.arity or len(src.body) != len(dst.body):
        return
    fwd, back = {}, {}

    def bind(a, b, f, r):
        if isinstance(a, Const) or isinstance(b, Const):
            return a == b
        if a in f:
            return f[a] == b
        if b in r:
            return False
        f[a] = b
        r[b] = a
        return True

    for a, b in zip(src.head, dst.head):
        if not bind(a, b, fwd, back):
            return

    def go(i, used, f, r):
        if i == len(src.body):
            yield dict(f)
            return
        atom = src.body[i]
        for k, cand in enumerate(dst.body):
            if k in used or cand.peer != atom.peer or cand.relation != atom.relation:
                continue
            f2, r2 = dict(f), dict(r)
            if all(bind(x, y, f2, r2) for x, y in zip(atom.args, cand.args)):
                yield from go(i + 1, used | {k}, f2, r2)

    yield from go(0, frozenset(), fwd, back)


def _extras(back_d: Disjunct, q_d: Disjunct):
    best = None
    for iso in _isomorphisms(back_d, q_d):
        mapped = {rename_pred(p, iso) for p in back_d.predicates}
        extra = tuple(sorted(mapped - set(q_d.predicates), key=pred_key))
        key = (len(extra), tuple(pred_key(p) for p in extra))
        if best is None or key < best[0]:
            best = (key, extra)
    return None if best is None else best[1]


def _group_covered(group) -> bool:
    extras = [set(e) for _, e in group]
    if any(not e for e in extras):
        return True
    lefts = {p.left for e in extras for p in e}
    if len(lefts) != 1:
        return False
    v = next(iter(lefts))
    eq_consts = {next(iter(e)).right for e in extras
                 if len(e) == 1 and next(iter(e)).op == EQ and isinstance(next(iter(e)).right, Const)}
    if not eq_consts:
        return False
    complement = {Predicate(v, NEQ, c) for c in eq_consts}
    return any(e == complement for e in extras)


def detect_loss(q: Query, q_back: Query, dropped=()) -> LossReport:
    """Compare ``q`` with its round-trip ``q_back`` over the same schema."""
    if q.arity != q_back.arity:
        raise ComparisonError(f"cannot compare queries of arity {q.arity} and {q_back.arity}")
    Q, B = canonicalize(q), canonicalize(q_back)
    groups = {i: [] for i in range(len(Q.disjuncts))}
    for j, bd in enumerate(B.disjuncts):
        options = []
        for i, qd in enumerate(Q.disjuncts):
            extra = _extras(bd, qd)
            if extra is not None:
                options.append((len(extra), i, extra))
        if not options:
            continue
        options.sort(key=lambda o: o[0])
        best = [o for o in options if o[0] == options[0][0]]
        if len({o[2] for o in best}) > 1 or (len(best) > 1 and best[0][0] > 0):
            raise AmbiguityError(
                f"disjunct {j} of the round-trip query matches disjuncts {[o[1] for o in best]} equally well")
        groups[best[0][1]].append((j, best[0][2]))

    lost = tuple(i for i, g in groups.items() if not g)
    uncovered = [i for i, g in groups.items() if g and not _group_covered(g)]
    empty = not lost and not dropped and not uncovered

    disc = None
    if not empty and not lost and not dropped and len(uncovered) == 1:
        i = uncovered[0]
        extras = [e for _, e in groups[i]]
        if all(len(e) == 1 and e[0].op == EQ and isinstance(e[0].right, Const) for e in extras):
            variables = {e[0].left for e in extras}
            qd = Q.disjuncts[i]
            if len(variables) == 1 and next(iter(variables)) in qd.head:
                v = next(iter(variables))
                pos = qd.head.index(v)
                disc = Discriminator(i, pos, _original_name(q, qd, pos) or v.name,
                                     tuple(sorted({e[0].right.value for e in extras})))
    names = tuple(_display_names(q, qd) for qd in Q.disjuncts)
    return LossReport(
        Q, B, tuple((i, tuple(groups[i])) for i in sorted(groups)), lost, tuple(dropped), disc, empty, names)


def _display_names(q: Query, canonical: Disjunct) -> tuple:
    out = {}
    for pos, t in enumerate(canonical.head):
        if isinstance(t, Var) and t not in out:
            name = _original_name(q, canonical, pos)
            if name and Var(name) not in out.values():
                out[t] = Var(name)
    return tuple(out.items())


def _original_name(q: Query, canonical: Disjunct, pos: int) -> Optional[str]:
    for d in q.disjuncts:
        try:
            if canonical_disjunct(d) == canonical and isinstance(d.head[pos], Var):
                return d.head[pos].name
        except PdmsError:
            continue
    return None


# ---------------------------------------------------------------- synthesis

def complement_name(excluded) -> str:
    def esc(c: str) -> str:
        out = []
        for ch in c:
            if ch.isascii() and (ch.isalnum() or ch == "_"):
                out.append(ch)
            else:
                out.extend(f"%{b:02X}" for b in ch.encode("utf-8"))
        return "".join(out)

    return "CO_" + "+".join(esc(c) for c in sorted(excluded))


def _host_attribute(edge: Mapping, source: Atom, pos: int, host: str, net: PeerNetwork) -> Optional[str]:
    for rule in edge.rules:
        if rule.head.peer != source.peer or rule.head.relation != source.relation or rule.body_peer != host:
            continue
        t = rule.head.args[pos]
        if not isinstance(t, Var):
            continue
        for b in rule.body:
            for k, bt in enumerate(b.args):
                if bt == t:
                    return net.relation(b.peer, b.relation).attributes[k]
    return None


def synthesize_complement(report: LossReport, edge: Mapping, q: Optional[Query] = None,
                          net: Optional[PeerNetwork] = None) -> ComplementSpec:
    disc = report.discriminator
    if disc is None:
        raise CannotSynthesize("loss is not a set of constant choices on one output column", report)
    d = report.query.disjuncts[disc.disjunct]
    if len(d.body) != 1:
        raise CannotSynthesize(f"lossy disjunct joins {len(d.body)} relations; only single-relation sources are supported", report)
    if net is None:
        raise CannotSynthesize("the network is needed to name the complement's attributes", report)
    source = d.body[0]
    host = edge.other(source.peer)
    head_vars = [t for t in d.head if isinstance(t, Var)]
    missing = [t for t in source.variables() if t not in head_vars]
    if missing or len(head_vars) != len(d.head):
        raise CannotSynthesize("the lossy disjunct does not output every column of its source relation", report)
    src_schema = net.relation(source.peer, source.relation)

    names, attrs = {}, []
    for v in d.head:
        if v in names:
            continue
        if v not in source.args:
            raise CannotSynthesize(f"output variable {v} is not a column of {source.relation}", report)
        pos = source.args.index(v)
        name = _host_attribute(edge, source, pos, host, net) or src_schema.attributes[pos]
        base, k = name, 2
        while name in attrs:
            name = f"{base}_{k}"
            k += 1
        attrs.append(name)
        names[v] = Var(name)

    relation = RelationSchema(complement_name(disc.excluded), attrs)
    disc_var = names[d.head[disc.position]]
    co_atom = Atom(host, relation.name, [names[v] for v in d.head])
    src_atom = subst_atom(source, names)
    preds = [Predicate(disc_var, NEQ, Const(c)) for c in disc.excluded]
    preds += [subst_pred(p, names) for p in d.predicates]
    definition = normalize_rule(co_atom, [src_atom], preds)
    contribution = GavRule(src_atom, [co_atom], [])
    return ComplementSpec(relation, host, source.peer, src_schema, definition, contribution)


def apply_recovery(net: PeerNetwork, spec: ComplementSpec) -> PeerNetwork:
    """Add the virtual complement relation to the host and both rules to the edge."""
    host = net.peer(spec.host_peer)
    if host.relation(spec.relation.name) is not None:
        raise RecoveryError(f"relation {spec.host_peer}.{spec.relation.name} already exists")
    edge = net.mapping(spec.source_peer, spec.host_peer)
    if edge is None:
        raise RecoveryError(f"no mapping between {spec.source_peer} and {spec.host_peer}")
    new_host = PeerSchema(host.peer_id, host.relations + (spec.relation,), host.virtual_relations | {spec.relation.name})
    out = net.replace_peer(new_host).replace_mapping(edge.with_rules(spec.definition_rule, spec.contribution_rule))
    problems = validate_network(out)
    if problems:
        raise RecoveryError(f"recovered network is invalid: {problems[0]}")
    return out


def _edge(net: PeerNetwork, edge) -> Mapping:
    m = net.mapping(*edge)
    if m is None:
        raise PdmsError(f"no mapping between {edge[0]} and {edge[1]}")
    return m


def verify_recovery(q: Query, net: PeerNetwork, edge) -> bool:
    rt = roundtrip(q, _edge(net, edge))
    return detect_loss(q, rt.back, rt.dropped).empty


class Recovery(NamedTuple):
    report: LossReport
    spec: Optional[ComplementSpec]
    network: PeerNetwork


def track_and_replace(q: Query, net: PeerNetwork, edge) -> Recovery:
    """Round-trip ``q`` over ``edge``, and repair the loss when its shape allows it."""
    p1, p2 = edge
    mapping = _edge(net, edge)
    if q.peers() != {p1}:
        raise PdmsError(f"query must be posed at {p1}, it uses peers {sorted(q.peers())}")
    rt = roundtrip(q, mapping)
    report = detect_loss(q, rt.back, rt.dropped)
    if report.empty:
        return Recovery(report, None, net)
    try:
        spec = synthesize_complement(report, mapping, q, net)
    except CannotSynthesize:
        return Recovery(report, None, net)
    recovered = apply_recovery(net, spec)
    if not verify_recovery(q, recovered, edge):
        raise PdmsError(f"internal error: loss persists after adding {spec.relation.name} at {p2}")
    return Recovery(report, spec, recovered)
