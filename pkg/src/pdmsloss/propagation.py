"""Carry a complement relation from its host peer to the host's other neighbours.

After a recovery at host ``P2`` the new virtual relation is only reachable
from the origin peer.  For each other neighbour of ``P2`` we collect the
neighbour relations linked to the origin relation through the two mapping
edges, pick the best-matching one, and add a rule defining the complement
over it to the host-neighbour mapping.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from rapidfuzz.distance import Levenshtein

from .loss import ComplementSpec, LossReport, detect_loss
from .model import (
    Atom, Const, Disjunct, GavRule, PdmsError, PeerNetwork, Predicate, Query, RelationSchema,
    Var, subst_term, unify_terms, validate_network,
)
from .parser import normalize_rule, render_rule
from .rewrite import UntranslatableError, rename_apart, roundtrip, unfold_forward

SHARED_VARIABLE = "shared-variable"
NAME_SIMILARITY = "name-similarity"

# a name-only attribute pair below this similarity is not a correspondence
MIN_NAME_SIMILARITY = 0.5


@dataclass(frozen=True)
class Correspondence:
    source: str
    target: str
    provenance: str
    similarity: float

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "provenance": self.provenance}


@dataclass(frozen=True)
class MatchResult:
    relation: RelationSchema
    score: float
    correspondences: tuple

    def target_of(self, source_attr: str) -> Optional[str]:
        for c in self.correspondences:
            if c.source == source_attr:
                return c.target
        return None

    def to_dict(self) -> dict:
        return {
            "relation": self.relation.name,
            "score": round(self.score, 6),
            "correspondences": [c.to_dict() for c in self.correspondences],
        }


@dataclass(frozen=True)
class PropagationOutcome:
    neighbor: str
    candidates: tuple = ()
    match: Optional[MatchResult] = None
    rule: Optional[GavRule] = None
    verified: bool = False
    reason: str = ""
    loss: Optional[LossReport] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "neighbor": self.neighbor,
            "candidates": list(self.candidates),
            "match": self.match.to_dict() if self.match else None,
            "rule": render_rule(self.rule) if self.rule else None,
            "verified": self.verified,
            "reason": self.reason,
        }


def _mapping(net: PeerNetwork, p: str, q: str):
    m = net.mapping(p, q)
    if m is None:
        raise PdmsError(f"no mapping between {p} and {q}")
    return m


def _host_of(source_peer: str, neighbor: str, net: PeerNetwork) -> str:
    shared = sorted(set(net.neighbors(source_peer)) & set(net.neighbors(neighbor)))
    if not shared:
        raise PdmsError(f"no peer is mapped to both {source_peer} and {neighbor}")
    return shared[0]


def transitive_candidates(source_rel, neighbor: str, net: PeerNetwork, host: Optional[str] = None) -> set:
    """Relations of ``neighbor`` linked to ``source_rel = (peer, relation)`` through the host's two mappings.

    Relations co-occurring in a rule are linked; the closure is taken over the
    rules of both edges.
    """
    peer, relation = source_rel
    host = host or _host_of(peer, neighbor, net)
    rules = _mapping(net, peer, host).rules + _mapping(net, host, neighbor).rules
    linked = {(peer, relation)}
    changed = True
    while changed:
        changed = False
        for rule in rules:
            rels = {(a.peer, a.relation) for a in (rule.head,) + rule.body}
            if rels & linked and not rels <= linked:
                linked |= rels
                changed = True
    return {r for p, r in linked if p == neighbor}


def attribute_evidence(source_rel, neighbor: str, net: PeerNetwork, host: Optional[str] = None) -> dict:
    """Attribute pairs tied by a shared variable or constant in composed rules.

    Returns ``{neighbor relation: Counter({(source position, target position): votes})}``.
    """
    peer, relation = source_rel
    host = host or _host_of(peer, neighbor, net)
    near = _mapping(net, peer, host).rules
    far = _mapping(net, host, neighbor).rules
    counter = itertools.count()
    votes: dict = {}
    for r1 in near:
        atoms1 = (r1.head,) + r1.body
        sources = [a for a in atoms1 if a.peer == peer and a.relation == relation]
        hosts = [a for a in atoms1 if a.peer == host]
        for r2_orig in far:
            r2 = rename_apart(r2_orig, next(counter))
            atoms2 = (r2.head,) + r2.body
            targets = [a for a in atoms2 if a.peer == neighbor]
            for h1, h2 in itertools.product(hosts, [a for a in atoms2 if a.peer == host]):
                if h1.relation != h2.relation or h1.arity != h2.arity:
                    continue
                s = unify_terms(zip(h1.args, h2.args))
                if s is None:
                    continue
                for src in sources:
                    for p, t in enumerate(src.args):
                        t = subst_term(t, s)
                        for tgt in targets:
                            for k, u in enumerate(tgt.args):
                                if subst_term(u, s) == t:
                                    votes.setdefault(tgt.relation, Counter())[(p, k)] += 1
    return votes


def name_similarity(a: str, b: str) -> float:
    return Levenshtein.normalized_similarity(a.lower(), b.lower())


def _assign(source: RelationSchema, cand: RelationSchema, evidence: Counter):
    """Injective attribute assignment: evidence pairs first, then by name similarity."""
    pairs = []
    used_s, used_t = set(), set()
    ranked = sorted(evidence.items(), key=lambda kv: (-kv[1], source.attributes[kv[0][0]], cand.attributes[kv[0][1]]))
    for (p, k), _ in ranked:
        if p in used_s or k in used_t:
            continue
        pairs.append((p, k, 1.0, SHARED_VARIABLE))
        used_s.add(p)
        used_t.add(k)
    by_name = sorted(
        ((name_similarity(sa, ta), p, k) for p, sa in enumerate(source.attributes)
         for k, ta in enumerate(cand.attributes)),
        key=lambda x: (-x[0], source.attributes[x[1]], cand.attributes[x[2]]))
    for sim, p, k in by_name:
        if p in used_s or k in used_t:
            continue
        pairs.append((p, k, sim, NAME_SIMILARITY))
        used_s.add(p)
        used_t.add(k)
    return pairs


def schema_match(source: RelationSchema, candidates, evidence: Optional[dict] = None) -> MatchResult:
    """Best candidate by ``0.5 * name similarity + 0.5 * mean attribute similarity``.

    Attribute pairs backed by ``evidence`` (see :func:`attribute_evidence`)
    count as similarity 1.0.
    """
    candidates = sorted(candidates, key=lambda r: r.name)
    if not candidates:
        raise PdmsError(f"no candidate relations to match {source.name} against")
    evidence = evidence or {}
    best = None
    for cand in candidates:
        pairs = _assign(source, cand, evidence.get(cand.name, Counter()))
        attr_sim = sum(sim for _, _, sim, _ in pairs) / source.arity if source.arity else 1.0
        score = 0.5 * name_similarity(source.name, cand.name) + 0.5 * attr_sim
        corr = tuple(
            Correspondence(source.attributes[p], cand.attributes[k], prov, sim)
            for p, k, sim, prov in sorted(pairs)
            if prov == SHARED_VARIABLE or sim >= MIN_NAME_SIMILARITY)
        if best is None or score > best.score:
            best = MatchResult(cand, score, corr)
    return best


def derive_neighbor_rule(spec: ComplementSpec, match: MatchResult, neighbor: str) -> GavRule:
    """Define ``spec``'s complement relation over the matched neighbour relation."""
    definition = spec.definition_rule
    source_atom = definition.body[0]
    cand = match.relation
    body_vars = [Var(a) for a in cand.attributes]

    def target(t):
        if isinstance(t, Const):
            return t
        if t not in source_atom.args:
            raise PdmsError(f"variable {t} of the complement is not a column of {source_atom.relation}")
        attr = spec.source_relation.attributes[source_atom.args.index(t)]
        tgt = match.target_of(attr)
        if tgt is None:
            raise PdmsError(f"no correspondence for {attr}")
        return body_vars[cand.attributes.index(tgt)]

    preds = [Predicate(target(p.left), p.op, target(p.right)) for p in definition.predicates]
    head = Atom(spec.host_peer, spec.relation.name, [target(t) for t in definition.head.args])
    body = Atom(neighbor, cand.name, body_vars)
    rule = normalize_rule(head, [body], preds)
    assert set(rule.head.variables()) <= {v for a in rule.body for v in a.variables()}
    return rule


def _contribution_query(spec: ComplementSpec) -> Query:
    src = spec.contribution_rule.head
    return Query([Disjunct(src.args, [src])])


def propagate_complement(net: PeerNetwork, spec: ComplementSpec, host: Optional[str] = None,
                         query: Optional[Query] = None):
    """Link ``spec``'s complement to every neighbour of the host except the origin.

    ``query`` is the origin query whose host-side reformulation is used to
    re-verify each new edge; it defaults to a scan of the origin relation.
    Returns ``(network, outcomes)`` with outcomes sorted by neighbour.
    """
    host = host or spec.host_peer
    origin = spec.source_peer
    source_rel = (origin, spec.source_relation.name)
    q = query or _contribution_query(spec)
    outcomes = []
    for nbr in net.neighbors(host):
        if nbr == origin:
            continue
        cands = tuple(sorted(transitive_candidates(source_rel, nbr, net, host)))
        if not cands:
            outcomes.append(PropagationOutcome(nbr, reason="skipped: no transitive candidates"))
            continue
        evidence = attribute_evidence(source_rel, nbr, net, host)
        match = schema_match(spec.source_relation, [net.relation(nbr, c) for c in cands], evidence)
        try:
            rule = derive_neighbor_rule(spec, match, nbr)
        except PdmsError as e:
            outcomes.append(PropagationOutcome(nbr, cands, match, reason=str(e)))
            continue
        edge = _mapping(net, host, nbr)
        updated = net if rule in edge.rules else net.replace_mapping(edge.with_rules(rule))
        problems = validate_network(updated)
        if problems:
            outcomes.append(PropagationOutcome(nbr, cands, match, rule, reason=f"invalid rule: {problems[0]}"))
            continue
        net = updated
        try:
            q2 = unfold_forward(q, _mapping(net, origin, host), host)
            rt = roundtrip(q2, _mapping(net, host, nbr))
            report = detect_loss(q2, rt.back, rt.dropped)
        except (UntranslatableError, PdmsError) as e:
            outcomes.append(PropagationOutcome(nbr, cands, match, rule, False, f"verification failed: {e}"))
            continue
        reason = "no semantic loss" if report.empty else _loss_summary(report)
        outcomes.append(PropagationOutcome(nbr, cands, match, rule, report.empty, reason, report))
    return net, tuple(outcomes)


def _loss_summary(report: LossReport) -> str:
    parts = []
    if report.lost_disjuncts:
        parts.append(f"{len(report.lost_disjuncts)} disjunct(s) lost")
    if report.dropped:
        parts.append(f"{len(report.dropped)} disjunct(s) untranslatable")
    if not parts:
        parts.append("round trip adds restrictions")
    return "loss remains: " + ", ".join(parts)
