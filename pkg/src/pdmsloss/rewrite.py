"""Query reformulation across one mapping edge.

Translating a query from peer ``src`` to peer ``dst`` combines two moves:

* direct unfolding: an atom whose relation is the head of a rule
  ``src-atom :- dst-body`` is replaced by the (renamed) rule body, one output
  disjunct per combination of rule choices;
* inverse application: for the atoms left over, rules ``dst-atom :- src-body``
  are matched into the query by homomorphism and the covered atoms are
  replaced by the rule head.

Every disjunct produced by inverse application is kept only if its expansion
through the same rules is contained in the input query, so the translation
never answers more than the query it came from.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Optional

from .model import (
    EQ, NEQ, Atom, Const, Disjunct, GavRule, Mapping, PdmsError, Predicate, Query, Var,
    atom_key, canonical_disjuncts, canonicalize, normalize, subst_atom, subst_disjunct,
    subst_pred, unify_terms,
)

MAX_COVERS = 64


class UntranslatableError(PdmsError):
    def __init__(self, message: str, blocking=()):
        super().__init__(message)
        self.blocking = tuple(blocking)


@dataclass(frozen=True)
class Dropped:
    disjunct: Disjunct
    reason: str


@dataclass(frozen=True)
class RoundTrip:
    original: Query
    forward: Query
    back: Query
    dropped: tuple = ()
    source: str = ""
    target: str = ""


def rename_apart(rule: GavRule, tag: int) -> GavRule:
    s = {v: Var(f"_r{tag}_{v.name}") for v in rule.variables()}
    return GavRule(subst_atom(rule.head, s), [subst_atom(a, s) for a in rule.body],
                   [subst_pred(p, s) for p in rule.predicates])


def _neq_holds(a, b, preds) -> Optional[Predicate]:
    """The predicate in ``preds`` stating ``a != b``; a sentinel when both are distinct constants."""
    if isinstance(a, Const) and isinstance(b, Const):
        return _TRUE if a != b else None
    for p in preds:
        if p.op == NEQ and {p.left, p.right} == {a, b}:
            return p
    return None


_TRUE = Predicate(Const(""), NEQ, Const("_"))


def _match_atoms(pattern: list, targets: list, h: dict, distinct: bool, used=()) -> Iterator[tuple]:
    """One-way matching of ``pattern`` atoms onto ``targets``; yields (assignment, used indices)."""
    if not pattern:
        yield h, used
        return
    first, rest = pattern[0], pattern[1:]
    for i, t in enumerate(targets):
        if distinct and i in used:
            continue
        if t.peer != first.peer or t.relation != first.relation or t.arity != first.arity:
            continue
        h2 = dict(h)
        ok = True
        for p, q in zip(first.args, t.args):
            if isinstance(p, Const):
                if p != q:
                    ok = False
                    break
            elif p in h2:
                if h2[p] != q:
                    ok = False
                    break
            else:
                h2[p] = q
        if ok:
            yield from _match_atoms(rest, targets, h2, distinct, used + (i,))


def _map(t, h):
    return h.get(t, t) if isinstance(t, Var) else t


def contains(container: Disjunct, d: Disjunct) -> bool:
    """Sufficient test that ``d`` is contained in ``container`` (both in inlined form)."""
    if container.arity != d.arity:
        return False
    h = {}
    for p, q in zip(container.head, d.head):
        if isinstance(p, Const):
            if p != q:
                return False
        elif p in h and h[p] != q:
            return False
        else:
            h[p] = q
    for h2, _ in _match_atoms(list(container.body), list(d.body), h, distinct=False):
        if all(_neq_holds(_map(p.left, h2), _map(p.right, h2), d.predicates) for p in container.predicates):
            return True
    return False


def _unfold_all(d: Disjunct, rules: tuple, counter) -> Optional[list]:
    """Unfold every atom of ``d`` that some rule defines; ``None`` if an atom has no rule at all."""
    heads = {r.head.relation for r in rules}
    states = [({}, [], list(d.predicates))]
    for atom in d.body:
        if atom.relation not in heads:
            return None
        nxt = []
        for s, atoms, preds in states:
            a = subst_atom(atom, s)
            for rule in rules:
                if rule.head.relation != atom.relation:
                    continue
                r = rename_apart(rule, next(counter))
                s2 = unify_terms(zip(a.args, r.head.args), s)
                if s2 is not None:
                    nxt.append((s2, atoms + list(r.body), preds + list(r.predicates)))
        states = nxt
    out = []
    for s, atoms, preds in states:
        n = normalize(subst_disjunct(Disjunct(d.head, atoms, preds), s))
        if n is not None:
            out.append(n)
    return out


class _Translator:
    def __init__(self, mapping: Mapping, source: str, target: str):
        self.source = source
        self.target = target
        self.direct = tuple(r for r in mapping.rules if r.head_peer == source and r.body_peer == target)
        self.inverse = tuple(r for r in mapping.rules if r.head_peer == target and r.body_peer == source)
        self.direct_heads = {r.head.relation for r in self.direct}
        self.counter = itertools.count()

    def translate(self, q: Query):
        source_disjuncts = [normalize(d) for d in canonicalize(q).disjuncts]
        out, dropped = [], []
        for d in source_disjuncts:
            results, reason = self._disjunct(d, source_disjuncts)
            if results:
                out.extend(results)
            else:
                dropped.append(Dropped(d, reason))
        return canonical_disjuncts(out), dropped

    def _disjunct(self, d: Disjunct, source_disjuncts: list):
        for a in d.body:
            if a.peer != self.source:
                return [], f"atom {a} is not over peer {self.source}"
        states = [({}, [], [], list(d.predicates))]  # subst, unfolded atoms, pending atoms, predicates
        for atom in d.body:
            if atom.relation not in self.direct_heads:
                states = [(s, t, p + [atom], pr) for s, t, p, pr in states]
                continue
            nxt = []
            for s, done, pending, preds in states:
                a = subst_atom(atom, s)
                for rule in self.direct:
                    if rule.head.relation != atom.relation:
                        continue
                    r = rename_apart(rule, next(self.counter))
                    s2 = unify_terms(zip(a.args, r.head.args), s)
                    if s2 is not None:
                        nxt.append((s2, done + list(r.body), pending, preds + list(r.predicates)))
            if not nxt:
                return [], f"no rule for {atom.relation} unifies with {atom}"
            states = nxt

        results = []
        reason = "every rule combination is contradictory"
        for s, done, pending, preds in states:
            n = normalize(subst_disjunct(Disjunct(d.head, done + pending, preds), s))
            if n is None:
                continue
            done_atoms = [a for a in n.body if a.peer == self.target]
            pending_atoms = sorted((a for a in n.body if a.peer == self.source), key=atom_key)
            if not pending_atoms:
                results.append(n)
                continue
            found = False
            for atoms, marks, rest_preds in itertools.islice(
                    self._covers(n.head, done_atoms, [], pending_atoms, list(n.predicates)), MAX_COVERS):
                cand = self._accept(n.head, atoms, marks, rest_preds, source_disjuncts)
                if cand is not None:
                    results.append(cand)
                    found = True
            if not found:
                blocking = ", ".join(map(str, pending_atoms))
                reason = f"no sound rule application covers {blocking}"
        return results, reason

    def _covers(self, head, done, produced, pending, preds):
        if not pending:
            yield done, produced, preds
            return
        for rule in self.inverse:
            r = rename_apart(rule, next(self.counter))
            for h, used in _match_atoms(list(r.body), pending, {}, distinct=True):
                if 0 not in used:
                    continue
                consumed = []
                ok = True
                for rp in r.predicates:
                    a, b = _map(rp.left, h), _map(rp.right, h)
                    if rp.op == EQ:
                        ok = a == b
                    else:
                        hit = _neq_holds(a, b, preds)
                        ok = hit is not None
                        if hit is not None and hit is not _TRUE:
                            consumed.append(hit)
                    if not ok:
                        break
                if not ok:
                    continue
                remaining = [a for i, a in enumerate(pending) if i not in used]
                rest_preds = [p for p in preds if p not in consumed]
                head_vars = set(r.head.variables())
                existential = {h[v] for v in h if v not in head_vars and isinstance(h[v], Var)}
                outside = {t for t in head if isinstance(t, Var)}
                for a in done + remaining + [x for x, _ in produced]:
                    outside.update(a.variables())
                for p in rest_preds:
                    outside.update(t for t in p.terms() if isinstance(t, Var))
                if existential & outside:
                    continue
                new_atom = Atom(r.head.peer, r.head.relation, [_map(t, h) for t in r.head.args])
                const_positions = tuple(i for i, t in enumerate(r.head.args) if isinstance(t, Const))
                yield from self._covers(head, done, produced + [(new_atom, const_positions)], remaining, rest_preds)

    def _accept(self, head, done, produced, preds, source_disjuncts):
        """Pick the most general sound variant of a complete cover, or ``None``."""
        keep = Disjunct(head, done + [a for a, _ in produced], preds)
        variants = []
        in_use = set(t for t in head if isinstance(t, Const))
        for a in done:
            in_use.update(t for t in a.args if isinstance(t, Const))
        for p in preds:
            in_use.update(t for t in p.terms() if isinstance(t, Const))
        fresh = itertools.count()
        loose_atoms = []
        loosened = False
        for a, positions in produced:
            args = list(a.args)
            for i in positions:
                if args[i] not in in_use:
                    args[i] = Var(f"_d{next(fresh)}")
                    loosened = True
            loose_atoms.append(Atom(a.peer, a.relation, args))
        if loosened:
            variants.append(Disjunct(head, done + loose_atoms, preds))
        variants.append(keep)
        for v in variants:
            n = normalize(v)
            if n is None:
                continue
            expansions = _unfold_all(Disjunct(n.head, [a for a in n.body if a.peer == self.target], n.predicates),
                                     self.inverse, self.counter)
            if expansions is None:
                return n
            if all(any(contains(s, e) for s in source_disjuncts) for e in expansions):
                return n
        return None


def _translate(q: Query, mapping: Mapping, source: str, target: str):
    if not mapping.connects(source, target):
        raise PdmsError(f"mapping {mapping.peer_a}-{mapping.peer_b} does not connect {source} and {target}")
    return _Translator(mapping, source, target).translate(q)


def _query_peer(q: Query) -> str:
    peers = q.peers()
    if len(peers) != 1:
        raise PdmsError(f"query spans peers {sorted(peers)}; expected exactly one")
    return next(iter(peers))


def unfold_forward(q: Query, mapping: Mapping, target: str) -> Query:
    """Reformulate ``q`` for the peer at the other end of ``mapping``."""
    source = mapping.other(target)
    disjuncts, dropped = _translate(q, mapping, source, target)
    if not disjuncts:
        blocking = [a for d in dropped for a in d.disjunct.body]
        reasons = "; ".join(d.reason for d in dropped)
        raise UntranslatableError(f"untranslatable query from {source} to {target}: {reasons}", blocking)
    return Query(disjuncts)


def translate_back(q: Query, mapping: Mapping, target: str):
    """Translate ``q`` back to ``target``; returns ``(query, dropped)``."""
    source = mapping.other(target)
    disjuncts, dropped = _translate(q, mapping, source, target)
    if not disjuncts:
        reasons = "; ".join(d.reason for d in dropped)
        raise UntranslatableError(f"empty translation from {source} back to {target}: {reasons}",
                                  [a for d in dropped for a in d.disjunct.body])
    return Query(disjuncts), tuple(dropped)


def roundtrip(q: Query, mapping: Mapping) -> RoundTrip:
    source = _query_peer(q)
    target = mapping.other(source)
    forward = unfold_forward(q, mapping, target)
    back, dropped = translate_back(forward, mapping, source)
    return RoundTrip(canonicalize(q), forward, back, dropped, source, target)
