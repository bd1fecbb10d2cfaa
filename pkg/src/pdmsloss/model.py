"""Domain types for peer schemas, conjunctive queries, GAV rules and networks.

Everything here is immutable.  Queries use set semantics; two queries are
compared through :func:`canonicalize`, which lifts every constant into an
equality predicate, renames variables by first occurrence and sorts atoms,
predicates and disjuncts.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union


class PdmsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PdmsError):
    pass


class ComparisonError(PdmsError):
    pass


# ---------------------------------------------------------------- terms

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    value: str

    def __str__(self):
        return quote(self.value)


Term = Union[Var, Const]


def quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


_NUM = re.compile(r"(\d+)")


def _natural(name: str):
    return tuple(int(p) if p.isdigit() else p for p in _NUM.split(name))


def term_key(t: Term):
    if isinstance(t, Var):
        return (0, _natural(t.name))
    return (1, t.value)


EQ = "EQ"
NEQ = "NEQ"


@dataclass(frozen=True)
class Atom:
    peer: str
    relation: str
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> Iterator[Var]:
        return (t for t in self.args if isinstance(t, Var))

    def __str__(self):
        return f"{self.peer}:{self.relation}({', '.join(map(str, self.args))})"


def atom_key(a: Atom):
    return (a.peer, a.relation, tuple(term_key(t) for t in a.args))


@dataclass(frozen=True)
class Predicate:
    left: Term
    op: str
    right: Term

    def __post_init__(self):
        if self.op not in (EQ, NEQ):
            raise ValidationError(f"unknown predicate operator {self.op!r}")

    def terms(self):
        return (self.left, self.right)

    def __str__(self):
        sym = "=" if self.op == EQ else "≠"
        return f"{self.left} {sym} {self.right}"


def pred_key(p: Predicate):
    return (term_key(p.left), p.op, term_key(p.right))


@dataclass(frozen=True)
class Disjunct:
    """One conjunctive block: ``head :- body, predicates``."""

    head: tuple
    body: tuple
    predicates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "head", tuple(self.head))
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "predicates", tuple(self.predicates))

    @property
    def arity(self) -> int:
        return len(self.head)

    def body_vars(self) -> set:
        return {v for a in self.body for v in a.variables()}

    def variables(self) -> set:
        out = {t for t in self.head if isinstance(t, Var)} | self.body_vars()
        for p in self.predicates:
            out.update(t for t in p.terms() if isinstance(t, Var))
        return out


@dataclass(frozen=True)
class Query:
    """A union of conjunctive queries (UCQ)."""

    disjuncts: tuple

    def __post_init__(self):
        object.__setattr__(self, "disjuncts", tuple(self.disjuncts))
        if not self.disjuncts:
            raise ValidationError("a query needs at least one disjunct")
        widths = {d.arity for d in self.disjuncts}
        if len(widths) != 1:
            raise ValidationError(f"disjuncts disagree on head arity: {sorted(widths)}")

    @property
    def arity(self) -> int:
        return self.disjuncts[0].arity

    def peers(self) -> set:
        return {a.peer for d in self.disjuncts for a in d.body}


# ---------------------------------------------------------------- schemas

@dataclass(frozen=True)
class RelationSchema:
    name: str
    attributes: tuple

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))

    @property
    def arity(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class PeerSchema:
    peer_id: str
    relations: tuple
    virtual_relations: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "virtual_relations", frozenset(self.virtual_relations))

    def relation(self, name: str) -> Optional[RelationSchema]:
        for r in self.relations:
            if r.name == name:
                return r
        return None

    def is_virtual(self, name: str) -> bool:
        return name in self.virtual_relations


@dataclass(frozen=True)
class GavRule:
    """``head :- body, predicates`` with the head over one peer and the body over another."""

    head: Atom
    body: tuple
    predicates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "predicates", tuple(self.predicates))

    @property
    def head_peer(self) -> str:
        return self.head.peer

    @property
    def body_peers(self) -> set:
        return {a.peer for a in self.body}

    @property
    def body_peer(self) -> str:
        return self.body[0].peer

    def variables(self) -> set:
        out = set(self.head.variables())
        for a in self.body:
            out.update(a.variables())
        for p in self.predicates:
            out.update(t for t in p.terms() if isinstance(t, Var))
        return out

    def __str__(self):
        body = [str(a) for a in self.body] + [str(p) for p in self.predicates]
        return f"{self.head} :- {', '.join(body)}"


@dataclass(frozen=True)
class Mapping:
    peer_a: str
    peer_b: str
    rules: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def connects(self, p: str, q: str) -> bool:
        return {p, q} == {self.peer_a, self.peer_b}

    def other(self, peer: str) -> str:
        if peer == self.peer_a:
            return self.peer_b
        if peer == self.peer_b:
            return self.peer_a
        raise ValidationError(f"peer {peer} is not an end of mapping {self.peer_a}-{self.peer_b}")

    def rules_defining(self, head_peer: str) -> tuple:
        """Rules whose head is over ``head_peer`` (body over the other end)."""
        return tuple(r for r in self.rules if r.head_peer == head_peer)

    def with_rules(self, *rules: GavRule) -> "Mapping":
        return Mapping(self.peer_a, self.peer_b, self.rules + tuple(rules))


@dataclass(frozen=True)
class PeerNetwork:
    peers: tuple
    mappings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "peers", tuple(self.peers))
        object.__setattr__(self, "mappings", tuple(self.mappings))

    def peer(self, peer_id: str) -> PeerSchema:
        for p in self.peers:
            if p.peer_id == peer_id:
                return p
        raise ValidationError(f"unknown peer {peer_id}")

    def has_peer(self, peer_id: str) -> bool:
        return any(p.peer_id == peer_id for p in self.peers)

    def relation(self, peer_id: str, name: str) -> RelationSchema:
        rel = self.peer(peer_id).relation(name)
        if rel is None:
            raise ValidationError(f"unknown relation {peer_id}.{name}")
        return rel

    def mapping(self, p: str, q: str) -> Optional[Mapping]:
        for m in self.mappings:
            if m.connects(p, q):
                return m
        return None

    def neighbors(self, peer_id: str) -> list:
        return sorted({m.other(peer_id) for m in self.mappings if peer_id in (m.peer_a, m.peer_b)})

    def replace_mapping(self, new: Mapping) -> "PeerNetwork":
        mappings = [new if m.connects(new.peer_a, new.peer_b) else m for m in self.mappings]
        if not any(m.connects(new.peer_a, new.peer_b) for m in self.mappings):
            mappings.append(new)
        return PeerNetwork(self.peers, tuple(mappings))

    def replace_peer(self, new: PeerSchema) -> "PeerNetwork":
        peers = tuple(new if p.peer_id == new.peer_id else p for p in self.peers)
        return PeerNetwork(peers, self.mappings)

    def rules(self) -> Iterator[GavRule]:
        for m in self.mappings:
            yield from m.rules


@dataclass(frozen=True)
class Instance:
    """Stored tuples per ``(peer, relation)``; set semantics."""

    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tables", {k: frozenset(map(tuple, v)) for k, v in self.tables.items()})

    def get(self, peer: str, relation: str) -> frozenset:
        return self.tables.get((peer, relation), frozenset())

    def __len__(self):
        return sum(len(v) for v in self.tables.values())

    def peers(self) -> set:
        return {p for p, _ in self.tables}

    def restrict(self, peers: Iterable[str]) -> "Instance":
        keep = set(peers)
        return Instance({k: v for k, v in self.tables.items() if k[0] in keep})

    def merge(self, other: "Instance") -> "Instance":
        out = dict(self.tables)
        for k, v in other.tables.items():
            out[k] = out.get(k, frozenset()) | v
        return Instance(out)


# ---------------------------------------------------------------- substitution

def subst_term(t: Term, s: dict) -> Term:
    while isinstance(t, Var) and t in s:
        t = s[t]
    return t


def subst_atom(a: Atom, s: dict) -> Atom:
    return Atom(a.peer, a.relation, tuple(subst_term(t, s) for t in a.args))


def subst_pred(p: Predicate, s: dict) -> Predicate:
    return Predicate(subst_term(p.left, s), p.op, subst_term(p.right, s))


def subst_disjunct(d: Disjunct, s: dict) -> Disjunct:
    return Disjunct(
        tuple(subst_term(t, s) for t in d.head),
        tuple(subst_atom(a, s) for a in d.body),
        tuple(subst_pred(p, s) for p in d.predicates),
    )


def rename_term(t: Term, r: dict) -> Term:
    return r.get(t, t) if isinstance(t, Var) else t


def rename_pred(p: Predicate, r: dict) -> Predicate:
    """Single-step renaming (no chaining), safe for permutations of variables."""
    return Predicate(rename_term(p.left, r), p.op, rename_term(p.right, r))


def rename_disjunct(d: Disjunct, r: dict) -> Disjunct:
    return Disjunct(
        tuple(rename_term(t, r) for t in d.head),
        tuple(Atom(a.peer, a.relation, tuple(rename_term(t, r) for t in a.args)) for a in d.body),
        tuple(rename_pred(p, r) for p in d.predicates),
    )


def unify_terms(pairs: Iterable, s: Optional[dict] = None) -> Optional[dict]:
    """Most general unifier of term pairs on top of ``s``; ``None`` on clash."""
    s = dict(s or {})
    for a, b in pairs:
        a, b = subst_term(a, s), subst_term(b, s)
        if a == b:
            continue
        if isinstance(a, Var):
            s[a] = b
        elif isinstance(b, Var):
            s[b] = a
        else:
            return None
    return s


def resolve(s: dict) -> dict:
    return {v: subst_term(v, s) for v in s}


# ---------------------------------------------------------------- normal forms

def normalize(d: Disjunct) -> Optional[Disjunct]:
    """Inlined form: EQ predicates are solved away, constants sit in atoms/head.

    Only NEQ predicates remain, oriented variable-first and sorted.  Returns
    ``None`` when the predicates are contradictory.
    """
    s = unify_terms((p.left, p.right) for p in d.predicates if p.op == EQ)
    if s is None:
        return None
    d2 = subst_disjunct(Disjunct(d.head, d.body, [p for p in d.predicates if p.op == NEQ]), s)
    preds = set()
    for p in d2.predicates:
        left, right = p.left, p.right
        if left == right:
            return None
        if isinstance(left, Const) and isinstance(right, Const):
            continue
        if isinstance(left, Const) or (isinstance(right, Var) and term_key(right) < term_key(left)):
            left, right = right, left
        preds.add(Predicate(left, NEQ, right))
    body_vars = d2.body_vars()
    for t in d2.head:
        if isinstance(t, Var) and t not in body_vars:
            raise ValidationError(f"unsafe disjunct: head variable {t} does not occur in the body")
    for p in preds:
        for t in p.terms():
            if isinstance(t, Var) and t not in body_vars:
                raise ValidationError(f"unsafe disjunct: predicate variable {t} does not occur in the body")
    if not d2.body:
        raise ValidationError("disjunct has an empty body")
    return Disjunct(d2.head, d2.body, sorted(preds, key=pred_key))


def lift(d: Disjunct) -> Disjunct:
    """Replace each distinct constant in head/atoms by one variable plus an EQ predicate."""
    consts: dict = {}

    def lift_term(t):
        if isinstance(t, Const):
            if t not in consts:
                consts[t] = Var(f"_k{len(consts)}")
            return consts[t]
        return t

    head = tuple(lift_term(t) for t in d.head)
    body = tuple(Atom(a.peer, a.relation, tuple(lift_term(t) for t in a.args)) for a in d.body)
    preds = list(d.predicates) + [Predicate(v, EQ, c) for c, v in consts.items()]
    return Disjunct(head, body, preds)


_PERMUTATION_CAP = 5040


def _canonical_lifted(d: Disjunct) -> Disjunct:
    head_index: dict = {}
    for t in d.head:
        head_index.setdefault(t, len(head_index))
    eq_const = {p.left: p.right.value for p in d.predicates if p.op == EQ and isinstance(p.right, Const)}

    def pattern(t):
        if t in head_index:
            return (0, head_index[t], "")
        if t in eq_const:
            return (1, 0, eq_const[t])
        return (2, 0, "")

    def shape(a):
        return (a.peer, a.relation, tuple(pattern(t) for t in a.args))

    atoms = sorted(d.body, key=shape)
    groups = [list(g) for _, g in itertools.groupby(atoms, key=shape)]
    sizes = 1
    for g in groups:
        for k in range(2, len(g) + 1):
            sizes *= k
    if sizes <= _PERMUTATION_CAP:
        orderings = itertools.product(*(itertools.permutations(g) for g in groups))
    else:
        orderings = iter([tuple(tuple(g) for g in groups)])

    best = None
    for ordering in orderings:
        names: dict = {}
        for t in d.head:
            names.setdefault(t, Var(f"v{len(names)}"))
        for g in ordering:
            for a in g:
                for t in a.args:
                    if isinstance(t, Var):
                        names.setdefault(t, Var(f"v{len(names)}"))
        cand = rename_disjunct(d, names)
        cand = Disjunct(cand.head, sorted(cand.body, key=atom_key), sorted(set(cand.predicates), key=pred_key))
        key = disjunct_key(cand)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


def disjunct_key(d: Disjunct):
    return (
        tuple(term_key(t) for t in d.head),
        tuple(atom_key(a) for a in d.body),
        tuple(pred_key(p) for p in d.predicates),
    )


def canonical_disjunct(d: Disjunct) -> Optional[Disjunct]:
    n = normalize(d)
    if n is None:
        return None
    return _canonical_lifted(lift(n))


def canonical_disjuncts(disjuncts: Iterable[Disjunct]) -> list:
    seen = {}
    for d in disjuncts:
        c = canonical_disjunct(d)
        if c is not None:
            seen.setdefault(disjunct_key(c), c)
    return [seen[k] for k in sorted(seen)]


def canonicalize(q: Query) -> Query:
    """Semantics-preserving normal form of a UCQ; idempotent."""
    ds = canonical_disjuncts(q.disjuncts)
    if not ds:
        raise ValidationError("every disjunct of the query is unsatisfiable")
    return Query(ds)


def query_equal(a: Query, b: Query) -> bool:
    if a.arity != b.arity:
        raise ComparisonError(f"cannot compare queries of arity {a.arity} and {b.arity}")
    return canonicalize(a) == canonicalize(b)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


def check_atom(atom: Atom, net: PeerNetwork) -> list:
    if not net.has_peer(atom.peer):
        return [Diagnostic("unknown peer", f"{atom} refers to unknown peer {atom.peer}")]
    rel = net.peer(atom.peer).relation(atom.relation)
    if rel is None:
        return [Diagnostic("unknown relation", f"{atom} refers to unknown relation {atom.peer}.{atom.relation}")]
    if rel.arity != atom.arity:
        return [Diagnostic("arity mismatch", f"{atom} has {atom.arity} arguments, {atom.peer}.{rel.name} has {rel.arity}")]
    return []


def check_rule(rule: GavRule, net: Optional[PeerNetwork] = None) -> list:
    out = []
    if not rule.body:
        return [Diagnostic("unsafe rule", f"{rule} has an empty body")]
    if len(rule.body_peers) > 1:
        out.append(Diagnostic("mixed body peers", f"{rule} mixes peers {sorted(rule.body_peers)} in its body"))
    if rule.head_peer in rule.body_peers:
        out.append(Diagnostic("same-peer rule", f"{rule} has head and body over peer {rule.head_peer}"))
    body_vars = {v for a in rule.body for v in a.variables()}
    missing = sorted((v.name for v in rule.head.variables() if v not in body_vars))
    for p in rule.predicates:
        missing += [t.name for t in p.terms() if isinstance(t, Var) and t not in body_vars]
    if missing:
        out.append(Diagnostic("unsafe rule", f"{rule}: variables {', '.join(sorted(set(missing)))} do not occur in the body"))
    if net is not None:
        for a in (rule.head,) + rule.body:
            out.extend(check_atom(a, net))
    return out


def check_query(q: Query, peer: str, net: PeerNetwork) -> list:
    out = []
    for d in q.disjuncts:
        for a in d.body:
            if a.peer != peer:
                out.append(Diagnostic("foreign atom", f"{a} is not over peer {peer}"))
            out.extend(check_atom(a, net))
        try:
            normalize(d)
        except ValidationError as e:
            out.append(Diagnostic("unsafe query", str(e)))
    return out


def validate_network(net: PeerNetwork) -> list:
    """One :class:`Diagnostic` per violated invariant; empty when the network is sound."""
    out = []
    seen_peers = set()
    for p in net.peers:
        if p.peer_id in seen_peers:
            out.append(Diagnostic("duplicate peer", f"peer {p.peer_id} declared twice"))
        seen_peers.add(p.peer_id)
        names = set()
        for r in p.relations:
            if r.name in names:
                out.append(Diagnostic("duplicate relation", f"{p.peer_id}.{r.name} declared twice"))
            names.add(r.name)
            if not r.attributes:
                out.append(Diagnostic("empty relation", f"{p.peer_id}.{r.name} has no attributes"))
            if len(set(r.attributes)) != len(r.attributes):
                out.append(Diagnostic("duplicate attribute", f"{p.peer_id}.{r.name} repeats an attribute name"))
        for v in sorted(p.virtual_relations - names):
            out.append(Diagnostic("unknown relation", f"virtual flag on undeclared relation {p.peer_id}.{v}"))
    pairs = set()
    for m in net.mappings:
        pair = frozenset((m.peer_a, m.peer_b))
        if pair in pairs:
            out.append(Diagnostic("duplicate mapping", f"more than one mapping between {m.peer_a} and {m.peer_b}"))
        pairs.add(pair)
        for end in (m.peer_a, m.peer_b):
            if end not in seen_peers:
                out.append(Diagnostic("unknown peer", f"mapping {m.peer_a}-{m.peer_b} refers to unknown peer {end}"))
        for r in m.rules:
            peers = {r.head_peer} | r.body_peers
            if not peers <= {m.peer_a, m.peer_b}:
                out.append(Diagnostic("foreign rule", f"{r} does not connect {m.peer_a} and {m.peer_b}"))
            out.extend(check_rule(r, net))
    return out
