"""Synthetic peer data, UCQ evaluation and breadth-first query propagation."""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .loss import LossReport, track_and_replace
from .model import (
    EQ, ComparisonError, Const, Disjunct, Instance, PdmsError, PeerNetwork, Query, ValidationError, normalize,
)
from .propagation import propagate_complement
from .rewrite import UntranslatableError, unfold_forward


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 1
    rows_per_relation: int = 10
    value_pools: dict = field(default_factory=dict)
    key_attributes: frozenset = frozenset()
    peers: Optional[frozenset] = None  # populate only these peers; all when None

    def __post_init__(self):
        if self.rows_per_relation < 0:
            raise ValueError("rows_per_relation must be non-negative")
        pools = {k: tuple(v) for k, v in self.value_pools.items()}
        for attr, pool in pools.items():
            if not pool:
                raise ValueError(f"value pool for {attr} is empty")
        object.__setattr__(self, "value_pools", pools)
        object.__setattr__(self, "key_attributes", frozenset(self.key_attributes))
        if self.peers is not None:
            object.__setattr__(self, "peers", frozenset(self.peers))


def generate_data(net: PeerNetwork, cfg: GeneratorConfig) -> Instance:
    """Deterministic tuples for every stored relation of the selected peers.

    Key attributes take each of ``rows`` generated ids exactly once; an
    attribute name used by several relations of one peer draws from the same
    id set, so joins on it find partners.
    """
    n = cfg.rows_per_relation
    tables = {}
    for peer in net.peers:
        if cfg.peers is not None and peer.peer_id not in cfg.peers:
            continue
        stored = [r for r in peer.relations if not peer.is_virtual(r.name)]
        uses = {}
        for r in stored:
            for a in set(r.attributes):
                uses[a] = uses.get(a, 0) + 1
        for rel in stored:
            rng = random.Random(f"{cfg.seed}:{peer.peer_id}:{rel.name}")
            columns = []
            for attr in rel.attributes:
                ids = [f"{attr}-{i}" for i in range(n)]
                if attr in cfg.key_attributes:
                    col = ids[:]
                    rng.shuffle(col)
                elif attr in cfg.value_pools:
                    col = [rng.choice(cfg.value_pools[attr]) for _ in range(n)]
                elif uses[attr] > 1:
                    col = [rng.choice(ids) for _ in range(n)]
                else:
                    col = [f"{attr}-{rng.randrange(max(n, 1))}" for _ in range(n)]
                columns.append(col)
            tables[(peer.peer_id, rel.name)] = set(zip(*columns)) if columns else set()
    return Instance(tables)


# ---------------------------------------------------------------- evaluation

def _pred_holds(p, env) -> Optional[bool]:
    def val(t):
        if isinstance(t, Const):
            return t.value
        return env.get(t)

    a, b = val(p.left), val(p.right)
    if a is None or b is None:
        return None
    return a == b if p.op == EQ else a != b


def _eval_disjunct(d, table) -> set:
    out = set()
    d = normalize(d)
    if d is None:
        return out
    body = sorted(d.body, key=lambda a: len(table(a)))

    def go(i, env):
        for p in d.predicates:
            if _pred_holds(p, env) is False:
                return
        if i == len(body):
            if any(_pred_holds(p, env) is None for p in d.predicates):
                raise ValidationError(f"predicate over a variable missing from the body in {d}")
            out.add(tuple(t.value if isinstance(t, Const) else env[t] for t in d.head))
            return
        atom = body[i]
        for row in table(atom):
            env2 = dict(env)
            ok = True
            for t, v in zip(atom.args, row):
                if isinstance(t, Const):
                    ok = t.value == v
                elif t in env2:
                    ok = env2[t] == v
                else:
                    env2[t] = v
                if not ok:
                    break
            if ok:
                go(i + 1, env2)

    go(0, {})
    return out


def evaluate(q: Query, data: Instance, net: Optional[PeerNetwork] = None, definitions: Iterable = ()) -> set:
    """Answers of ``q`` over ``data`` under set semantics.

    ``definitions`` are rules for virtual relations; such a relation holds the
    union of its rules' answers instead of stored tuples.  With ``net`` given,
    every atom must name a relation of the network.
    """
    defs = {}
    for rule in definitions:
        defs.setdefault((rule.head.peer, rule.head.relation), []).append(rule)
    cache = {}

    def table(atom, active=()):
        key = (atom.peer, atom.relation)
        if net is not None:
            rel = net.relation(atom.peer, atom.relation)
            if rel.arity != atom.arity:
                raise ValidationError(f"{atom} has arity {atom.arity}, {key[0]}.{key[1]} has {rel.arity}")
        if key in cache:
            return cache[key]
        rows = set(data.get(*key))
        if key in defs and key not in active:
            for rule in defs[key]:
                d = Disjunct(rule.head.args, rule.body, rule.predicates)
                rows |= _eval_disjunct(d, lambda a: table(a, active + (key,)))
        cache[key] = frozenset(rows)
        return cache[key]

    out = set()
    for d in q.disjuncts:
        out |= _eval_disjunct(d, table)
    return out


# ---------------------------------------------------------------- propagation

@dataclass(frozen=True)
class Hop:
    peer: str
    parent: Optional[str]
    depth: int
    query: Optional[Query]
    loss: Optional[LossReport] = None
    recovered: Optional[str] = None  # name of the complement relation added on the incoming edge
    answers: frozenset = frozenset()
    error: str = ""

    @property
    def dead(self) -> bool:
        return self.query is None


@dataclass(frozen=True)
class PropagationTrace:
    origin: str
    path: tuple
    hops: tuple
    origin_answers: frozenset
    recover: bool
    network: Optional[PeerNetwork] = field(default=None, compare=False)

    @property
    def answers(self) -> frozenset:
        live = [h for h in self.hops if not h.dead]
        return live[-1].answers if live else frozenset()

    def to_dict(self, render=None) -> dict:
        def show(q):
            if q is None:
                return None
            return render(q) if render else [str(d) for d in q.disjuncts]

        return {
            "origin": self.origin,
            "recover": self.recover,
            "path": list(self.path),
            "hops": [
                {
                    "peer": h.peer, "from": h.parent, "depth": h.depth, "query": show(h.query),
                    "lossEmpty": None if h.loss is None else h.loss.empty,
                    "recovered": h.recovered, "answers": sorted(map(list, h.answers)), "error": h.error or None,
                }
                for h in self.hops
            ],
            "answers": sorted(map(list, self.answers)),
            "originAnswers": sorted(map(list, self.origin_answers)),
        }


def _virtual_definitions(net: PeerNetwork, origin: str) -> list:
    out = []
    for rule in net.rules():
        if net.peer(rule.head.peer).is_virtual(rule.head.relation) and rule.body_peers == {origin}:
            out.append(rule)
    return out


def propagate_query(net: PeerNetwork, origin: str, q: Query, data: Instance, recover: bool = False) -> PropagationTrace:
    """Forward ``q`` breadth-first from ``origin``, answering it at every reached peer.

    With ``recover`` the loss on each edge is repaired before forwarding; the
    repairs accumulate in a working copy of the network, returned on the trace.
    """
    if q.peers() - {origin}:
        raise PdmsError(f"query must be over {origin}, it uses {sorted(q.peers())}")
    work = net
    hops, path = [], []
    answers = set()
    visited = {origin}
    queue = deque([(origin, None, 0, q, None, None)])
    while queue:
        peer, parent, depth, local, loss, recovered = queue.popleft()
        got = frozenset(evaluate(local, data, work, _virtual_definitions(work, origin)))
        answers |= got
        path.append(peer)
        hops.append(Hop(peer, parent, depth, local, loss, recovered, got))
        for nbr in work.neighbors(peer):
            if nbr in visited:
                continue
            report, added = None, None
            try:
                if recover:
                    rec = track_and_replace(local, work, (peer, nbr))
                    report = rec.report
                    if rec.spec is not None:
                        work, _ = propagate_complement(rec.network, rec.spec, nbr, local)
                        added = rec.spec.relation.name
                forwarded = unfold_forward(local, work.mapping(peer, nbr), nbr)
            except UntranslatableError as e:
                hops.append(Hop(nbr, peer, depth + 1, None, report, added, error=str(e)))
                continue
            visited.add(nbr)
            queue.append((nbr, peer, depth + 1, forwarded, report, added))
    return PropagationTrace(origin, tuple(path), tuple(hops), frozenset(answers), recover, work)


@dataclass(frozen=True)
class Metrics:
    count_a: int
    count_b: int
    gained: frozenset
    lost: frozenset
    recall_a: Optional[float] = None
    recall_b: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "countA": self.count_a,
            "countB": self.count_b,
            "gained": sorted(map(list, self.gained)),
            "lost": sorted(map(list, self.lost)),
            "recall": self.recall_b,
            "recallA": self.recall_a,
        }


def _arity(answers) -> Optional[int]:
    return len(next(iter(answers))) if answers else None


def compare_runs(a: PropagationTrace, b: PropagationTrace, oracle: Optional[Query] = None,
                 data: Optional[Instance] = None) -> Metrics:
    """Answer counts of two runs, what ``b`` gains and loses over ``a``, and recall against ``oracle``."""
    ra, rb = a.origin_answers, b.origin_answers
    if ra and rb and _arity(ra) != _arity(rb):
        raise ComparisonError(f"runs answer with arity {_arity(ra)} and {_arity(rb)}")
    recall_a = recall_b = None
    if oracle is not None:
        ideal = evaluate(oracle, data if data is not None else Instance())
        for side in (ra, rb):
            if side and _arity(side) != oracle.arity:
                raise ComparisonError(f"oracle has arity {oracle.arity}, answers have {_arity(side)}")
        recall_a = len(ra & ideal) / len(ideal) if ideal else 1.0
        recall_b = len(rb & ideal) / len(ideal) if ideal else 1.0
    return Metrics(len(ra), len(rb), frozenset(rb - ra), frozenset(ra - rb), recall_a, recall_b)
