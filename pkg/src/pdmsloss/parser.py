"""Readers and writers for ``.pdms`` scenario files, GAV rules and the SQL subset.

Scenario grammar::

    peer 9DC { relation SkilledPerson(PID, skill) }
    peer H   { relation Doctor(SID, h, l, s, e)  virtual relation CO_X(SID, skill) }
    mapping 9DC <- H { SkilledPerson(SID, "Doctor") :- Doctor(SID, h, l, s, e). }
    mapping H <-> LH { H : Doctor(...) :- LH : Staff(...), LH : Schedule(...). }
    data LH.Staff { ("1", "Ann", "Lee", "Doctor") }
    query Q1 @ 9DC { SELECT PID, skill FROM SkilledPerson }

Keywords are case-insensitive, identifiers are not.  ``# ...`` starts a comment.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .model import (
    EQ, NEQ, Atom, Const, Disjunct, GavRule, Instance, Mapping, PdmsError, PeerNetwork,
    PeerSchema, Predicate, Query, RelationSchema, Var, check_query, check_rule, normalize,
    quote, subst_atom, subst_pred, unify_terms, validate_network,
)


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    start: int
    end: int

    def __str__(self):
        return f"line {self.line}, column {self.column}"


class ParseError(PdmsError):
    def __init__(self, message: str, span: Optional[SourceSpan] = None):
        self.message = message
        self.span = span
        super().__init__(f"{message} ({span})" if span else message)


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, STRING, OP, EOF
    value: str
    span: SourceSpan

    def is_kw(self, *words: str) -> bool:
        return self.kind == "IDENT" and self.value.upper() in words

    def is_op(self, *ops: str) -> bool:
        return self.kind == "OP" and self.value in ops


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*"|“[^”\n]*”)
  | (?P<op>:-|<->|<-|!=|<>|≠|[=,(){}:.@;*<>])
  | (?P<ident>[A-Za-z0-9_][A-Za-z0-9_+%]*)
    """,
    re.VERBOSE,
)


def _span(text: str, start: int, end: int) -> SourceSpan:
    line = text.count("\n", 0, start) + 1
    col = start - (text.rfind("\n", 0, start) + 1) + 1
    return SourceSpan(line, col, start, end)


def tokenize(text: str) -> list:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", _span(text, pos, pos + 1))
        kind = m.lastgroup
        span = _span(text, m.start(), m.end())
        raw = m.group()
        if kind == "string":
            if raw.startswith("“"):
                value = raw[1:-1]
            else:
                value = re.sub(r"\\(.)", r"\1", raw[1:-1])
            out.append(Token("STRING", value, span))
        elif kind == "op":
            out.append(Token("OP", "≠" if raw in ("!=", "<>") else raw, span))
        elif kind == "ident":
            out.append(Token("IDENT", raw, span))
        pos = m.end()
    out.append(Token("EOF", "", _span(text, len(text), len(text))))
    return out


SQL_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "UNION"}
UNSUPPORTED = {
    "GROUP", "BY", "ORDER", "HAVING", "JOIN", "ON", "OR", "NOT", "DISTINCT", "LIMIT", "AS", "IN",
    "LIKE", "EXISTS", "INTERSECT", "EXCEPT", "ALL", "IS", "NULL", "CASE", "OFFSET", "LEFT",
    "RIGHT", "INNER", "OUTER", "CROSS", "NATURAL", "COUNT", "SUM", "MIN", "MAX", "AVG",
}
_SUPPORTED_MSG = "supported: SELECT, FROM, WHERE, AND, UNION, =, != / ≠, quoted literals"


class _Cursor:
    def __init__(self, tokens: list, pos: int = 0):
        self.tokens = tokens
        self.pos = pos

    def peek(self, k: int = 0) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def at_end(self) -> bool:
        return self.peek().kind == "EOF"

    def expect_op(self, op: str) -> Token:
        tok = self.next()
        if not tok.is_op(op):
            raise ParseError(f"expected {op!r}, found {tok.value or 'end of input'!r}", tok.span)
        return tok

    def expect_ident(self, what: str = "identifier") -> Token:
        tok = self.next()
        if tok.kind != "IDENT":
            raise ParseError(f"expected {what}, found {tok.value or 'end of input'!r}", tok.span)
        return tok

    def expect_kw(self, kw: str) -> Token:
        tok = self.next()
        if not tok.is_kw(kw):
            raise ParseError(f"expected {kw}, found {tok.value or 'end of input'!r}", tok.span)
        return tok


def _unsupported(tok: Token) -> ParseError:
    return ParseError(f"unsupported construct {tok.value!r}; {_SUPPORTED_MSG}", tok.span)


# ---------------------------------------------------------------- SQL

@dataclass
class _Ref:
    qualifier: Optional[str]
    attr: str
    tok: Token


def _sql_ref(cur: _Cursor) -> _Ref:
    tok = cur.next()
    if tok.kind != "IDENT":
        if tok.kind == "OP" and tok.value in ("*", "<", ">", ";"):
            raise _unsupported(tok)
        raise ParseError(f"expected attribute reference, found {tok.value or 'end of input'!r}", tok.span)
    if tok.value.upper() in UNSUPPORTED:
        raise _unsupported(tok)
    if cur.peek().is_op("."):
        cur.next()
        attr = cur.expect_ident("attribute name")
        return _Ref(tok.value, attr.value, tok)
    return _Ref(None, tok.value, tok)


def _sql_operand(cur: _Cursor):
    if cur.peek().kind == "STRING":
        return Const(cur.next().value)
    return _sql_ref(cur)


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _sql_block(cur: _Cursor, peer: PeerSchema) -> Disjunct:
    cur.expect_kw("SELECT")
    items = [_sql_operand(cur)]
    while cur.peek().is_op(","):
        cur.next()
        items.append(_sql_operand(cur))
    tok = cur.peek()
    if not tok.is_kw("FROM"):
        if tok.kind == "IDENT" and tok.value.upper() in UNSUPPORTED:
            raise _unsupported(tok)
        raise ParseError(f"expected FROM, found {tok.value or 'end of input'!r}", tok.span)
    cur.next()

    occurrences = []  # (alias, RelationSchema)
    while True:
        rtok = cur.expect_ident("relation name")
        if rtok.value.upper() in UNSUPPORTED:
            raise _unsupported(rtok)
        rel = peer.relation(rtok.value)
        if rel is None:
            raise ParseError(f"unknown relation {peer.peer_id}.{rtok.value}", rtok.span)
        alias = rtok.value
        nxt = cur.peek()
        if nxt.kind == "IDENT" and nxt.value.upper() not in SQL_KEYWORDS | UNSUPPORTED:
            alias = cur.next().value
        elif nxt.is_kw("AS"):
            raise _unsupported(nxt)
        if any(a == alias for a, _ in occurrences):
            raise ParseError(f"relation {alias} listed twice in FROM; give each occurrence an alias", rtok.span)
        occurrences.append((alias, rel))
        if cur.peek().is_op(","):
            cur.next()
            continue
        break

    conds = []
    if cur.peek().is_kw("WHERE"):
        cur.next()
        while True:
            lhs = _sql_ref(cur)
            op = cur.next()
            if not op.is_op("=", "≠"):
                if op.kind == "OP" or (op.kind == "IDENT" and op.value.upper() in UNSUPPORTED):
                    raise _unsupported(op)
                raise ParseError(f"expected = or != after {lhs.attr}, found {op.value!r}", op.span)
            rhs = _sql_operand(cur)
            conds.append((lhs, EQ if op.value == "=" else NEQ, rhs))
            if cur.peek().is_kw("AND"):
                cur.next()
                continue
            break

    tok = cur.peek()
    if not (tok.kind == "EOF" or tok.is_kw("UNION") or tok.is_op(";", "}")):
        if tok.kind == "IDENT" and tok.value.upper() in UNSUPPORTED or tok.kind == "OP":
            raise _unsupported(tok)
        raise ParseError(f"unexpected {tok.value!r}", tok.span)

    aliases = {a: rel for a, rel in occurrences}
    uf = _UnionFind()

    def candidates(ref: _Ref) -> list:
        if ref.qualifier is not None:
            rel = aliases.get(ref.qualifier)
            if rel is None:
                raise ParseError(f"unknown relation {ref.qualifier} in reference {ref.qualifier}.{ref.attr}", ref.tok.span)
            if ref.attr not in rel.attributes:
                raise ParseError(f"unknown attribute {rel.name}.{ref.attr}", ref.tok.span)
            return [(ref.qualifier, ref.attr)]
        found = [(a, ref.attr) for a, rel in occurrences if ref.attr in rel.attributes]
        if not found:
            raise ParseError(f"unknown attribute {ref.attr}", ref.tok.span)
        return found

    def resolved(ref: _Ref):
        cs = candidates(ref)
        roots = {uf.find(c) for c in cs}
        return cs[0] if len(roots) == 1 else None

    # variable equalities first; an unqualified attribute is unambiguous once all its columns are equated
    pending = [(l, r) for l, op, r in conds if op == EQ and isinstance(r, _Ref)]
    changed = True
    while pending and changed:
        changed = False
        rest = []
        for l, r in pending:
            cl, cr = resolved(l), resolved(r)
            if cl is None or cr is None:
                rest.append((l, r))
                continue
            uf.union(cl, cr)
            changed = True
        pending = rest

    def column(ref: _Ref):
        c = resolved(ref)
        if c is None:
            owners = ", ".join(a for a, _ in candidates(ref))
            raise ParseError(f"ambiguous attribute {ref.attr} (in {owners})", ref.tok.span)
        return c

    for l, r in pending:
        column(l)
        column(r)

    names = {}
    used = set()
    for alias, rel in occurrences:
        for attr in rel.attributes:
            root = uf.find((alias, attr))
            if root in names:
                continue
            rattr = root[1]
            name = rattr if rattr not in used else f"{rattr}_{root[0]}"
            k = 2
            while name in used:
                name = f"{rattr}_{root[0]}_{k}"
                k += 1
            used.add(name)
            names[root] = Var(name)

    def var_of(ref: _Ref) -> Var:
        return names[uf.find(column(ref))]

    body = [Atom(peer.peer_id, rel.name, [names[uf.find((alias, a))] for a in rel.attributes]) for alias, rel in occurrences]
    preds = []
    for l, op, r in conds:
        left = var_of(l)
        right = var_of(r) if isinstance(r, _Ref) else r
        if op == EQ and isinstance(r, _Ref):
            continue
        preds.append(Predicate(left, op, right))
    head = [var_of(i) if isinstance(i, _Ref) else i for i in items]
    return Disjunct(head, body, preds)


def _sql_query(cur: _Cursor, peer: PeerSchema) -> Query:
    blocks = [_sql_block(cur, peer)]
    while cur.peek().is_kw("UNION"):
        union_tok = cur.next()
        if cur.peek().is_kw("ALL"):
            raise _unsupported(cur.peek())
        blocks.append(_sql_block(cur, peer))
        if blocks[-1].arity != blocks[0].arity:
            raise ParseError(f"UNION blocks have different widths ({blocks[0].arity} vs {blocks[-1].arity})", union_tok.span)
    if cur.peek().is_op(";"):
        cur.next()
    return Query(blocks)


def parse_query_sql(text: str, peer: PeerSchema) -> Query:
    """Parse ``SELECT .. FROM .. [WHERE ..] (UNION ...)*`` over one peer's schema."""
    cur = _Cursor(tokenize(text))
    if cur.at_end():
        raise ParseError("empty query", cur.peek().span)
    q = _sql_query(cur, peer)
    if not cur.at_end():
        tok = cur.peek()
        raise _unsupported(tok) if tok.kind == "IDENT" and tok.value.upper() in UNSUPPORTED else ParseError(f"unexpected {tok.value!r}", tok.span)
    for d in q.disjuncts:
        try:
            normalize(d)
        except PdmsError as e:
            raise ParseError(str(e), cur.tokens[0].span) from None
    return q


# ---------------------------------------------------------------- rules

def _rule_atom(cur: _Cursor, default_peer: Optional[str], net: Optional[PeerNetwork]) -> Atom:
    first = cur.expect_ident("peer or relation name")
    if cur.peek().is_op(":"):
        cur.next()
        peer = first.value
        rel_tok = cur.expect_ident("relation name")
    else:
        peer = default_peer
        rel_tok = first
    if peer is None:
        if net is None:
            raise ParseError(f"atom {rel_tok.value} needs a peer qualifier", rel_tok.span)
        owners = [p.peer_id for p in net.peers if p.relation(rel_tok.value) is not None]
        if len(owners) != 1:
            raise ParseError(f"cannot infer the peer of {rel_tok.value}; qualify it as PEER : {rel_tok.value}", rel_tok.span)
        peer = owners[0]
    cur.expect_op("(")
    args = []
    if not cur.peek().is_op(")"):
        while True:
            tok = cur.next()
            if tok.kind == "STRING":
                args.append(Const(tok.value))
            elif tok.kind == "IDENT":
                args.append(Var(tok.value))
            else:
                raise ParseError(f"expected a term, found {tok.value!r}", tok.span)
            if cur.peek().is_op(","):
                cur.next()
                continue
            break
    cur.expect_op(")")
    return Atom(peer, rel_tok.value, args)


def _rule(cur: _Cursor, head_peer, body_peer, net) -> GavRule:
    start = cur.peek().span
    head = _rule_atom(cur, head_peer, net)
    cur.expect_op(":-")
    body, preds = [], []
    while True:
        # IDENT followed by '(' or ':' is an atom, otherwise a condition
        if cur.peek().kind == "IDENT" and cur.peek(1).is_op("(", ":"):
            body.append(_rule_atom(cur, body_peer, net))
        else:
            left = cur.expect_ident("variable")
            op = cur.next()
            if not op.is_op("=", "≠"):
                raise ParseError(f"expected = or ≠ after {left.value}, found {op.value!r}", op.span)
            rt = cur.next()
            if rt.kind == "STRING":
                right = Const(rt.value)
            elif rt.kind == "IDENT":
                right = Var(rt.value)
            else:
                raise ParseError(f"expected a term, found {rt.value!r}", rt.span)
            preds.append(Predicate(Var(left.value), EQ if op.value == "=" else NEQ, right))
        if cur.peek().is_op(","):
            cur.next()
            continue
        break
    rule = normalize_rule(head, body, preds)
    problems = check_rule(rule, net)
    if problems:
        raise ParseError(str(problems[0]), start)
    return rule


def normalize_rule(head: Atom, body, preds) -> GavRule:
    """Solve explicit ``X = Y`` / ``X = "c"`` body conditions by substitution."""
    s = unify_terms((p.left, p.right) for p in preds if p.op == EQ)
    if s is None:
        raise PdmsError("rule has contradictory equalities")
    neq = []
    for p in preds:
        if p.op == NEQ:
            q = subst_pred(p, s)
            if isinstance(q.left, Const) and isinstance(q.right, Var):
                q = Predicate(q.right, NEQ, q.left)
            if q not in neq:
                neq.append(q)
    return GavRule(subst_atom(head, s), [subst_atom(a, s) for a in body], neq)


def parse_rule(text: str, net: Optional[PeerNetwork] = None, head_peer: Optional[str] = None,
               body_peer: Optional[str] = None) -> GavRule:
    cur = _Cursor(tokenize(text))
    rule = _rule(cur, head_peer, body_peer, net)
    if cur.peek().is_op("."):
        cur.next()
    if not cur.at_end():
        raise ParseError(f"unexpected {cur.peek().value!r} after rule", cur.peek().span)
    return rule


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class NamedQuery:
    name: str
    peer: str
    query: Query


@dataclass(frozen=True)
class Scenario:
    network: PeerNetwork
    instances: Instance = field(default_factory=Instance)
    queries: tuple = ()

    def query(self, name: str) -> NamedQuery:
        for q in self.queries:
            if q.name == name:
                return q
        known = ", ".join(q.name for q in self.queries) or "none"
        raise PdmsError(f"unknown query {name!r} (known: {known})")

    def with_network(self, net: PeerNetwork) -> "Scenario":
        return Scenario(net, self.instances, self.queries)


def _block_tokens(cur: _Cursor) -> list:
    """Tokens up to the matching '}' (consumed), followed by EOF."""
    cur.expect_op("{")
    out = []
    while True:
        tok = cur.next()
        if tok.kind == "EOF":
            raise ParseError("unterminated block", tok.span)
        if tok.is_op("}"):
            out.append(Token("EOF", "", tok.span))
            return out
        out.append(tok)


def parse_scenario(text: str) -> Scenario:
    cur = _Cursor(tokenize(text))
    peers, peer_spans = [], {}
    raw_mappings = []
    data_decls = []
    query_decls = []
    while not cur.at_end():
        tok = cur.expect_ident("declaration")
        kw = tok.value.lower()
        if kw == "peer":
            pid = cur.expect_ident("peer id")
            if pid.value in peer_spans:
                raise ParseError(f"peer {pid.value} declared twice", pid.span)
            cur.expect_op("{")
            rels, virtual = [], set()
            while not cur.peek().is_op("}"):
                is_virtual = False
                t = cur.expect_ident("relation")
                if t.value.lower() == "virtual":
                    is_virtual = True
                    t = cur.expect_ident("relation")
                if t.value.lower() != "relation":
                    raise ParseError(f"expected 'relation', found {t.value!r}", t.span)
                name = cur.expect_ident("relation name")
                cur.expect_op("(")
                attrs = [cur.expect_ident("attribute name").value]
                while cur.peek().is_op(","):
                    cur.next()
                    attrs.append(cur.expect_ident("attribute name").value)
                cur.expect_op(")")
                if any(r.name == name.value for r in rels):
                    raise ParseError(f"relation {pid.value}.{name.value} declared twice", name.span)
                if len(set(attrs)) != len(attrs):
                    raise ParseError(f"relation {pid.value}.{name.value} repeats an attribute", name.span)
                rels.append(RelationSchema(name.value, attrs))
                if is_virtual:
                    virtual.add(name.value)
            cur.expect_op("}")
            peers.append(PeerSchema(pid.value, rels, virtual))
            peer_spans[pid.value] = pid.span
        elif kw == "mapping":
            a = cur.expect_ident("peer id")
            arrow = cur.next()
            if not arrow.is_op("<-", "<->"):
                raise ParseError(f"expected <- or <->, found {arrow.value!r}", arrow.span)
            b = cur.expect_ident("peer id")
            raw_mappings.append((a, arrow.value, b, _block_tokens(cur)))
        elif kw == "data":
            p = cur.expect_ident("peer id")
            cur.expect_op(".")
            r = cur.expect_ident("relation name")
            data_decls.append((p, r, _block_tokens(cur)))
        elif kw == "query":
            name = cur.expect_ident("query name")
            cur.expect_op("@")
            p = cur.expect_ident("peer id")
            query_decls.append((name, p, _block_tokens(cur)))
        else:
            raise ParseError(f"unknown declaration {tok.value!r} (expected peer, mapping, data or query)", tok.span)

    if not peers:
        raise ParseError("no peers declared", cur.peek().span)
    net = PeerNetwork(peers)

    mappings = []
    for a, arrow, b, toks in raw_mappings:
        for end in (a, b):
            if end.value not in peer_spans:
                raise ParseError(f"mapping refers to unknown peer {end.value}", end.span)
        if any(m.connects(a.value, b.value) for m in mappings):
            raise ParseError(f"duplicate mapping between {a.value} and {b.value}", a.span)
        sub = _Cursor(toks)
        rules = []
        while not sub.at_end():
            if arrow == "<-":
                rule = _rule(sub, a.value, b.value, net)
            else:
                rule = _rule(sub, None, None, None)
                problems = check_rule(rule, net)
                if problems:
                    raise ParseError(str(problems[0]), a.span)
            if {rule.head_peer} | rule.body_peers != {a.value, b.value}:
                raise ParseError(f"rule {rule} does not connect {a.value} and {b.value}", a.span)
            rules.append(rule)
            if sub.peek().is_op("."):
                sub.next()
            elif not sub.at_end():
                raise ParseError(f"expected '.' between rules, found {sub.peek().value!r}", sub.peek().span)
        mappings.append(Mapping(a.value, b.value, rules))
    net = PeerNetwork(peers, mappings)
    problems = validate_network(net)
    if problems:
        raise ParseError(str(problems[0]))

    tables = {}
    for p, r, toks in data_decls:
        if p.value not in peer_spans:
            raise ParseError(f"data for unknown peer {p.value}", p.span)
        rel = net.peer(p.value).relation(r.value)
        if rel is None:
            raise ParseError(f"data for unknown relation {p.value}.{r.value}", r.span)
        sub = _Cursor(toks)
        rows = tables.setdefault((p.value, r.value), set())
        while not sub.at_end():
            open_tok = sub.expect_op("(")
            row = []
            while True:
                t = sub.next()
                if t.kind not in ("STRING", "IDENT"):
                    raise ParseError(f"expected a value, found {t.value!r}", t.span)
                row.append(t.value)
                if sub.peek().is_op(","):
                    sub.next()
                    continue
                break
            sub.expect_op(")")
            if len(row) != rel.arity:
                raise ParseError(
                    f"arity error: {p.value}.{r.value} expects {rel.arity} values, got {len(row)}", open_tok.span)
            rows.add(tuple(row))
            if sub.peek().is_op(","):
                sub.next()

    queries = []
    for name, p, toks in query_decls:
        if p.value not in peer_spans:
            raise ParseError(f"query {name.value} is posed at unknown peer {p.value}", p.span)
        if any(q.name == name.value for q in queries):
            raise ParseError(f"query {name.value} declared twice", name.span)
        sub = _Cursor(toks)
        q = _sql_query(sub, net.peer(p.value))
        if not sub.at_end():
            raise ParseError(f"unexpected {sub.peek().value!r}", sub.peek().span)
        problems = check_query(q, p.value, net)
        if problems:
            raise ParseError(str(problems[0]), name.span)
        queries.append(NamedQuery(name.value, p.value, q))

    return Scenario(net, Instance(tables), tuple(queries))


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ---------------------------------------------------------------- rendering

def render_atom(a: Atom, qualify: bool = True) -> str:
    inner = f"{a.relation}({', '.join(map(str, a.args))})"
    return f"{a.peer} : {inner}" if qualify else inner


def render_rule(rule: GavRule) -> str:
    parts = [render_atom(a) for a in rule.body] + [str(p) for p in rule.predicates]
    return f"{render_atom(rule.head)} :- {', '.join(parts)}"


def _render_block(d: Disjunct, net: PeerNetwork) -> str:
    n = normalize(d)
    counts = {}
    for a in n.body:
        counts[a.relation] = counts.get(a.relation, 0) + 1
    seen = {}
    aliases = []
    for a in n.body:
        if counts[a.relation] > 1:
            seen[a.relation] = seen.get(a.relation, 0) + 1
            aliases.append(f"{a.relation}_{seen[a.relation]}")
        else:
            aliases.append(a.relation)
    schemas = [net.relation(a.peer, a.relation) for a in n.body]
    attr_owners = {}
    for alias, rel in zip(aliases, schemas):
        for attr in rel.attributes:
            attr_owners.setdefault(attr, []).append(alias)

    def ref(i, j):
        attr = schemas[i].attributes[j]
        return attr if len(attr_owners[attr]) == 1 else f"{aliases[i]}.{attr}"

    first = {}
    conds = []
    for i, a in enumerate(n.body):
        for j, t in enumerate(a.args):
            if isinstance(t, Const):
                conds.append(f"{ref(i, j)} = {t}")
            elif t in first:
                conds.append(f"{first[t]} = {ref(i, j)}")
            else:
                first[t] = ref(i, j)
    for p in n.predicates:
        right = first[p.right] if isinstance(p.right, Var) else str(p.right)
        conds.append(f"{first[p.left]} != {right}")
    const_cols = {}
    for i, a in enumerate(n.body):
        for j, t in enumerate(a.args):
            if isinstance(t, Const):
                const_cols.setdefault(t, ref(i, j))
    select = ", ".join(first[t] if isinstance(t, Var) else const_cols.get(t, str(t)) for t in n.head)
    froms = ", ".join(rel if alias == rel else f"{rel} {alias}" for rel, alias in ((a.relation, al) for a, al in zip(n.body, aliases)))
    text = f"SELECT {select}\nFROM {froms}"
    if conds:
        text += "\nWHERE " + " AND ".join(conds)
    return text


def render_query(q: Query, net: PeerNetwork) -> str:
    return "\nUNION\n".join(_render_block(d, net) for d in q.disjuncts)


def render_scenario(sc: Scenario) -> str:
    lines = []
    net = sc.network
    for p in net.peers:
        lines.append(f"peer {p.peer_id} {{")
        for r in p.relations:
            flag = "virtual " if p.is_virtual(r.name) else ""
            lines.append(f"  {flag}relation {r.name}({', '.join(r.attributes)})")
        lines.append("}")
    for m in net.mappings:
        lines.append(f"mapping {m.peer_a} <-> {m.peer_b} {{")
        for r in m.rules:
            lines.append(f"  {render_rule(r)}.")
        lines.append("}")
    for (peer, rel) in sorted(sc.instances.tables):
        lines.append(f"data {peer}.{rel} {{")
        for row in sorted(sc.instances.get(peer, rel)):
            lines.append("  (" + ", ".join(quote(v) for v in row) + ")")
        lines.append("}")
    for nq in sc.queries:
        body = render_query(nq.query, net).replace("\n", "\n  ")
        lines.append(f"query {nq.name} @ {nq.peer} {{\n  {body}\n}}")
    return "\n".join(lines) + "\n"


def render(value, net: Optional[PeerNetwork] = None) -> str:
    if isinstance(value, Scenario):
        return render_scenario(value)
    if isinstance(value, GavRule):
        return render_rule(value)
    if isinstance(value, Query):
        if net is None:
            raise PdmsError("rendering a query as SQL needs the network for attribute names")
        return render_query(value, net)
    raise TypeError(f"cannot render {type(value).__name__}")
