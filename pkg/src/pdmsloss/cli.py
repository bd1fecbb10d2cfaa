"""Command-line front end: ``pdmsloss <command> --scenario FILE --query NAME ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import fixtures
from .loss import detect_loss, track_and_replace
from .model import PdmsError, Query
from .parser import ParseError, Scenario, load_scenario, parse_scenario, render_query, render_rule, render_scenario
from .propagation import propagate_complement
from .report import write_report
from .rewrite import roundtrip, unfold_forward
from .simulator import GeneratorConfig, compare_runs, generate_data, propagate_query

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


@dataclass
class CommandResult:
    exit_code: int
    output: str = ""  # report for standard output
    error: str = ""  # diagnostics for standard error


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["text", "json"], default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="pdmsloss", description="Detect and repair semantic loss in PDMS query reformulation.")
    parser.add_argument("--format", choices=["text", "json"], default="text", help="report format")
    parser.add_argument("--quiet", action="store_true", help="print nothing but errors")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def command(name, help_text, via=True):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.add_argument("--scenario", required=True, help="scenario file (.pdms); bundled fixtures are found by name")
        p.add_argument("--query", required=True, help="name of a query declared in the scenario")
        if via:
            p.add_argument("--via", required=True, metavar="PEER", help="neighbouring peer the query is sent to")
        return p

    p = command("reformulate", "forward the query hop by hop to a peer", via=False)
    p.add_argument("--to", required=True, metavar="PEER")
    command("roundtrip", "print Q, its translation Q' and the back-translation Q''")
    command("detect-loss", "report the semantic loss of a round trip")
    p = command("recover", "add a complement relation that removes the loss")
    p.add_argument("--emit", metavar="FILE", help="write the augmented scenario to FILE")
    command("propagate", "recover, then link the complement to the host's other neighbours")
    p = command("simulate", "generate data and compare answers with and without recovery", via=False)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--rows", type=int, default=10, help="rows per generated relation")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--with-recovery", dest="mode", action="store_const", const="with")
    mode.add_argument("--without-recovery", dest="mode", action="store_const", const="without")
    mode.add_argument("--both", dest="mode", action="store_const", const="both")
    p.add_argument("--oracle", metavar="NAME", help="query giving the ideal answers, for recall")
    p.add_argument("--populate", action="append", metavar="PEER", help="generate data only for PEER (repeatable)")
    p.add_argument("--pool", action="append", default=[], metavar="ATTR=V1,V2",
                   help="draw ATTR's values from this list (repeatable)")
    p.add_argument("--key", action="append", metavar="ATTR",
                   help="generate ATTR as unique ids (repeatable; default: first attribute of each relation)")
    p.add_argument("--report-dir", metavar="DIR", help="write hops.csv, metrics.csv and answers.png here")
    return parser


# ---------------------------------------------------------------- helpers

def _load(name: str) -> Scenario:
    if os.path.exists(name):
        return load_scenario(name)
    base = Path(name).name
    if base in fixtures.bundled():
        return parse_scenario(fixtures.fixture_text(base))
    raise UsageError(f"scenario file not found: {name}")


def _edge_peers(sc: Scenario, query_name: str, via: str):
    nq = sc.query(query_name)
    if not sc.network.has_peer(via):
        raise PdmsError(f"unknown peer {via}")
    if sc.network.mapping(nq.peer, via) is None:
        raise PdmsError(f"{nq.peer} and {via} are not connected by a mapping")
    return nq, (nq.peer, via)


def _shortest_path(net, start: str, goal: str) -> Optional[list]:
    prev = {start: None}
    queue = deque([start])
    while queue:
        p = queue.popleft()
        if p == goal:
            path = []
            while p is not None:
                path.append(p)
                p = prev[p]
            return path[::-1]
        for n in net.neighbors(p):
            if n not in prev:
                prev[n] = p
                queue.append(n)
    return None


def _sql(q: Query, net) -> str:
    return render_query(q, net)


def _indent(text: str) -> str:
    return "\n".join("  " + line for line in text.splitlines())


def _loss_text(report) -> str:
    if report.empty:
        return "no loss detected"
    lines = ["semantic loss detected"]
    for i, group in report.matches:
        for j, extra in group:
            if extra:
                lines.append(f"  Q'' disjunct {j} restricts Q disjunct {i} by {', '.join(report.display(i, p) for p in extra)}")
    for i in report.lost_disjuncts:
        lines.append(f"  Q disjunct {i} has no counterpart in Q''")
    for d in report.dropped:
        lines.append(f"  untranslatable: {d.reason}")
    if report.discriminator:
        disc = report.discriminator
        lines.append(f"  discriminator: {disc.variable} (column {disc.position}) restricted to "
                     + ", ".join(f'"{c}"' for c in disc.excluded))
    return "\n".join(lines)


# ---------------------------------------------------------------- commands

def cmd_reformulate(args, sc: Scenario):
    nq = sc.query(args.query)
    net = sc.network
    if not net.has_peer(args.to):
        raise PdmsError(f"unknown peer {args.to}")
    path = _shortest_path(net, nq.peer, args.to)
    if path is None:
        raise PdmsError(f"no mapping path from {nq.peer} to {args.to}")
    hops = [(nq.peer, nq.query)]
    q = nq.query
    for a, b in zip(path, path[1:]):
        q = unfold_forward(q, net.mapping(a, b), b)
        hops.append((b, q))
    data = {"path": path, "hops": [{"peer": p, "query": _sql(x, net)} for p, x in hops]}
    text = "\n\n".join(f"at {p}:\n{_indent(_sql(x, net))}" for p, x in hops)
    return data, text


def cmd_roundtrip(args, sc: Scenario):
    nq, edge = _edge_peers(sc, args.query, args.via)
    net = sc.network
    rt = roundtrip(nq.query, net.mapping(*edge))
    n = nq.name
    data = {
        "query": _sql(nq.query, net), "forward": _sql(rt.forward, net), "back": _sql(rt.back, net),
        "source": rt.source, "target": rt.target,
        "dropped": [{"disjunct": str(d.disjunct), "reason": d.reason} for d in rt.dropped],
    }
    text = (f"{n} at {rt.source}:\n{_indent(data['query'])}\n\n"
            f"{n}' at {rt.target}:\n{_indent(data['forward'])}\n\n"
            f"{n}'' at {rt.source}:\n{_indent(data['back'])}")
    for d in rt.dropped:
        text += f"\n\ndropped on the way back: {d.reason}"
    return data, text


def cmd_detect_loss(args, sc: Scenario):
    nq, edge = _edge_peers(sc, args.query, args.via)
    rt = roundtrip(nq.query, sc.network.mapping(*edge))
    report = detect_loss(nq.query, rt.back, rt.dropped)
    return report.to_dict(), _loss_text(report)


def cmd_recover(args, sc: Scenario):
    nq, edge = _edge_peers(sc, args.query, args.via)
    rec = track_and_replace(nq.query, sc.network, edge)
    data = {"loss": rec.report.to_dict(), "complement": rec.spec.to_dict() if rec.spec else None, "emitted": None}
    if rec.report.empty:
        return data, "no loss detected"
    if rec.spec is None:
        raise _DomainFailure(data, _loss_text(rec.report) + "\nloss has no supported repair: it is not a set of "
                             "constant choices on one output column of a single relation")
    text = [_loss_text(rec.report), "",
            f"complement relation {rec.spec.relation.name}({', '.join(rec.spec.relation.attributes)}) at {rec.spec.host_peer}",
            f"  definition:   {render_rule(rec.spec.definition_rule)}",
            f"  contribution: {render_rule(rec.spec.contribution_rule)}"]
    after = roundtrip(nq.query, rec.network.mapping(*edge))
    text += ["", f"{nq.name}' with recovery:", _indent(_sql(after.forward, rec.network))]
    if args.emit:
        Path(args.emit).write_text(render_scenario(sc.with_network(rec.network)), encoding="utf-8")
        data["emitted"] = args.emit
        text.append(f"\nwrote {args.emit}")
    return data, "\n".join(text)


def cmd_propagate(args, sc: Scenario):
    nq, edge = _edge_peers(sc, args.query, args.via)
    rec = track_and_replace(nq.query, sc.network, edge)
    if rec.spec is None:
        data = {"loss": rec.report.to_dict(), "complement": None, "outcomes": []}
        if rec.report.empty:
            return data, "no loss detected; nothing to propagate"
        raise _DomainFailure(data, _loss_text(rec.report) + "\nloss has no supported repair; nothing to propagate")
    _, outcomes = propagate_complement(rec.network, rec.spec, edge[1], nq.query)
    data = {"loss": rec.report.to_dict(), "complement": rec.spec.to_dict(), "outcomes": [o.to_dict() for o in outcomes]}
    text = [f"complement {rec.spec.relation.name} added at {rec.spec.host_peer}"]
    for o in outcomes:
        text.append(f"\n{o.neighbor}: candidates {{{', '.join(o.candidates)}}}")
        if o.match:
            corr = ", ".join(f"{c.source}~{c.target} ({c.provenance})" for c in o.match.correspondences)
            text.append(f"  match {o.match.relation.name} (score {o.match.score:.3f}): {corr or 'none'}")
        if o.rule:
            text.append(f"  rule: {render_rule(o.rule)}")
        text.append(f"  verified: {'yes' if o.verified else 'no'} ({o.reason})")
    return data, "\n".join(text)


def _pools(items) -> dict:
    pools = {}
    for item in items:
        attr, sep, values = item.partition("=")
        if not sep or not attr or not values:
            raise UsageError(f"--pool expects ATTR=V1,V2,... got {item!r}")
        pools[attr] = tuple(v for v in values.split(",") if v)
    return pools


def cmd_simulate(args, sc: Scenario):
    nq = sc.query(args.query)
    net = sc.network
    if args.rows < 0:
        raise UsageError("--rows must be non-negative")
    keys = args.key if args.key else {r.attributes[0] for p in net.peers for r in p.relations if r.attributes}
    for p in args.populate or ():
        if not net.has_peer(p):
            raise PdmsError(f"unknown peer {p}")
    cfg = GeneratorConfig(args.seed, args.rows, _pools(args.pool), frozenset(keys),
                          frozenset(args.populate) if args.populate else None)
    data = sc.instances.merge(generate_data(net, cfg))
    mode = args.mode or "both"
    runs = {}
    if mode in ("without", "both"):
        runs["without"] = propagate_query(net, nq.peer, nq.query, data, recover=False)
    if mode in ("with", "both"):
        runs["with"] = propagate_query(net, nq.peer, nq.query, data, recover=True)
    oracle = sc.query(args.oracle).query if args.oracle else None
    metrics = None
    if len(runs) == 2:
        metrics = compare_runs(runs["without"], runs["with"], oracle, data)
    data_out = {"runs": {k: t.to_dict(lambda q, t=t: _sql(q, t.network)) for k, t in runs.items()},
                "metrics": metrics.to_dict() if metrics else None, "report": None}
    text = []
    for label, t in runs.items():
        text.append(f"{label} recovery: {len(t.origin_answers)} answers at {nq.peer}")
        for h in t.hops:
            status = f"dead ({h.error})" if h.dead else f"{len(h.answers)} answers"
            extra = f", added {h.recovered}" if h.recovered else ""
            text.append(f"  {h.peer:<6} depth {h.depth}: {status}{extra}")
    if metrics:
        text.append(f"gained {len(metrics.gained)}, lost {len(metrics.lost)}")
        if metrics.recall_b is not None:
            text.append(f"recall against {args.oracle}: without {metrics.recall_a:.3f}, with {metrics.recall_b:.3f}")
    if args.report_dir:
        paths = write_report(args.report_dir, runs, metrics)
        data_out["report"] = [str(p) for p in paths]
        text.append("wrote " + ", ".join(str(p) for p in paths))
    return data_out, "\n".join(text)


class _DomainFailure(Exception):
    def __init__(self, data, text):
        super().__init__(text)
        self.data = data
        self.text = text


COMMANDS = {
    "reformulate": cmd_reformulate,
    "roundtrip": cmd_roundtrip,
    "detect-loss": cmd_detect_loss,
    "recover": cmd_recover,
    "propagate": cmd_propagate,
    "simulate": cmd_simulate,
}


def run(argv) -> CommandResult:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as e:
        return CommandResult(EXIT_USAGE, error=str(e))
    except SystemExit as e:  # --help
        return CommandResult(int(e.code or 0))
    fmt = args.format

    def failure(code, kind, message, data=None):
        if fmt == "json":
            doc = {"error": {"kind": kind, "message": message}}
            if data is not None:
                doc["result"] = data
            return CommandResult(code, json.dumps(doc, indent=2, ensure_ascii=False), message)
        return CommandResult(code, "", message)

    try:
        sc = _load(args.scenario)
        data, text = COMMANDS[args.command](args, sc)
    except UsageError as e:
        return failure(EXIT_USAGE, "usage", str(e))
    except ParseError as e:
        return failure(EXIT_USAGE, "parse", str(e))
    except _DomainFailure as e:
        return failure(EXIT_DOMAIN, "unsupported-loss", e.text, e.data)
    except PdmsError as e:
        return failure(EXIT_DOMAIN, type(e).__name__, str(e))
    except OSError as e:
        return failure(EXIT_USAGE, "io", str(e))
    if args.quiet:
        return CommandResult(EXIT_OK)
    if fmt == "json":
        return CommandResult(EXIT_OK, json.dumps(data, indent=2, ensure_ascii=False))
    return CommandResult(EXIT_OK, text)


def main(argv=None) -> int:
    result = run(sys.argv[1:] if argv is None else argv)
    if result.output:
        print(result.output)
    if result.error:
        print(result.error, file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
