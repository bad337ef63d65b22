"""AMR graphs and a small PENMAN reader."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from rep.core import is_verb_sense

Edge = tuple[str, str, str]


@dataclass(frozen=True)
class Node:
    id: str
    concept: str
    is_verb_sense: bool = False
    is_constant: bool = False


@dataclass
class AmrGraph:
    """Directed labelled graph.  Edge labels are stored without the leading colon.

    ``tree_edges`` holds the edges written as nested ``(...)`` definitions; the
    remaining edges are re-entrant variable references.  Constants get ids of the
    form ``#cN`` numbered in order of appearance.
    """

    nodes: dict[str, Node] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    root: str = ""
    alignments: dict[str, list[int]] = field(default_factory=dict)
    tree_edges: set[Edge] = field(default_factory=set)

    def copy(self) -> "AmrGraph":
        return AmrGraph(
            dict(self.nodes),
            list(self.edges),
            self.root,
            {k: list(v) for k, v in self.alignments.items()},
            set(self.tree_edges),
        )

    def add_node(self, node_id: str, concept: str, constant: bool = False) -> Node:
        node = Node(node_id, concept, (not constant) and is_verb_sense(concept), constant)
        self.nodes[node_id] = node
        return node

    def out_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e[0] == node_id]

    def in_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e[2] == node_id]

    def edge_set(self) -> set[Edge]:
        return set(self.edges)

    def check(self) -> list[str]:
        problems = []
        for s, label, t in self.edges:
            if s not in self.nodes or t not in self.nodes:
                problems.append(f"edge {s} :{label} {t} has a missing endpoint")
        if self.root not in self.nodes:
            problems.append(f"root {self.root!r} is not a node")
            return problems
        seen = {self.root}
        stack = [self.root]
        while stack:
            n = stack.pop()
            for s, _, t in self.edges:
                if s == n and t not in seen:
                    seen.add(t)
                    stack.append(t)
        unreachable = sorted(set(self.nodes) - seen)
        if unreachable:
            problems.append(f"nodes unreachable from root: {unreachable}")
        return problems


class PenmanError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<slash>/)
  | (?P<role>:[^\s()/:"]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<symbol>[^\s()/:"]+)
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PenmanError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - line_start + 1
        if kind not in ("ws", "comment"):
            yield kind, value, line, col
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rfind("\n") + 1
        pos = m.end()
    yield "eof", "", line, pos - line_start + 1


class _Parser:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.i = 0
        self.graph = AmrGraph()
        self.order = 0
        # (order, source, label, target); targets of symbol values resolve after the walk
        self.tree: list[tuple[int, str, str, str]] = []
        self.pending: list[tuple[int, str, str, str, bool]] = []
        self.n_constants = 0

    def peek(self):
        return self.tokens[self.i]

    def fail(self, message: str, tok) -> PenmanError:
        return PenmanError(message, tok[2], tok[3])

    def parse(self) -> AmrGraph:
        self.graph.root = self.node()
        tok = self.peek()
        if tok[0] != "eof":
            raise self.fail(f"unexpected {tok[1]!r} after the graph", tok)
        edges = list(self.tree)
        for order, source, label, value, quoted in self.pending:
            if not quoted and value in self.graph.nodes:
                edges.append((order, source, label, value))
            else:
                edges.append((order, source, label, self.constant(value)))
        edges.sort(key=lambda e: e[0])
        seen = set()
        for _, s, label, t in edges:
            if (s, label, t) not in seen:
                seen.add((s, label, t))
                self.graph.edges.append((s, label, t))
        return self.graph

    def constant(self, literal: str) -> str:
        node_id = f"#c{self.n_constants}"
        self.n_constants += 1
        self.graph.add_node(node_id, literal, constant=True)
        return node_id

    def node(self) -> str:
        tok = self.peek()
        if tok[0] != "lparen":
            raise self.fail(f"expected '(', found {tok[1] or 'end of input'!r}", tok)
        self.i += 1
        tok = self.peek()
        if tok[0] != "symbol":
            raise self.fail(f"expected a variable, found {tok[1] or 'end of input'!r}", tok)
        var = tok[1]
        if var in self.graph.nodes:
            raise self.fail(f"duplicate variable {var!r}", tok)
        self.i += 1
        tok = self.peek()
        if tok[0] != "slash":
            raise self.fail(f"missing concept for variable {var!r}", tok)
        self.i += 1
        tok = self.peek()
        if tok[0] not in ("symbol", "string"):
            raise self.fail(f"missing concept for variable {var!r}", tok)
        self.i += 1
        self.graph.add_node(var, tok[1].strip('"'))
        while True:
            tok = self.peek()
            if tok[0] == "rparen":
                self.i += 1
                return var
            if tok[0] != "role":
                raise self.fail(f"expected a role or ')', found {tok[1] or 'end of input'!r}", tok)
            label = tok[1][1:]
            if not label:
                raise self.fail("empty role label", tok)
            self.i += 1
            order = self.order
            self.order += 1
            tok = self.peek()
            if tok[0] == "lparen":
                child = self.node()
                self.tree.append((order, var, label, child))
                self.graph.tree_edges.add((var, label, child))
            elif tok[0] in ("symbol", "string"):
                self.i += 1
                quoted = tok[0] == "string"
                value = tok[1][1:-1].replace('\\"', '"') if quoted else tok[1]
                self.pending.append((order, var, label, value, quoted))
            else:
                raise self.fail(f"role :{label} has no value (found {tok[1] or 'end of input'!r})", tok)


def parse_penman(text: str, alignments: dict[str, list[int]] | None = None) -> AmrGraph:
    """Parse one PENMAN-serialized AMR.

    One node per variable and one node per constant occurrence.  A bare symbol
    that names a variable defined anywhere in the graph is a re-entrancy;
    otherwise it is a constant.  Quoted strings are always constants.
    """
    graph = _Parser(text).parse()
    if alignments:
        for node_id, toks in alignments.items():
            if node_id not in graph.nodes:
                raise ValueError(f"alignment for unknown node {node_id!r}")
            graph.alignments[node_id] = sorted(int(t) for t in toks)
    return graph


def _format_constant(literal: str, variables) -> str:
    # bare symbols that collide with a variable would read back as re-entrancies
    if re.fullmatch(r"[^\s()/:\"]+", literal) and not literal.startswith("#") and literal not in variables:
        return literal
    return '"' + literal.replace('"', '\\"') + '"'


def to_penman(graph: AmrGraph) -> str:
    """Serialize ``graph`` back to PENMAN following its tree edges."""
    children: dict[str, list[Edge]] = {}
    for e in graph.edges:
        children.setdefault(e[0], []).append(e)

    def render(node_id: str, depth: int) -> str:
        node = graph.nodes[node_id]
        parts = [f"({node_id} / {node.concept}"]
        for s, label, t in children.get(node_id, []):
            target = graph.nodes[t]
            if (s, label, t) in graph.tree_edges and not target.is_constant:
                value = render(t, depth + 1)
            elif target.is_constant:
                value = _format_constant(target.concept, graph.nodes)
            else:
                value = t
            parts.append("\n" + "    " * (depth + 1) + f":{label} {value}")
        return "".join(parts) + ")"

    return render(graph.root, 0)
