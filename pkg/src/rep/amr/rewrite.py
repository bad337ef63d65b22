"""Graph rewriting that turns an AMR into the shape of rich events.

The four rules run once each, in order:

1. coordination collapse: ``X -R-> and -opN-> Y`` becomes ``X -R-> Y``
   (repeated until no ``and`` node has a parent, so nested coordination flattens)
2. drop every edge joining two verb-sense nodes
3. invert ``ARGN-of`` edges into ``ARGN`` edges
4. keep only edges whose label is a reserved role
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from rep.amr.graph import AmrGraph, Edge
from rep.core import RESERVED_ROLES

COORDINATION = "and"
OP_RE = re.compile(r"^op\d+$")
INVERSE_ARG_RE = re.compile(r"^(ARG\d)-of$")


@dataclass
class ExtractionConfig:
    reserved_roles: frozenset = RESERVED_ROLES
    chain_min_length: int = 9
    window_stride: int = 1
    negatives_per_instance: int = 4
    seed: int = 0
    ne: int = 8
    # at most this many MCNC windows per chain; None keeps all of them
    per_chain_cap: int | None = None
    # resample distractors identical to the gold candidate
    reject_equivalent_distractors: bool = True

    def __post_init__(self):
        if self.chain_min_length < 1 or self.window_stride < 1 or self.negatives_per_instance < 1:
            raise ValueError("chain_min_length, window_stride and negatives_per_instance must be positive")

    @property
    def nc(self) -> int:
        return self.negatives_per_instance + 1

    def to_dict(self) -> dict:
        return {
            "reserved_roles": sorted(self.reserved_roles),
            "chain_min_length": self.chain_min_length,
            "window_stride": self.window_stride,
            "negatives_per_instance": self.negatives_per_instance,
            "seed": self.seed,
            "ne": self.ne,
            "per_chain_cap": self.per_chain_cap,
            "reject_equivalent_distractors": self.reject_equivalent_distractors,
        }


@dataclass
class RewriteStats:
    dropped: Counter = field(default_factory=Counter)
    collapsed_coordinations: int = 0
    inverted: int = 0

    def merge(self, other: "RewriteStats") -> None:
        self.dropped.update(other.dropped)
        self.collapsed_coordinations += other.collapsed_coordinations
        self.inverted += other.inverted


def _dedupe(edges: list[Edge]) -> list[Edge]:
    seen = set()
    out = []
    for e in edges:
        if e not in seen:
            seen.add(e)
            out.append(e)
    return out


def collapse_coordination(g: AmrGraph, stats: RewriteStats | None = None) -> None:
    """Rule 1, in place, to fixpoint.

    Collapsed nodes left without any edge are removed once the fixpoint is
    reached, so the result does not depend on the order of collapsing.
    """
    collapsed = set()
    while True:
        target = next(
            (
                n
                for n in g.nodes.values()
                if n.concept == COORDINATION and not n.is_constant
                and any(s != n.id and t == n.id for s, _, t in g.edges)
            ),
            None,
        )
        if target is None:
            break
        c = target.id
        collapsed.add(c)
        members = [t for s, label, t in g.edges if s == c and OP_RE.match(label) and t != c]
        new_edges: list[Edge] = []
        for s, label, t in g.edges:
            if t == c and s != c:
                new_edges.extend((s, label, y) for y in members if y != s)
                if stats is not None:
                    stats.collapsed_coordinations += 1
            elif s == c and OP_RE.match(label):
                continue
            else:
                new_edges.append((s, label, t))
        g.edges = _dedupe(new_edges)
    touched = {n for e in g.edges for n in (e[0], e[2])}
    for c in sorted(collapsed - touched - {g.root}):
        del g.nodes[c]


def rewrite_graph(g: AmrGraph, cfg: ExtractionConfig | None = None, stats: RewriteStats | None = None) -> AmrGraph:
    """Apply rules 1-4 to a copy of ``g``; alignments are carried over untouched."""
    reserved = (cfg or ExtractionConfig()).reserved_roles
    out = g.copy()
    out.tree_edges = set()

    before = len(out.edges)
    collapse_coordination(out, stats)
    if stats is not None:
        stats.dropped["rule1"] += max(0, before - len(out.edges))

    verbs = {n.id for n in out.nodes.values() if n.is_verb_sense}
    kept = [e for e in out.edges if not (e[0] in verbs and e[2] in verbs)]
    if stats is not None:
        stats.dropped["rule2"] += len(out.edges) - len(kept)
    out.edges = kept

    inverted = []
    for s, label, t in out.edges:
        m = INVERSE_ARG_RE.match(label)
        if m:
            inverted.append((t, m.group(1), s))
            if stats is not None:
                stats.inverted += 1
        else:
            inverted.append((s, label, t))
    out.edges = _dedupe(inverted)

    kept = [e for e in out.edges if e[1] in reserved]
    if stats is not None:
        stats.dropped["rule4"] += len(out.edges) - len(kept)
    out.edges = kept
    return out
