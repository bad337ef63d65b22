"""From rewritten AMR graphs to narrative chains and MCNC instances."""

from __future__ import annotations

import logging
import random
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from rep.amr.graph import AmrGraph, parse_penman, to_penman
from rep.amr.rewrite import ExtractionConfig, RewriteStats, rewrite_graph
from rep.core import (
    Argument,
    DataError,
    McncInstance,
    NarrativeChain,
    RichEvent,
    normalize_headword,
    role_priority,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mention:
    start: int
    end: int  # inclusive
    head: int


@dataclass
class Document:
    doc_id: str
    tokens: list[str]
    sentences: list[tuple[int, int]]  # [start, end) token ranges
    graphs: list[AmrGraph]
    coref: list[list[Mention]]
    meta: dict = field(default_factory=dict)
    # PENMAN text as authored, reused when serializing
    penman: list[str] | None = None

    def check(self) -> list[str]:
        problems = []
        pos = 0
        for i, (start, end) in enumerate(self.sentences):
            if start != pos or end < start:
                problems.append(f"sentence {i} range [{start},{end}) does not continue at {pos}")
            pos = end
        if pos != len(self.tokens):
            problems.append(f"sentences cover {pos} tokens, document has {len(self.tokens)}")
        if len(self.graphs) != len(self.sentences):
            problems.append(f"{len(self.graphs)} graphs for {len(self.sentences)} sentences")
        for ci, cluster in enumerate(self.coref):
            for m in cluster:
                if not (0 <= m.start <= m.head <= m.end < len(self.tokens)):
                    problems.append(f"cluster {ci} mention {m} outside the document or head outside the span")
        return problems

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        graphs = []
        for gd in d["graphs"]:
            alignments = {k: list(v) for k, v in gd.get("alignments", {}).items()}
            graphs.append(parse_penman(gd["penman"], alignments))
        coref = [[Mention(int(m["start"]), int(m["end"]), int(m["head"])) for m in c["mentions"]] for c in d["coref"]]
        return cls(
            d["doc_id"],
            list(d["tokens"]),
            [(int(s), int(e)) for s, e in d["sentences"]],
            graphs,
            coref,
            d.get("meta", {}),
            [gd["penman"] for gd in d["graphs"]],
        )

    def to_dict(self) -> dict:
        texts = self.penman or [to_penman(g) for g in self.graphs]
        out = {
            "doc_id": self.doc_id,
            "tokens": self.tokens,
            "sentences": [list(s) for s in self.sentences],
            "graphs": [{"penman": t, "alignments": g.alignments} for t, g in zip(texts, self.graphs)],
            "coref": [{"mentions": [{"start": m.start, "end": m.end, "head": m.head} for m in c]} for c in self.coref],
        }
        if self.meta:
            out["meta"] = self.meta
        return out


@dataclass
class ProtoArg:
    role: str
    type: str
    node: str
    constant: bool


@dataclass
class ProtoEvent:
    node: str
    verb_sense: str
    args: list[ProtoArg]


def extract_events(g: AmrGraph) -> list[ProtoEvent]:
    """One proto-event per verb-sense node, one argument per outgoing edge."""
    events = []
    for node in g.nodes.values():
        if not node.is_verb_sense:
            continue
        args = [
            ProtoArg(label, g.nodes[t].concept, t, g.nodes[t].is_constant)
            for s, label, t in g.edges
            if s == node.id
        ]
        events.append(ProtoEvent(node.id, node.concept, args))
    return events


def select_headword(cluster: list[Mention], tokens: list[str]) -> str:
    """Most frequent head token over the mentions; ties go to the earliest mention."""
    if not cluster:
        raise ValueError("empty coreference cluster")
    ordered = sorted(cluster, key=lambda m: (m.start, m.end))
    counts = Counter(normalize_headword(tokens[m.head]) for m in ordered)
    best = max(counts.values())
    for m in ordered:
        word = normalize_headword(tokens[m.head])
        if counts[word] == best:
            return word
    raise AssertionError("unreachable")


def subtree_nodes(g: AmrGraph, root: str) -> set[str]:
    """Nodes under ``root`` along tree edges, not descending into other events."""
    seen = {root}
    stack = [root]
    while stack:
        n = stack.pop()
        for s, _, t in g.edges:
            if s != n or t in seen or (s, _, t) not in g.tree_edges:
                continue
            if g.nodes[t].is_verb_sense:
                continue
            seen.add(t)
            stack.append(t)
    return seen


@dataclass
class LinkReport:
    warnings: list[str] = field(default_factory=list)
    linked: int = 0
    unlinked: int = 0


def _mention_at(token: int, coref: list[list[Mention]]) -> int | None:
    """Cluster whose narrowest mention covers ``token``."""
    best = None
    for ci, cluster in enumerate(coref):
        for m in cluster:
            if m.start <= token <= m.end:
                width = m.end - m.start
                if best is None or width < best[0]:
                    best = (width, ci)
    return None if best is None else best[1]


def link_participants(
    events: list[ProtoEvent],
    original: AmrGraph,
    doc: Document,
    sentence: int,
    report: LinkReport | None = None,
) -> list[RichEvent]:
    """Attach entity ids and headwords to the participants of ``events``.

    Returns events with an empty protagonist role; chains fill it in.
    """
    report = report if report is not None else LinkReport()
    headwords = {ci: select_headword(c, doc.tokens) for ci, c in enumerate(doc.coref) if c}
    sent_start = doc.sentences[sentence][0]
    out = []
    for ev in events:
        verb_tokens = original.alignments.get(ev.node, [])
        anchor = (doc.doc_id, sentence, verb_tokens[0] if verb_tokens else sent_start)
        args = []
        for a in ev.args:
            if a.constant:
                args.append(Argument(a.role, a.type, a.type))
                continue
            if a.node not in original.nodes:
                report.warnings.append(f"{doc.doc_id}:{sentence}:{ev.verb_sense}: participant {a.node} not in original graph")
                args.append(Argument(a.role, normalize_headword(a.type), a.type))
                report.unlinked += 1
                continue
            related = sorted({t for n in subtree_nodes(original, a.node) for t in original.alignments.get(n, [])})
            cluster = _mention_at(related[-1], doc.coref) if related else None
            if cluster is not None and cluster in headwords:
                args.append(Argument(a.role, headwords[cluster], a.type, cluster))
                report.linked += 1
            else:
                own = original.alignments.get(a.node, [])
                word = doc.tokens[own[-1]] if own else a.type
                args.append(Argument(a.role, normalize_headword(word), a.type))
                report.unlinked += 1
        out.append(RichEvent(ev.verb_sense, "", tuple(args), anchor))
    return out


def protagonist_role(event: RichEvent, entity: int) -> str | None:
    roles = [a.role for a in event.args if a.entity_id == entity]
    if not roles:
        return None
    return min(roles, key=role_priority)


def build_chains(events: list[RichEvent], cfg: ExtractionConfig) -> tuple[list[NarrativeChain], Counter]:
    """Per-entity chains in textual order; short chains are dropped and counted."""
    dropped = Counter()
    ordered = sorted(events, key=lambda e: e.order_key)
    entities: dict[int, str] = {}
    for e in ordered:
        for a in e.args:
            if a.entity_id is not None:
                entities.setdefault(a.entity_id, a.headword)
    chains = []
    for entity in sorted(entities):
        chain_events = []
        last = None
        for e in ordered:
            role = protagonist_role(e, entity)
            if role is None:
                continue
            if e.order_key == last:
                dropped["same_anchor_event"] += 1
                log.info("dropping event %s sharing anchor %s in chain of entity %d", e.verb_sense, e.anchor, entity)
                continue
            last = e.order_key
            chain_events.append(e.with_protagonist(role))
        if len(chain_events) < cfg.chain_min_length:
            dropped["short_chain"] += 1
            log.info("dropping chain of entity %d with %d events", entity, len(chain_events))
            continue
        chains.append(NarrativeChain((entity, entities[entity]), tuple(chain_events)))
    return chains, dropped


@dataclass
class ExtractionResult:
    chains: list[NarrativeChain]
    events: list[RichEvent]
    report: dict


def _extract_doc(args) -> tuple[list[NarrativeChain], list[RichEvent], dict]:
    doc, cfg = args
    stats = RewriteStats()
    link = LinkReport()
    problems = doc.check()
    if problems:
        raise DataError(f"document {doc.doc_id}: " + "; ".join(problems))
    events = []
    for si, g in enumerate(doc.graphs):
        rewritten = rewrite_graph(g, cfg, stats)
        events.extend(link_participants(extract_events(rewritten), g, doc, si, link))
    chains, dropped = build_chains(events, cfg)
    report = {
        "events": len(events),
        "chains": len(chains),
        "dropped_edges": dict(stats.dropped),
        "collapsed_coordinations": stats.collapsed_coordinations,
        "inverted_edges": stats.inverted,
        "linked_participants": link.linked,
        "unlinked_participants": link.unlinked,
        "dropped": dict(dropped),
        "warnings": link.warnings,
    }
    return chains, events, report


def extract_corpus(docs: list[Document], cfg: ExtractionConfig, workers: int = 1) -> ExtractionResult:
    """Run extraction over documents; output order is doc_id order whatever ``workers`` is."""
    docs = sorted(docs, key=lambda d: d.doc_id)
    jobs = [(d, cfg) for d in docs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_doc, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_extract_doc(j) for j in jobs]
    chains, events = [], []
    total = Counter()
    dropped_edges = Counter()
    dropped = Counter()
    warnings = []
    for c, e, r in results:
        chains.extend(c)
        events.extend(e)
        for key in ("events", "chains", "collapsed_coordinations", "inverted_edges", "linked_participants", "unlinked_participants"):
            total[key] += r[key]
        dropped_edges.update(r["dropped_edges"])
        dropped.update(r["dropped"])
        warnings.extend(r["warnings"])
    report = {
        "documents": len(docs),
        **{k: total[k] for k in ("events", "chains", "collapsed_coordinations", "inverted_edges", "linked_participants", "unlinked_participants")},
        "dropped_edges_by_rule": {k: dropped_edges[k] for k in ("rule1", "rule2", "rule4")},
        "dropped": dict(sorted(dropped.items())),
        "warnings": warnings,
    }
    return ExtractionResult(chains, events, report)


def event_signature(event: RichEvent) -> tuple:
    """What a reader ignoring headwords can see of an event."""
    return (event.verb_sense, event.protagonist_role, frozenset((a.role, a.type) for a in event.args))


def make_distractor(event: RichEvent, protagonist: str, protagonist_type: str, rng: random.Random) -> RichEvent:
    """Re-cast a pool event around the protagonist: pick a role, put the protagonist's headword there."""
    roles = sorted({a.role for a in event.args}, key=role_priority)
    if not roles:
        return RichEvent(event.verb_sense, "ARG0", (Argument("ARG0", protagonist, protagonist_type),), event.anchor)
    role = roles[rng.randrange(len(roles))]
    args = list(event.args)
    j = next(i for i, a in enumerate(args) if a.role == role)
    args[j] = Argument(role, protagonist, args[j].type)
    return RichEvent(event.verb_sense, role, tuple(args), event.anchor)


def _protagonist_type(events, entity: int, fallback: str) -> str:
    for e in reversed(events):
        for a in e.args:
            if a.entity_id == entity:
                return a.type
    return fallback


def build_mcnc(chains: list[NarrativeChain], pool: list[RichEvent], cfg: ExtractionConfig) -> list[McncInstance]:
    """Sliding windows of ``ne + 1`` events per chain, with seeded distractors."""
    rng = random.Random(cfg.seed)
    width = cfg.ne + 1
    k = cfg.negatives_per_instance
    per_anchor = Counter(e.anchor for e in pool)
    instances = []
    for ci, chain in enumerate(chains):
        if len(chain.events) < width:
            log.info("chain %d of %s has %d < %d events, no instance", ci, chain.doc_id, len(chain.events), width)
            continue
        own = {e.anchor for e in chain.events}
        usable = len(pool) - sum(per_anchor[a] for a in own)
        if usable < k:
            raise DataError(f"event pool has {usable} usable events, need {k} distractors")
        entity, headword = chain.protagonist
        starts = range(0, len(chain.events) - width + 1, cfg.window_stride)
        if cfg.per_chain_cap is not None:
            starts = list(starts)[: cfg.per_chain_cap]
        for start in starts:
            window = chain.events[start : start + width]
            gold = window[-1]
            gold_signature = event_signature(gold)
            ptype = _protagonist_type(window[:-1], entity, "entity")
            distractors = []
            attempts = 0
            while len(distractors) < k:
                source = pool[rng.randrange(len(pool))]
                if source.anchor in own:
                    continue
                d = make_distractor(source, headword, ptype, rng)
                attempts += 1
                if cfg.reject_equivalent_distractors and event_signature(d) == gold_signature and attempts < 100 * k:
                    continue
                distractors.append(d)
            answer = rng.randrange(k + 1)
            candidates = distractors[:answer] + [gold] + distractors[answer:]
            instances.append(
                McncInstance(tuple(window[:-1]), tuple(candidates), answer, f"{chain.doc_id}/{entity}/{start}", headword)
            )
    return instances
