"""Independent reference implementations used as test oracles.

These are deliberately naive (sets, loops, plain numpy) and share no code
with the package beyond the data classes.
"""

from __future__ import annotations

import math
import random
import re

import numpy as np

from rep.amr.graph import AmrGraph

RESERVED = {f"ARG{i}" for i in range(5)} | {f"op{i}" for i in range(1, 5)} | {
    "location", "destination", "path", "instrument", "manner", "topic", "medium", "mod", "poss", "polarity",
}


def _is_verb(concept: str, constant: bool) -> bool:
    return not constant and re.fullmatch(r"[a-z][a-z-]*-\d\d", concept) is not None


def brute_force_rewrite(g: AmrGraph) -> tuple[set[str], set[tuple[str, str, str]]]:
    """Rules 1-4 on an edge set, collapsing coordination nodes in sorted-id order."""
    nodes = {n: (v.concept, v.is_constant) for n, v in g.nodes.items()}
    edges = set(g.edges)
    collapsed = set()
    changed = True
    while changed:
        changed = False
        for c in sorted(nodes):
            concept, const = nodes[c]
            if concept != "and" or const:
                continue
            incoming = {e for e in edges if e[2] == c and e[0] != c}
            if not incoming:
                continue
            kids = {t for s, lab, t in edges if s == c and re.fullmatch(r"op\d+", lab) and t != c}
            ops = {e for e in edges if e[0] == c and re.fullmatch(r"op\d+", e[1])}
            edges -= incoming | ops
            edges |= {(s, lab, y) for s, lab, _ in incoming for y in kids if y != s}
            collapsed.add(c)
            changed = True
            break
    for c in collapsed:
        if c != g.root and not any(c in (s, t) for s, _, t in edges):
            del nodes[c]
    verbs = {n for n, (concept, const) in nodes.items() if _is_verb(concept, const)}
    edges = {e for e in edges if not (e[0] in verbs and e[2] in verbs)}
    flipped = set()
    for s, lab, t in edges:
        m = re.fullmatch(r"(ARG\d)-of", lab)
        flipped.add((t, m.group(1), s) if m else (s, lab, t))
    return set(nodes), {e for e in flipped if e[1] in RESERVED}


CONCEPTS = ["see-01", "strike-01", "sink-01", "run-02", "want-01", "and", "and", "person", "boat", "city", "hurry", "big"]
LABELS = ["ARG0", "ARG1", "ARG2", "ARG1-of", "ARG0-of", "op1", "op2", "op3", "time", "manner", "mod", "location", "name", "polarity", "quant"]


def random_graph(rng: random.Random, max_nodes: int = 12) -> AmrGraph:
    g = AmrGraph()
    n = rng.randint(1, max_nodes)
    ids = [f"n{i}" for i in range(n)]
    for i in ids:
        if rng.random() < 0.1:
            g.add_node(i, rng.choice(["-", "Jack", "5"]), constant=True)
        else:
            g.add_node(i, rng.choice(CONCEPTS))
    g.root = ids[0]
    for k in range(1, n):
        parent = ids[rng.randrange(k)]
        if g.nodes[parent].is_constant:
            parent = ids[0]
        g.edges.append((parent, rng.choice(LABELS), ids[k]))
    for _ in range(rng.randint(0, n)):
        s, t = rng.choice(ids), rng.choice(ids)
        e = (s, rng.choice(LABELS), t)
        if not g.nodes[s].is_constant and e not in g.edges:
            g.edges.append(e)
    return g


# --------------------------------------------------------------- numerics


def softmax_loop(x: list[float]) -> list[float]:
    m = max(x)
    ex = [math.exp(v - m) for v in x]
    z = sum(ex)
    return [v / z for v in ex]


def score_loop(h_hist: np.ndarray, h_cand: np.ndarray) -> float:
    """Candidate score with explicit loops: sum_i (h_i . h_c / sqrt(d)) * -||h_i - h_c||."""
    d = len(h_cand)
    total = 0.0
    for h in h_hist:
        dot = sum(float(a) * float(b) for a, b in zip(h, h_cand))
        dist = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(h, h_cand)))
        total += dot / math.sqrt(d) * -dist
    return total


def attention_loop(x: np.ndarray, wq, wk, wv, heads: int, pad: np.ndarray) -> np.ndarray:
    """Multi-head attention context (before the output projection) for one sequence."""
    s, d = x.shape
    dk = d // heads
    q, k, v = x @ wq, x @ wk, x @ wv
    out = np.zeros((s, d))
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        for i in range(s):
            logits = [float(q[i, sl] @ k[j, sl]) / math.sqrt(dk) if not pad[j] else -np.inf for j in range(s)]
            m = max(l for l in logits if l != -np.inf)
            w = [math.exp(l - m) if l != -np.inf else 0.0 for l in logits]
            z = sum(w)
            for j in range(s):
                out[i, sl] += w[j] / z * v[j, sl]
    return out


def layer_norm_loop(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    for i, row in enumerate(x.reshape(-1, x.shape[-1])):
        mu = sum(row) / len(row)
        var = sum((r - mu) ** 2 for r in row) / len(row)
        out.reshape(-1, x.shape[-1])[i] = [(r - mu) / math.sqrt(var + eps) * gg + bb for r, gg, bb in zip(row, g, b)]
    return out
