"""Desk-scale synthetic corpora in the extractor's input format.

Each document tells one latent script about one protagonist, one sentence per
script step.  Scripts are grouped into verb skeletons: scripts on the same
skeleton share verbs and role structure and differ only in the types of the
co-participants, while all names (protagonists included) come from one pool
independently of types.  Recovering the script therefore needs the type
symbols, and with the default single skeleton nothing else identifies it.

The sentences also carry the structures the rewriting rules exist for
(coordination, inverse roles, verb-verb edges, non-reserved roles) so the
pipeline is exercised end to end.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass

from rep.amr.extract import Document, Mention, event_signature, select_headword
from rep.amr.graph import parse_penman
from rep.core import Argument, McncInstance, RichEvent

VERB_LEMMAS = [
    "board", "leave", "sail", "strike", "sink", "rescue", "buy", "sell", "build", "repair",
    "visit", "write", "read", "attack", "defend", "hire", "fire", "marry", "sue", "win",
    "lose", "plant", "harvest", "cook", "serve", "teach", "study", "arrest", "charge", "release",
]
TYPE_NOUNS = [
    "boat", "ship", "iceberg", "island", "harbor", "company", "court", "judge", "house", "shop",
    "school", "teacher", "book", "letter", "army", "city", "farm", "field", "crop", "market",
    "bank", "loan", "car", "road", "hospital", "doctor", "police", "prison", "church", "team",
    "stadium", "trophy", "kitchen", "restaurant", "museum", "painting", "factory", "union", "newspaper", "station",
]
EXTRA_ROLES = ["location", "instrument", "manner", "topic", "destination", "medium", "path"]
SYLLABLES = ["ka", "lo", "mi", "ra", "te", "vu", "no", "si", "de", "ba", "zo", "pe"]


@dataclass
class SyntheticConfig:
    n_scripts: int = 5
    n_docs: int = 2000
    n_entities: int = 60  # size of the name pool
    noise: float = 0.0
    seed: int = 0
    script_length: int = 9
    verb_skeletons: int = 1
    types_per_script: int = 3
    decorate: bool = True

    def validate(self) -> None:
        if self.n_scripts < 1 or self.n_docs < 1:
            raise ValueError("synthetic corpus needs at least one script and one document")
        if self.n_entities < 2:
            raise ValueError("need at least two names, one for the protagonist and one for the others")
        if self.script_length < 1:
            raise ValueError("script_length must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        if self.n_scripts * self.types_per_script > len(TYPE_NOUNS):
            raise ValueError(f"at most {len(TYPE_NOUNS) // self.types_per_script} scripts with distinct type domains")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StepTemplate:
    verb_sense: str
    protagonist_role: str
    co_roles: tuple[str, ...]
    co_types: tuple[str, ...]
    negated: bool

    def signature(self) -> tuple:
        pairs = {(self.protagonist_role, "person")} | set(zip(self.co_roles, self.co_types))
        if self.negated:
            pairs.add(("polarity", "-"))
        return (self.verb_sense, self.protagonist_role, frozenset(pairs))


def make_scripts(cfg: SyntheticConfig) -> list[list[StepTemplate]]:
    rng = random.Random(f"scripts/{cfg.seed}")
    n_skel = max(1, min(cfg.verb_skeletons, cfg.n_scripts))
    skeletons = []
    for _ in range(n_skel):
        steps = []
        for _ in range(cfg.script_length):
            lemma = rng.choice(VERB_LEMMAS)
            sense = f"{lemma}-{rng.randint(1, 3):02d}"
            prot = rng.choices(["ARG0", "ARG1", "ARG2"], weights=[6, 3, 1])[0]
            first = "ARG1" if prot == "ARG0" else "ARG0"
            roles = [first]
            if rng.random() < 0.5:
                roles.append(rng.choice(EXTRA_ROLES))
            steps.append((sense, prot, tuple(roles), rng.random() < 0.15))
        skeletons.append(steps)
    nouns = list(TYPE_NOUNS)
    rng.shuffle(nouns)
    scripts = []
    for s in range(cfg.n_scripts):
        domain = nouns[s * cfg.types_per_script : (s + 1) * cfg.types_per_script]
        steps = []
        for sense, prot, roles, negated in skeletons[s % n_skel]:
            types = tuple(rng.choice(domain) for _ in roles)
            steps.append(StepTemplate(sense, prot, roles, types, negated))
        scripts.append(steps)
    return scripts


def _name_pool(n: int, rng: random.Random) -> list[str]:
    names = set()
    while len(names) < n:
        names.add("".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3))).capitalize())
    return sorted(names)


class _Sentence:
    """Accumulates tokens, PENMAN fragments and alignments for one sentence."""

    def __init__(self, offset: int):
        self.offset = offset
        self.tokens: list[str] = []
        self.align: dict[str, list[int]] = {}

    def token(self, text: str, node: str | None = None) -> int:
        idx = self.offset + len(self.tokens)
        self.tokens.append(text)
        if node is not None:
            self.align.setdefault(node, []).append(idx)
        return idx


def _named(var: str, concept: str, name: str) -> str:
    return f'({var} / {concept} :name ({var}n / name :op1 "{name}"))'


def generate_synthetic(cfg: SyntheticConfig) -> list[Document]:
    """Documents whose extracted chains follow the latent scripts.

    ``meta`` on each document records the script id and the intended chain.
    """
    cfg.validate()
    scripts = make_scripts(cfg)
    rng = random.Random(f"docs/{cfg.seed}")
    co_names = _name_pool(cfg.n_entities, random.Random(f"names/{cfg.seed}"))
    all_types = sorted({t for script in scripts for step in script for t in step.co_types})
    docs = []
    for d in range(cfg.n_docs):
        script_id = rng.randrange(cfg.n_scripts)
        doc_id = f"doc{d:06d}"
        name = rng.choice(co_names)
        pronoun = rng.choice(["he", "she"])
        pronoun_budget = (cfg.script_length - 1) // 2
        tokens: list[str] = []
        sentences = []
        penman = []
        alignments = []
        clusters: list[list[Mention]] = [[]]
        intended = []
        for si, step in enumerate(scripts[script_id]):
            sent = _Sentence(len(tokens))
            types = [
                rng.choice(all_types) if cfg.noise and rng.random() < cfg.noise else t for t in step.co_types
            ]
            # protagonist mention
            use_pronoun = si > 0 and pronoun_budget > 0 and rng.random() < 0.3
            if use_pronoun:
                pronoun_budget -= 1
                prot = "(p / person)"
                idx = sent.token(pronoun.capitalize(), "p")
            else:
                prot = _named("p", "person", name)
                idx = sent.token(name, "pn")
            clusters[0].append(Mention(idx, idx, idx))
            args = [Argument(step.protagonist_role, name.lower(), "person", 0)]

            verb_var = "v"
            lemma = step.verb_sense[:-3]
            negated = step.negated
            if negated:
                sent.token("did")
                sent.token("not")
            sent.token(lemma, verb_var)

            fragments = []
            coordinate = cfg.decorate and rng.random() < 0.15
            for k, (role, typ) in enumerate(zip(step.co_roles, types)):
                members = 2 if (coordinate and k == 0) else 1
                parts = []
                for m in range(members):
                    var = f"x{k}{m}"
                    co_name = rng.choice(co_names)
                    while co_name == name:
                        co_name = rng.choice(co_names)
                    if m:
                        sent.token("and")
                    sent.token("the")
                    sent.token(typ)
                    cidx = sent.token(co_name, f"{var}n")
                    clusters.append([Mention(cidx - 1, cidx, cidx)])
                    args.append(Argument(role, co_name.lower(), typ, len(clusters) - 1))
                    parts.append(_named(var, typ, co_name))
                if members == 1:
                    fragments.append(f":{role} {parts[0]}")
                else:
                    ops = " ".join(f":op{m + 1} {p}" for m, p in enumerate(parts))
                    fragments.append(f":{role} (a{k} / and {ops})")
            if negated:
                fragments.append(":polarity -")
                args.append(Argument("polarity", "-", "-"))
            if cfg.decorate and rng.random() < 0.2:
                fragments.append(":time (t / morning)")
                sent.token("in")
                sent.token("the")
                sent.token("morning", "t")
            if cfg.decorate and rng.random() < 0.2:
                # verb-verb edge, removed by rule 2; the adverb becomes an argumentless event
                fragments.append(":manner (h / hurry-01)")
                sent.token("hurriedly", "h")
            sent.token(".")

            body = " ".join(fragments)
            if cfg.decorate and rng.random() < 0.25:
                inner = f"({verb_var} / {step.verb_sense} {body})" if body else f"({verb_var} / {step.verb_sense})"
                text = prot[:-1] + f" :{step.protagonist_role}-of {inner})"
            else:
                text = f"({verb_var} / {step.verb_sense} :{step.protagonist_role} {prot}" + (f" {body})" if body else ")")
            start = len(tokens)
            tokens.extend(sent.tokens)
            sentences.append((start, len(tokens)))
            penman.append(text)
            alignments.append(sent.align)
            anchor_tok = sent.align[verb_var][0]
            intended.append(RichEvent(step.verb_sense, step.protagonist_role, tuple(args), (doc_id, si, anchor_tok)))

        graphs = [parse_penman(t, a) for t, a in zip(penman, alignments)]
        head = select_headword(clusters[0], tokens)
        intended = [_rename_protagonist(e, head) for e in intended]
        meta = {"script": script_id, "events": [e.to_dict() for e in intended]}
        docs.append(Document(doc_id, tokens, sentences, graphs, clusters, meta, penman))
    return docs


def _rename_protagonist(event: RichEvent, head: str) -> RichEvent:
    args = tuple(Argument(a.role, head, a.type, 0) if a.entity_id == 0 else a for a in event.args)
    return RichEvent(event.verb_sense, event.protagonist_role, args, event.anchor)


def script_oracle(instances: list[McncInstance], docs: list[Document], cfg: SyntheticConfig) -> list[int]:
    """Predict each answer by reading the latent script of the source document.

    The gold step is the one after the last history event; the prediction is the
    first candidate whose verb, protagonist role and (role, type) set match it.
    """
    scripts = make_scripts(cfg)
    by_id = {d.doc_id: d for d in docs}
    predictions = []
    for inst in instances:
        last = inst.history[-1]
        doc = by_id[last.anchor[0]]
        step = scripts[doc.meta["script"]][last.anchor[1] + 1]
        want = step.signature()
        match = [i for i, c in enumerate(inst.candidates) if event_signature(c) == want]
        predictions.append(match[0] if match else -1)
    return predictions
