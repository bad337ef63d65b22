"""Domain types shared by the extractor and the predictor.

Events, chains and MCNC instances are immutable dataclasses that serialize to
flat JSON records (one per line in ``.jsonl`` files).  Symbol vocabularies map
text to dense integer ids with ``PAD=0`` and ``UNK=1`` reserved in every
namespace.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

PAD, UNK = 0, 1
PAD_SYMBOL, UNK_SYMBOL = "<pad>", "<unk>"

NAMESPACES = ("verb_sense", "role", "headword", "type")

CORE_ROLES = ("ARG0", "ARG1", "ARG2", "ARG3", "ARG4")
OPERATOR_ROLES = ("op1", "op2", "op3", "op4")
SPATIAL_ROLES = ("location", "destination", "path")
MEANS_ROLES = ("instrument", "manner", "topic", "medium")
MODIFIER_ROLES = ("mod", "poss", "polarity")
RESERVED_ROLES = frozenset(CORE_ROLES + OPERATOR_ROLES + SPATIAL_ROLES + MEANS_ROLES + MODIFIER_ROLES)

# the three roles kept by the -RT ablation
BASIC_ROLES = frozenset(("ARG0", "ARG1", "ARG2"))

VERB_SENSE_RE = re.compile(r"^[^\s()/:]+-\d\d$")


class DataError(ValueError):
    """Raised when input data violates a contract (bad records, digests, sizes)."""


def is_verb_sense(concept: str) -> bool:
    return bool(VERB_SENSE_RE.match(concept))


def verb_lemma(verb_sense: str) -> str:
    """``fall-01`` -> ``fall``; bare lemmas pass through unchanged."""
    if is_verb_sense(verb_sense):
        return verb_sense[:-3]
    return verb_sense


def normalize_headword(text: str) -> str:
    return text.strip().lower()


def role_priority(role: str) -> tuple[int, str]:
    """Sort key: ARG0 < ARG1 < ... < ARG4 < every other role alphabetically."""
    if role in CORE_ROLES:
        return (CORE_ROLES.index(role), "")
    return (len(CORE_ROLES), role)


class SymbolVocab:
    """Append-only text <-> id table for one namespace."""

    def __init__(self, namespace: str, entries: Iterable[str] = ()):
        if namespace not in NAMESPACES:
            raise ValueError(f"unknown vocabulary namespace {namespace!r}")
        self.namespace = namespace
        self.entries: list[str] = [PAD_SYMBOL, UNK_SYMBOL]
        self.index: dict[str, int] = {PAD_SYMBOL: PAD, UNK_SYMBOL: UNK}
        self.frozen = False
        self._lock = threading.Lock()
        for symbol in entries:
            if symbol in (PAD_SYMBOL, UNK_SYMBOL):
                continue
            self.intern(symbol)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    def intern(self, symbol: str, frozen: bool | None = None) -> int:
        if not symbol:
            raise ValueError("cannot intern an empty symbol")
        idx = self.index.get(symbol)
        if idx is not None:
            return idx
        if self.frozen if frozen is None else frozen:
            return UNK
        with self._lock:
            idx = self.index.get(symbol)
            if idx is None:
                idx = len(self.entries)
                self.entries.append(symbol)
                self.index[symbol] = idx
        return idx

    def lookup(self, symbol: str) -> int:
        return self.index.get(symbol, UNK)

    def symbol(self, idx: int) -> str:
        return self.entries[idx]

    def freeze(self) -> "SymbolVocab":
        self.frozen = True
        return self

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for entry in self.entries:
                f.write(entry + "\n")

    @classmethod
    def load(cls, path: str | Path, namespace: str) -> "SymbolVocab":
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:2] != [PAD_SYMBOL, UNK_SYMBOL]:
            raise DataError(f"{path}: vocabulary must start with {PAD_SYMBOL} and {UNK_SYMBOL}")
        if len(set(lines)) != len(lines):
            raise DataError(f"{path}: duplicate symbols in vocabulary")
        vocab = cls(namespace, lines)
        return vocab.freeze()


@dataclass
class Vocabs:
    """The four symbol spaces used by the encoder."""

    verb_sense: SymbolVocab = field(default_factory=lambda: SymbolVocab("verb_sense"))
    role: SymbolVocab = field(default_factory=lambda: SymbolVocab("role"))
    headword: SymbolVocab = field(default_factory=lambda: SymbolVocab("headword"))
    type: SymbolVocab = field(default_factory=lambda: SymbolVocab("type"))

    def __iter__(self) -> Iterator[SymbolVocab]:
        return iter((self.verb_sense, self.role, self.headword, self.type))

    def freeze(self) -> "Vocabs":
        for v in self:
            v.freeze()
        return self

    @property
    def frozen(self) -> bool:
        return all(v.frozen for v in self)

    def sizes(self) -> dict[str, int]:
        return {v.namespace: len(v) for v in self}

    def digest(self) -> str:
        h = hashlib.sha256()
        for v in self:
            h.update(v.namespace.encode())
            h.update(b"\x00")
            h.update("\n".join(v.entries).encode("utf-8"))
            h.update(b"\x01")
        return h.hexdigest()

    def to_dict(self) -> dict[str, list[str]]:
        return {v.namespace: list(v.entries) for v in self}

    @classmethod
    def from_dict(cls, d: dict[str, list[str]]) -> "Vocabs":
        return cls(**{ns: SymbolVocab(ns, d[ns]) for ns in NAMESPACES}).freeze()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for v in self:
            v.save(directory / f"{v.namespace}.txt")

    @classmethod
    def load(cls, directory: str | Path) -> "Vocabs":
        directory = Path(directory)
        return cls(**{ns: SymbolVocab.load(directory / f"{ns}.txt", ns) for ns in NAMESPACES})

    def add_event(self, event: "RichEvent") -> None:
        self.verb_sense.intern(event.verb_sense)
        self.verb_sense.intern(verb_lemma(event.verb_sense))
        if event.protagonist_role:
            self.role.intern(event.protagonist_role)
        for arg in event.args:
            self.role.intern(arg.role)
            self.headword.intern(arg.headword)
            self.type.intern(arg.type)


@dataclass(frozen=True)
class Argument:
    role: str
    headword: str
    type: str
    entity_id: int | None = None

    def to_dict(self) -> dict:
        return {"role": self.role, "headword": self.headword, "type": self.type, "entity_id": self.entity_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Argument":
        return cls(d["role"], d["headword"], d["type"], d.get("entity_id"))


@dataclass(frozen=True)
class RichEvent:
    verb_sense: str
    protagonist_role: str
    args: tuple[Argument, ...] = ()
    anchor: tuple[str, int, int] = ("", 0, 0)

    def __post_init__(self):
        # accept lists from callers and JSON
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "anchor", tuple(self.anchor))

    @property
    def order_key(self) -> tuple[int, int]:
        return (self.anchor[1], self.anchor[2])

    def with_protagonist(self, role: str) -> "RichEvent":
        return RichEvent(self.verb_sense, role, self.args, self.anchor)

    def to_dict(self) -> dict:
        return {
            "verb_sense": self.verb_sense,
            "protagonist_role": self.protagonist_role,
            "args": [a.to_dict() for a in self.args],
            "anchor": list(self.anchor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RichEvent":
        doc_id, sent, tok = d["anchor"]
        return cls(
            d["verb_sense"],
            d["protagonist_role"],
            tuple(Argument.from_dict(a) for a in d["args"]),
            (doc_id, int(sent), int(tok)),
        )


@dataclass(frozen=True)
class NarrativeChain:
    protagonist: tuple[int, str]
    events: tuple[RichEvent, ...]

    def __post_init__(self):
        object.__setattr__(self, "protagonist", tuple(self.protagonist))
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def doc_id(self) -> str:
        return self.events[0].anchor[0] if self.events else ""

    def to_dict(self) -> dict:
        return {"protagonist": list(self.protagonist), "events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> "NarrativeChain":
        entity_id, headword = d["protagonist"]
        return cls((int(entity_id), headword), tuple(RichEvent.from_dict(e) for e in d["events"]))


@dataclass(frozen=True)
class McncInstance:
    history: tuple[RichEvent, ...]
    candidates: tuple[RichEvent, ...]
    answer: int
    instance_id: str = ""
    protagonist: str = ""

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "candidates", tuple(self.candidates))

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "protagonist": self.protagonist,
            "history": [e.to_dict() for e in self.history],
            "candidates": [e.to_dict() for e in self.candidates],
            "answer": self.answer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "McncInstance":
        return cls(
            tuple(RichEvent.from_dict(e) for e in d["history"]),
            tuple(RichEvent.from_dict(e) for e in d["candidates"]),
            int(d["answer"]),
            d.get("instance_id", ""),
            d.get("protagonist", ""),
        )


@dataclass(frozen=True)
class TaskConfig:
    ne: int = 8
    nc: int = 5
    roles: frozenset = RESERVED_ROLES
    # when False, instances are expected to carry the protagonist as an argument too
    drop_protagonist: bool = False
    allow_bare_lemmas: bool = False


def _event_violations(event: RichEvent, where: str, cfg: TaskConfig, protagonist: str) -> list[str]:
    out = []
    if not is_verb_sense(event.verb_sense) and not (cfg.allow_bare_lemmas and event.verb_sense):
        out.append(f"{where}: verb_sense {event.verb_sense!r} is not of the form lemma-NN")
    if not event.protagonist_role:
        out.append(f"{where}: protagonist_role is missing")
    elif event.protagonist_role not in cfg.roles:
        out.append(f"{where}: protagonist_role {event.protagonist_role!r} is not a reserved role")
    for j, arg in enumerate(event.args):
        if arg.role not in cfg.roles:
            out.append(f"{where}.args[{j}]: role {arg.role!r} is not a reserved role")
        if not arg.headword or not arg.type:
            out.append(f"{where}.args[{j}]: empty headword or type")
    if protagonist and not cfg.drop_protagonist and event.protagonist_role:
        if not any(a.role == event.protagonist_role and a.headword == protagonist for a in event.args):
            out.append(f"{where}: protagonist {protagonist!r} absent from role {event.protagonist_role}")
    return out


def validate_instance(inst: McncInstance, cfg: TaskConfig = TaskConfig()) -> list[str]:
    """Every violated invariant of ``inst`` as a message; empty iff valid."""
    report = []
    if len(inst.history) != cfg.ne:
        report.append(f"history length {len(inst.history)} != {cfg.ne}")
    if len(inst.candidates) != cfg.nc:
        report.append(f"candidate count {len(inst.candidates)} != {cfg.nc}")
    if not 0 <= inst.answer < len(inst.candidates):
        report.append(f"answer {inst.answer} out of range for {len(inst.candidates)} candidates")
    for i, e in enumerate(inst.history):
        report.extend(_event_violations(e, f"history[{i}]", cfg, inst.protagonist))
    for i, e in enumerate(inst.candidates):
        report.extend(_event_violations(e, f"candidates[{i}]", cfg, inst.protagonist))
    return report


def write_jsonl(path: str | Path, records: Iterable) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            d = rec.to_dict() if hasattr(rec, "to_dict") else rec
            f.write(json.dumps(d, ensure_ascii=False, sort_keys=False) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path, cls=None) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(cls.from_dict(d) if cls is not None else d)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from exc
    return out
