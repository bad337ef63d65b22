"""Rich event encoder and the additive fusion variant.

An event is embedded as one predicate vector and one vector per argument::

    p   = W1' v + W2' d + b
    a_j = W1' r_j + W2' w_j + W3' t_j + b

The rich encoder runs a transformer (no positional encodings: the arguments
form a set) over ``[p, a_1 .. a_L]`` and keeps the output at the predicate
slot.  The fusion encoder returns ``tanh(p + sum_j a_j)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from rep.autodiff import tensor as T
from rep.autodiff.tensor import ShapeError, Tensor
from rep.core import BASIC_ROLES, PAD, RichEvent, Vocabs, verb_lemma

ABLATIONS = ("S", "T", "RT")


@dataclass
class ModelConfig:
    dw: int = 300
    de: int = 128
    enc_layers: int = 2
    enc_heads: int = 8
    enc_ffn: int = 1024
    temporal_layers: int = 2
    temporal_heads: int = 16
    temporal_ffn: int = 1024
    ne: int = 8
    nc: int = 5
    dropout: float = 0.1
    variant: str = "rich"
    ablations: tuple[str, ...] = ()
    score_space: str = "temporal"
    tied: bool = True
    drop_protagonist: bool = False
    max_args: int | None = None
    dtype: str = "float32"
    init_seed: int = 0

    def __post_init__(self):
        self.ablations = tuple(sorted(set(self.ablations)))
        self.validate()

    def validate(self) -> None:
        for name in ("dw", "de", "enc_heads", "enc_ffn", "temporal_heads", "temporal_ffn", "ne", "nc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.enc_layers not in range(0, 16) or self.temporal_layers not in range(0, 16):
            raise ValueError("layer counts must lie in [0, 15]")
        if self.de % self.enc_heads:
            raise ValueError(f"de={self.de} is not divisible by enc_heads={self.enc_heads}")
        if self.de % self.temporal_heads:
            raise ValueError(f"de={self.de} is not divisible by temporal_heads={self.temporal_heads}")
        if self.nc < 2:
            raise ValueError("need at least two candidates")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.variant not in ("rich", "fusion"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.score_space not in ("temporal", "raw"):
            raise ValueError(f"unknown score space {self.score_space!r}")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablations {sorted(unknown)}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.max_args is not None and self.max_args < 0:
            raise ValueError("max_args must be non-negative")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def use_types(self) -> bool:
        return not ({"T", "RT"} & set(self.ablations))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["ablations"] = tuple(d.get("ablations", ()))
        return cls(**d)


# ------------------------------------------------------------------ features


@dataclass
class EventBatch:
    """Index arrays for N events padded to L arguments; ``arg_mask`` is True on real arguments."""

    verb: np.ndarray  # (N,)
    prot_role: np.ndarray  # (N,)
    roles: np.ndarray  # (N, L)
    heads: np.ndarray  # (N, L)
    types: np.ndarray  # (N, L)
    arg_mask: np.ndarray  # (N, L) bool

    def __len__(self) -> int:
        return len(self.verb)

    @property
    def max_args(self) -> int:
        return self.roles.shape[1]


@dataclass
class EventFeatures:
    verb: int
    prot_role: int
    roles: list[int] = field(default_factory=list)
    heads: list[int] = field(default_factory=list)
    types: list[int] = field(default_factory=list)


class Featurizer:
    """Maps events to vocabulary ids, applying the ablations that act on inputs."""

    def __init__(self, vocabs: Vocabs, cfg: ModelConfig):
        self.vocabs = vocabs
        self.cfg = cfg

    def event(self, e: RichEvent, protagonist: str = "") -> EventFeatures:
        v = self.vocabs
        verb = verb_lemma(e.verb_sense) if "S" in self.cfg.ablations else e.verb_sense
        f = EventFeatures(v.verb_sense.lookup(verb), v.role.lookup(e.protagonist_role) if e.protagonist_role else PAD)
        for a in e.args:
            if "RT" in self.cfg.ablations and a.role not in BASIC_ROLES:
                continue
            if self.cfg.drop_protagonist and a.role == e.protagonist_role and a.headword == protagonist:
                continue
            f.roles.append(v.role.lookup(a.role))
            f.heads.append(v.headword.lookup(a.headword))
            f.types.append(v.type.lookup(a.type))
        if self.cfg.max_args is not None:
            del f.roles[self.cfg.max_args :], f.heads[self.cfg.max_args :], f.types[self.cfg.max_args :]
        return f


def pad_events(feats: list[EventFeatures], min_args: int = 0) -> EventBatch:
    n = len(feats)
    width = max([len(f.roles) for f in feats] + [min_args])
    roles = np.zeros((n, width), dtype=np.int64)
    heads = np.zeros((n, width), dtype=np.int64)
    types = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=bool)
    for i, f in enumerate(feats):
        k = len(f.roles)
        roles[i, :k] = f.roles
        heads[i, :k] = f.heads
        types[i, :k] = f.types
        mask[i, :k] = True
    verb = np.array([f.verb for f in feats], dtype=np.int64)
    prot = np.array([f.prot_role for f in feats], dtype=np.int64)
    return EventBatch(verb, prot, roles, heads, types, mask)


# ---------------------------------------------------------------- parameters


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_transformer(params: dict, prefix: str, layers: int, d: int, ffn: int, rng, dtype) -> None:
    for layer in range(layers):
        p = f"{prefix}.{layer}"
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{p}.{w}"] = _glorot(rng, d, d, dtype)
        params[f"{p}.ln1.g"] = np.ones(d, dtype)
        params[f"{p}.ln1.b"] = np.zeros(d, dtype)
        params[f"{p}.ff.w1"] = _glorot(rng, d, ffn, dtype)
        params[f"{p}.ff.b1"] = np.zeros(ffn, dtype)
        params[f"{p}.ff.w2"] = _glorot(rng, ffn, d, dtype)
        params[f"{p}.ff.b2"] = np.zeros(d, dtype)
        params[f"{p}.ln2.g"] = np.ones(d, dtype)
        params[f"{p}.ln2.b"] = np.zeros(d, dtype)


def init_encoder(cfg: ModelConfig, sizes: dict[str, int], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Encoder parameter arrays; nothing here depends on how many arguments events have."""
    dt = cfg.np_dtype
    params = {
        "emb.verb": rng.standard_normal((sizes["verb_sense"], cfg.dw)).astype(dt),
        "emb.role": rng.standard_normal((sizes["role"], cfg.dw)).astype(dt),
        "emb.head": rng.standard_normal((sizes["headword"], cfg.dw)).astype(dt),
        "emb.type": rng.standard_normal((sizes["type"], cfg.dw)).astype(dt),
        "proj.w1": _glorot(rng, cfg.dw, cfg.de, dt),
        "proj.w2": _glorot(rng, cfg.dw, cfg.de, dt),
        "proj.w3": _glorot(rng, cfg.dw, cfg.de, dt),
        "proj.b": np.zeros(cfg.de, dt),
    }
    if not cfg.tied:
        params["proj.pred.w1"] = _glorot(rng, cfg.dw, cfg.de, dt)
        params["proj.pred.w2"] = _glorot(rng, cfg.dw, cfg.de, dt)
        params["proj.pred.b"] = np.zeros(cfg.de, dt)
    if cfg.variant == "rich":
        init_transformer(params, "enc", cfg.enc_layers, cfg.de, cfg.enc_ffn, rng, dt)
    return params


# ---------------------------------------------------------------- forward


class Dropout:
    """Source of explicit keep-masks; ``rng=None`` disables dropout."""

    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        self.rate = rate
        self.rng = rng

    @property
    def active(self) -> bool:
        return self.rng is not None and self.rate > 0

    def __call__(self, x: Tensor) -> Tensor:
        if not self.active:
            return x
        mask = self.rng.random(x.shape) >= self.rate
        return T.dropout(x, mask, self.rate)


NO_DROPOUT = Dropout(0.0)


def embed_events(batch: EventBatch, params: dict[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Predicate vectors (N, de) and argument vectors (N, L, de)."""
    for name, idx, table in (
        ("verb", batch.verb, "emb.verb"),
        ("role", batch.prot_role, "emb.role"),
        ("role", batch.roles, "emb.role"),
        ("headword", batch.heads, "emb.head"),
        ("type", batch.types, "emb.type"),
    ):
        if idx.size and (idx.min() < 0 or idx.max() >= params[table].shape[0]):
            raise IndexError(f"{name} index out of range for {table} with {params[table].shape[0]} rows")
    w1, w2, w3, b = params["proj.w1"], params["proj.w2"], params["proj.w3"], params["proj.b"]
    pw1, pw2, pb = (w1, w2, b) if cfg.tied else (params["proj.pred.w1"], params["proj.pred.w2"], params["proj.pred.b"])
    v = T.embedding_gather(params["emb.verb"], batch.verb)
    d = T.embedding_gather(params["emb.role"], batch.prot_role)
    p = v @ pw1 + d @ pw2 + pb
    r = T.embedding_gather(params["emb.role"], batch.roles)
    w = T.embedding_gather(params["emb.head"], batch.heads)
    a = r @ w1 + w @ w2
    if cfg.use_types:
        a = a + T.embedding_gather(params["emb.type"], batch.types) @ w3
    return p, a + b


def embed_event(features: EventFeatures, params: dict[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Single-event form of :func:`embed_events`: ``p`` (de,) and ``A`` (L, de)."""
    p, a = embed_events(pad_events([features]), params, cfg)
    return p[0], a[0]


def multi_head_self_attention(
    x: Tensor,
    key_pad: np.ndarray,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
    dropout: Dropout = NO_DROPOUT,
    attention: list | None = None,
) -> Tensor:
    """One post-norm transformer layer over ``x`` (N, S, d).

    ``key_pad`` (N, S) is True at padded slots, which no query may attend to.
    Attention probabilities (N, heads, S, S) are appended to ``attention``.
    """
    n, s, d = x.shape
    if key_pad.shape != (n, s):
        raise ShapeError(f"attention: mask {key_pad.shape} does not match input {x.shape}")
    if key_pad.all(axis=1).any():
        raise ValueError("attention: every position of a sequence is masked")
    dk = d // heads

    def split_heads(t: Tensor) -> Tensor:
        return T.transpose(t.reshape(n, s, heads, dk), (0, 2, 1, 3))

    q = split_heads(x @ params[f"{prefix}.wq"])
    k = split_heads(x @ params[f"{prefix}.wk"])
    v = split_heads(x @ params[f"{prefix}.wv"])
    scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dk))
    if key_pad.any():
        scores = T.masked_fill(scores, key_pad[:, None, None, :])
    probs = T.softmax(scores, axis=-1)
    if attention is not None:
        attention.append(probs.data.copy())
    ctx = T.transpose(probs @ v, (0, 2, 1, 3)).reshape(n, s, d)
    out = ctx @ params[f"{prefix}.wo"]
    x = T.layer_norm(x + dropout(out), params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    hidden = T.relu(x @ params[f"{prefix}.ff.w1"] + params[f"{prefix}.ff.b1"])
    ff = hidden @ params[f"{prefix}.ff.w2"] + params[f"{prefix}.ff.b2"]
    return T.layer_norm(x + dropout(ff), params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


def transformer(x, key_pad, params, prefix, layers, heads, dropout=NO_DROPOUT, attention=None) -> Tensor:
    for layer in range(layers):
        x = multi_head_self_attention(x, key_pad, params, f"{prefix}.{layer}", heads, dropout, attention)
    return x


def encode_rich(
    batch: EventBatch,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    dropout: Dropout = NO_DROPOUT,
    attention: list | None = None,
) -> Tensor:
    """Event vectors (N, de) read off the predicate slot."""
    p, a = embed_events(batch, params, cfg)
    n = len(batch)
    x = T.concat([p.reshape(n, 1, cfg.de), a], axis=1)
    key_pad = np.concatenate([np.zeros((n, 1), dtype=bool), ~batch.arg_mask], axis=1)
    x = transformer(dropout(x), key_pad, params, "enc", cfg.enc_layers, cfg.enc_heads, dropout, attention)
    return x[:, 0, :]


def encode_fusion(batch: EventBatch, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    p, a = embed_events(batch, params, cfg)
    keep = batch.arg_mask[:, :, None].astype(p.dtype)
    return T.tanh(p + T.sum_(a * keep, axis=1))


def encode(batch, params, cfg, dropout=NO_DROPOUT, attention=None) -> Tensor:
    if cfg.variant == "fusion":
        return encode_fusion(batch, params, cfg)
    return encode_rich(batch, params, cfg, dropout, attention)


@dataclass
class EncodedEvent:
    vector: np.ndarray
    # per layer, an (heads, L+1, L+1) array
    attention: list[np.ndarray] | None = None


def encode_event_rich(features: EventFeatures, params, cfg: ModelConfig, dropout: Dropout = NO_DROPOUT, record: bool = False) -> EncodedEvent:
    attention = [] if record else None
    out = encode_rich(pad_events([features]), params, cfg, dropout, attention)
    return EncodedEvent(out.data[0], [a[0] for a in attention] if record else None)


def encode_event_fusion(features: EventFeatures, params, cfg: ModelConfig) -> np.ndarray:
    return encode_fusion(pad_events([features]), params, cfg).data[0]
