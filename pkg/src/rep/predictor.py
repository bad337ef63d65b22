"""Temporal integration, candidate scoring and the training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rep.autodiff import tensor as T
from rep.autodiff.tensor import Tensor
from rep.core import McncInstance, Vocabs
from rep.encoder import (
    NO_DROPOUT,
    Dropout,
    EventBatch,
    Featurizer,
    ModelConfig,
    encode,
    init_encoder,
    init_transformer,
    pad_events,
    transformer,
)


def init_params(cfg: ModelConfig, sizes: dict[str, int]) -> dict[str, Tensor]:
    """Every trainable parameter, keyed by a stable name."""
    rng = np.random.default_rng(cfg.init_seed)
    arrays = init_encoder(cfg, sizes, rng)
    arrays["pos"] = (0.1 * rng.standard_normal((cfg.ne + 1, cfg.de))).astype(cfg.np_dtype)
    init_transformer(arrays, "tmp", cfg.temporal_layers, cfg.de, cfg.temporal_ffn, rng, cfg.np_dtype)
    return {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}


@dataclass
class InstanceBatch:
    events: EventBatch  # B * (ne + nc) events, history first then candidates, per instance
    answers: np.ndarray  # (B,)
    size: int


def featurize(instances: list[McncInstance], featurizer: Featurizer) -> InstanceBatch:
    feats = []
    for inst in instances:
        for e in inst.history:
            feats.append(featurizer.event(e, inst.protagonist))
        for e in inst.candidates:
            feats.append(featurizer.event(e, inst.protagonist))
    answers = np.array([inst.answer for inst in instances], dtype=np.int64)
    return InstanceBatch(pad_events(feats), answers, len(instances))


def temporal_integrate(
    history: Tensor,
    candidates: Tensor,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    dropout: Dropout = NO_DROPOUT,
) -> tuple[Tensor, Tensor]:
    """Run one chain per candidate: ``[e_1..e_ne, e_c] + positions`` through the temporal stack.

    ``history`` is (B, ne, de) and ``candidates`` (B, nc, de).  Returns the
    temporal-aware history vectors (B, nc, ne, de) and candidate vectors (B, nc, de).
    """
    b, ne, de = history.shape
    if ne != cfg.ne:
        raise ValueError(f"temporal_integrate: expected {cfg.ne} history events, got {ne}")
    nc = candidates.shape[1]
    hist = T.broadcast_to(history.reshape(b, 1, ne, de), (b, nc, ne, de))
    seq = T.concat([hist, candidates.reshape(b, nc, 1, de)], axis=2) + params["pos"]
    x = dropout(seq.reshape(b * nc, ne + 1, de))
    pad = np.zeros((b * nc, ne + 1), dtype=bool)
    x = transformer(x, pad, params, "tmp", cfg.temporal_layers, cfg.temporal_heads, dropout)
    x = x.reshape(b, nc, ne + 1, de)
    return x[:, :, :ne, :], x[:, :, ne, :]


def score_candidates(h_hist: Tensor, h_cand: Tensor) -> Tensor:
    """``s_c = sum_i alpha_i * s_i`` with ``s_i = -||h_i - h_c||`` and ``alpha_i = h_i.h_c / sqrt(de)``.

    ``h_hist`` is (..., ne, de) and ``h_cand`` (..., de); the result drops the last two axes.
    """
    de = h_cand.shape[-1]
    hc = h_cand.reshape(*h_cand.shape[:-1], 1, de)
    sim = -T.euclidean_distance(h_hist, hc, axis=-1)
    alpha = T.scale(T.sum_(h_hist * hc, axis=-1), 1.0 / math.sqrt(de))
    return T.sum_(alpha * sim, axis=-1)


def candidate_distribution(scores: np.ndarray | Tensor, axis: int = -1) -> np.ndarray:
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    return T.softmax(Tensor(s), axis=axis).data


def forward_scores(batch: InstanceBatch, params: dict[str, Tensor], cfg: ModelConfig, dropout: Dropout = NO_DROPOUT) -> Tensor:
    """Candidate scores (B, nc)."""
    b, ne, nc, de = batch.size, cfg.ne, cfg.nc, cfg.de
    vectors = encode(batch.events, params, cfg, dropout).reshape(b, ne + nc, de)
    history = vectors[:, :ne, :]
    candidates = vectors[:, ne:, :]
    if cfg.score_space == "raw":
        hist = T.broadcast_to(history.reshape(b, 1, ne, de), (b, nc, ne, de))
        return score_candidates(hist, candidates)
    h_hist, h_cand = temporal_integrate(history, candidates, params, cfg, dropout)
    return score_candidates(h_hist, h_cand)


def l2_penalty(params: dict[str, Tensor]) -> Tensor:
    total = None
    for p in params.values():
        term = T.sum_(p * p)
        total = term if total is None else total + term
    return total


def compute_loss(
    batch: InstanceBatch,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    l2: float,
    dropout: Dropout = NO_DROPOUT,
) -> Tensor:
    """Mean negative log-likelihood of the answers plus ``l2 * ||theta||^2``."""
    scores = forward_scores(batch, params, cfg, dropout)
    logp = T.log_softmax(scores, axis=-1)
    picked = logp[np.arange(batch.size), batch.answers]
    loss = T.scale(T.sum_(picked), -1.0 / batch.size)
    if l2:
        loss = loss + T.scale(l2_penalty(params), l2)
    if not np.isfinite(loss.data):
        finite = scores.data[np.isfinite(scores.data)]
        span = f"[{finite.min():.3g}, {finite.max():.3g}]" if finite.size else "all non-finite"
        raise FloatingPointError(f"non-finite loss {float(loss.data)} on a batch of {batch.size}; finite score range {span}")
    return loss


class Model:
    """Parameters, configuration and vocabularies of one predictor."""

    def __init__(self, cfg: ModelConfig, vocabs: Vocabs, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.vocabs = vocabs
        self.params = params if params is not None else init_params(cfg, vocabs.sizes())
        self.featurizer = Featurizer(vocabs, cfg)

    def featurize(self, instances: list[McncInstance]) -> InstanceBatch:
        return featurize(instances, self.featurizer)

    def probabilities(self, instances: list[McncInstance]) -> np.ndarray:
        scores = forward_scores(self.featurize(instances), self.params, self.cfg)
        return candidate_distribution(scores.data.astype(np.float64))

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())
