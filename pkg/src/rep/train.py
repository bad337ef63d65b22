"""Dataset assembly, the training loop and evaluation."""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from rep.amr.extract import build_mcnc
from rep.amr.rewrite import ExtractionConfig
from rep.autodiff.checkpoint import Checkpoint
from rep.autodiff.optim import AdamState, adam_step
from rep.autodiff.tensor import Tape, Tensor, backward
from rep.core import (
    BASIC_ROLES,
    DataError,
    McncInstance,
    NarrativeChain,
    RichEvent,
    TaskConfig,
    Vocabs,
    read_jsonl,
    validate_instance,
    write_jsonl,
)
from rep.encoder import Dropout, ModelConfig, encode_rich, pad_events
from rep.predictor import InstanceBatch, Model, compute_loss, forward_scores, candidate_distribution

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    l2: float = 1e-5
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0 or self.l2 < 0:
            raise ValueError("lr, batch_size and epochs must be positive and l2 non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    instances: list[McncInstance]
    vocab_digest: str
    name: str = ""

    def __len__(self) -> int:
        return len(self.instances)


# ------------------------------------------------------------------- datasets


def split_chains(chains: list[NarrativeChain], fractions: tuple[float, float, float], seed: int) -> dict[str, list[NarrativeChain]]:
    """Partition chains by document so no document feeds two splits."""
    docs = sorted({c.doc_id for c in chains})
    random.Random(f"split/{seed}").shuffle(docs)
    total = sum(fractions)
    n_train = round(len(docs) * fractions[0] / total)
    n_dev = round(len(docs) * fractions[1] / total)
    assign = {}
    for i, d in enumerate(docs):
        assign[d] = "train" if i < n_train else "dev" if i < n_train + n_dev else "test"
    out = {s: [] for s in SPLITS}
    for c in chains:
        out[assign[c.doc_id]].append(c)
    return out


def build_vocabs(instances: list[McncInstance]) -> Vocabs:
    vocabs = Vocabs()
    for inst in instances:
        for e in inst.history + inst.candidates:
            vocabs.add_event(e)
    return vocabs.freeze()


def build_dataset(
    chains: list[NarrativeChain],
    pool: list[RichEvent],
    cfg: ExtractionConfig,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> tuple[dict[str, list[McncInstance]], Vocabs]:
    """MCNC instances per split (distractors from the split's own documents) and a vocabulary frozen on train."""
    parts = split_chains(chains, fractions, cfg.seed)
    splits = {}
    for i, name in enumerate(SPLITS):
        docs = {c.doc_id for c in parts[name]}
        split_pool = [e for e in pool if e.anchor[0] in docs]
        split_cfg = ExtractionConfig(**{**cfg.__dict__, "seed": cfg.seed * 3 + i})
        splits[name] = build_mcnc(parts[name], split_pool, split_cfg) if parts[name] else []
    return splits, build_vocabs(splits["train"])


def save_dataset(directory: str | Path, splits: dict[str, list[McncInstance]], vocabs: Vocabs, config: dict) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, instances in splits.items():
        write_jsonl(directory / f"{name}.jsonl", instances)
    vocabs.save(directory / "vocab")
    manifest = {
        "vocab_digest": vocabs.digest(),
        "counts": {name: len(v) for name, v in splits.items()},
        "vocab_sizes": vocabs.sizes(),
        "config": config,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory: str | Path, split: str) -> tuple[Dataset, Vocabs]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{directory} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    vocabs = Vocabs.load(directory / "vocab")
    if vocabs.digest() != manifest["vocab_digest"]:
        raise DataError(f"{directory}: vocabulary files do not match the manifest digest")
    path = directory / f"{split}.jsonl"
    if not path.exists():
        raise DataError(f"{path} does not exist")
    return Dataset(read_jsonl(path, McncInstance), manifest["vocab_digest"], split), vocabs


# ------------------------------------------------------------------- training


class _Features:
    """Per-instance event features, padded per batch."""

    def __init__(self, model: Model, instances: list[McncInstance]):
        self.cfg = model.cfg
        self.events = [[model.featurizer.event(e, i.protagonist) for e in i.history + i.candidates] for i in instances]
        self.answers = np.array([i.answer for i in instances], dtype=np.int64)

    def batch(self, idx) -> InstanceBatch:
        feats = [f for i in idx for f in self.events[i]]
        return InstanceBatch(pad_events(feats), self.answers[idx], len(idx))


def _check_dataset(ds: Dataset, vocabs: Vocabs, cfg: ModelConfig) -> None:
    if ds.vocab_digest != vocabs.digest():
        raise DataError(f"dataset {ds.name or '?'} was built with a different vocabulary (digest mismatch)")
    task = TaskConfig(ne=cfg.ne, nc=cfg.nc, drop_protagonist=True, allow_bare_lemmas=True)
    for inst in ds.instances:
        problems = validate_instance(inst, task)
        if problems:
            raise DataError(f"instance {inst.instance_id or '?'} of {ds.name or 'dataset'}: {problems[0]}")


def accuracy_of(model: Model, feats: _Features, batch_size: int = 256, workers: int = 1) -> tuple[float, np.ndarray]:
    n = len(feats.answers)
    chunks = [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]

    def run(idx):
        return forward_scores(feats.batch(idx), model.params, model.cfg).data.astype(np.float64)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(run, chunks))
    else:
        scores = [run(c) for c in chunks]
    if not scores:
        return 0.0, np.zeros((0, model.cfg.nc))
    probs = candidate_distribution(np.concatenate(scores))
    correct = int((probs.argmax(axis=1) == feats.answers).sum())
    return correct / n, probs


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)
    model: Model | None = None


def train(
    train_set: Dataset,
    dev_set: Dataset,
    vocabs: Vocabs,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Adam on shuffled mini-batches; returns the checkpoint with the best dev accuracy (earliest on ties)."""
    if not vocabs.frozen:
        raise DataError("vocabularies must be frozen before training")
    _check_dataset(train_set, vocabs, model_cfg)
    _check_dataset(dev_set, vocabs, model_cfg)
    if not train_set.instances:
        raise DataError("training set is empty")

    model = Model(model_cfg, vocabs)
    params = model.params
    train_feats = _Features(model, train_set.instances)
    dev_feats = _Features(model, dev_set.instances)
    order_rng = np.random.default_rng([cfg.seed, 1])
    dropout = Dropout(model_cfg.dropout, np.random.default_rng([cfg.seed, 2]))
    state = AdamState(lr=cfg.lr)
    n = len(train_set)
    best = None
    rows = []
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            perm = order_rng.permutation(n)
            total = 0.0
            for i in range(0, n, cfg.batch_size):
                idx = perm[i : i + cfg.batch_size]
                batch = train_feats.batch(idx)
                with Tape() as tape:
                    loss = compute_loss(batch, params, model_cfg, cfg.l2, dropout)
                grads = backward(tape, loss, params)
                adam_step(params, grads, state)
                total += float(loss.data) * len(idx)
            dev_acc, _ = accuracy_of(model, dev_feats) if dev_set.instances else (0.0, None)
            row = {
                "epoch": epoch,
                "train_loss": total / n,
                "dev_accuracy": dev_acc,
                "wall_seconds": round(time.perf_counter() - start, 3),
            }
            rows.append(row)
            log.info("epoch %d loss %.4f dev %.4f", epoch, row["train_loss"], dev_acc)
            if sink:
                sink.write(json.dumps(row) + "\n")
                sink.flush()
            if best is None or dev_acc > best[1]:
                best = (
                    epoch,
                    dev_acc,
                    {k: p.data.copy() for k, p in params.items()},
                    AdamState(state.lr, state.beta1, state.beta2, state.eps, state.step,
                              {k: v.copy() for k, v in state.m.items()}, {k: v.copy() for k, v in state.v.items()}),
                )
    finally:
        if sink:
            sink.close()

    epoch, dev_acc, arrays, opt = best
    config = {"model": model_cfg.to_dict(), "train": cfg.to_dict(), "vocab_digest": vocabs.digest()}
    ckpt = Checkpoint(config, arrays, vocabs.to_dict(), opt, {"best_epoch": epoch, "dev_accuracy": dev_acc})
    for k, p in params.items():
        p.data = arrays[k].copy()
    return TrainResult(ckpt, rows, model)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    cfg = ModelConfig.from_dict(ckpt.config["model"])
    vocabs = Vocabs.from_dict(ckpt.vocab)
    params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in ckpt.params.items()}
    return Model(cfg, vocabs, params)


@dataclass
class EvalResult:
    accuracy: float
    probabilities: np.ndarray
    predictions: np.ndarray
    answers: np.ndarray
    instance_ids: list[str]

    def records(self) -> list[dict]:
        return [
            {"instance_id": iid, "probabilities": [float(x) for x in p], "predicted": int(k), "answer": int(a)}
            for iid, p, k, a in zip(self.instance_ids, self.probabilities, self.predictions, self.answers)
        ]


def evaluate(dataset: Dataset, checkpoint: Checkpoint | Model, workers: int = 1, batch_size: int = 256) -> EvalResult:
    """Accuracy and per-instance probabilities; dropout is off and nothing is mutated."""
    model = checkpoint if isinstance(checkpoint, Model) else model_from_checkpoint(checkpoint)
    digest = model.vocabs.digest()
    if isinstance(checkpoint, Checkpoint) and checkpoint.config.get("vocab_digest") != digest:
        raise DataError("checkpoint vocabulary does not match its recorded digest")
    if dataset.vocab_digest != digest:
        raise DataError("dataset vocabulary digest does not match the checkpoint")
    _check_dataset(dataset, model.vocabs, model.cfg)
    feats = _Features(model, dataset.instances)
    acc, probs = accuracy_of(model, feats, batch_size, workers)
    return EvalResult(acc, probs, probs.argmax(axis=1) if len(probs) else np.zeros(0, int), feats.answers,
                      [i.instance_id for i in dataset.instances])


# ------------------------------------------------------------------ attention


def event_labels(event: RichEvent, features_cfg: ModelConfig, protagonist: str = "") -> list[str]:
    """Slot labels in encoder order: the predicate, then each kept argument."""
    labels = [f"{event.verb_sense}/{event.protagonist_role or '-'}"]
    for a in event.args:
        if "RT" in features_cfg.ablations and a.role not in BASIC_ROLES:
            continue
        if features_cfg.drop_protagonist and a.role == event.protagonist_role and a.headword == protagonist:
            continue
        labels.append(f"{a.role}:{a.headword}:{a.type}")
    if features_cfg.max_args is not None:
        labels = labels[: features_cfg.max_args + 1]
    return labels


def attention_report(model: Model, event: RichEvent, protagonist: str = "") -> dict:
    """Per-layer, per-head argument attention of the rich encoder for one event."""
    if model.cfg.variant != "rich":
        raise DataError("attention is only defined for the rich encoder")
    feats = model.featurizer.event(event, protagonist)
    attention = []
    encode_rich(pad_events([feats]), model.params, model.cfg, attention=attention)
    layers = [{"heads": [h.astype(np.float64).tolist() for h in a[0]]} for a in attention]
    return {"event": event.to_dict(), "labels": event_labels(event, model.cfg, protagonist), "layers": layers}


def attention_csv(report: dict) -> str:
    """Head-averaged matrices as CSV rows ``layer,query,key,weight``."""
    lines = ["layer,query,key,weight"]
    labels = report["labels"]
    for li, layer in enumerate(report["layers"]):
        mean = np.mean(np.array(layer["heads"]), axis=0)
        for qi, row in enumerate(mean):
            for ki, w in enumerate(row):
                lines.append(f'{li},"{labels[qi]}","{labels[ki]}",{w:.10g}')
    return "\n".join(lines) + "\n"
