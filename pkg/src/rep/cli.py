"""Command-line entry point: ``rep <command> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
Settings resolve as flags, then the ``--config`` JSON file, then defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from rep.amr.extract import Document, extract_corpus
from rep.amr.graph import PenmanError
from rep.amr.rewrite import ExtractionConfig
from rep.amr.synthetic import SyntheticConfig, generate_synthetic
from rep.autodiff.checkpoint import Checkpoint, CheckpointError
from rep.core import DataError, McncInstance, NarrativeChain, RichEvent, read_jsonl, write_jsonl
from rep.encoder import ModelConfig
from rep.train import (
    SPLITS,
    TrainConfig,
    attention_csv,
    attention_report,
    build_dataset,
    evaluate,
    load_dataset,
    model_from_checkpoint,
    save_dataset,
    train,
)

log = logging.getLogger("rep")

# Full-size model defaults; desk runs usually shrink dw/de through flags.
MODEL_DEFAULTS = ModelConfig().to_dict()
TRAIN_DEFAULTS = TrainConfig().to_dict()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, output_help: str) -> None:
    p.add_argument("--input", help="input path")
    p.add_argument("--output", help=output_help)
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--config", help="JSON file of settings; flags override it")
    p.add_argument("--workers", type=int, help="parallel workers (outputs do not depend on it)")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ne", type=int, help="history length")
    p.add_argument("--nc", type=int, help="number of candidates")
    p.add_argument("--layers", type=int, help="transformer layers (encoder and temporal)")
    p.add_argument("--ffn-dim", type=int, help="feed-forward width (encoder and temporal)")
    p.add_argument("--heads", type=int, help="attention heads (encoder and temporal)")
    p.add_argument("--dw", type=int, help="word embedding size")
    p.add_argument("--de", type=int, help="event embedding size")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch", type=int, help="mini-batch size")
    p.add_argument("--lambda", dest="l2", type=float, metavar="LAMBDA", help="L2 coefficient")
    p.add_argument("--dropout", type=float, help="dropout rate")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--variant", choices=["rich", "fusion"], help="event encoder")
    p.add_argument("--ablate", choices=["S", "T", "RT"], action="append", help="ablation (repeatable)")
    p.add_argument("--score-space", choices=["temporal", "raw"], help="vectors fed to the scorer")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rep", description="Rich event prediction over AMR-derived narrative chains.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    p = sub.add_parser("gen-synthetic", help="write a synthetic document corpus")
    _common(p, "documents JSONL")
    p.add_argument("--scripts", type=int, help="number of latent scripts")
    p.add_argument("--docs", type=int, help="number of documents")
    p.add_argument("--entities", type=int, help="co-participant name pool size")
    p.add_argument("--noise", type=float, help="rate of random event substitution")

    p = sub.add_parser("extract", help="documents JSONL to narrative chains")
    _common(p, "chains JSONL; the event pool and report go next to it")
    p.add_argument("--ne", type=int, help="history length (chains shorter than ne+1 are dropped)")

    p = sub.add_parser("build-dataset", help="chains to train/dev/test MCNC instances and a frozen vocabulary")
    _common(p, "dataset directory")
    p.add_argument("--ne", type=int, help="history length")
    p.add_argument("--nc", type=int, help="number of candidates")
    p.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "DEV", "TEST"), help="split fractions by document")
    p.add_argument("--per-chain-cap", type=int, help="at most this many windows per chain")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _common(p, "checkpoint path; the epoch log goes to <output>.log.jsonl")
    _model_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _common(p, "predictions JSONL")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--split", choices=SPLITS, help="dataset split (default test)")

    p = sub.add_parser("inspect-attention", help="export encoder attention for one event")
    _common(p, "output prefix; writes <output>.json and <output>.csv")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--split", choices=SPLITS, help="dataset split (default test)")
    p.add_argument("--instance", type=int, help="instance index in the split (default 0)")
    p.add_argument("--event", type=int, help="event index within history + candidates (default 0)")
    return parser


def _settings(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, the config file and explicit flags, in increasing precedence."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"config file {path}: unknown keys {sorted(unknown)}")
        merged.update(loaded)
    for key, value in vars(args).items():
        if key in defaults and value is not None:
            merged[key] = value
    return merged


def _need(settings: dict, *keys: str) -> None:
    for key in keys:
        if not settings.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{p} does not exist")
    return p


# ------------------------------------------------------------------- commands


def cmd_gen_synthetic(args) -> int:
    s = _settings(args, {"input": None, "output": None, "seed": 0, "workers": 1,
                         "scripts": 5, "docs": 2000, "entities": 60, "noise": 0.0})
    _need(s, "output")
    cfg = SyntheticConfig(n_scripts=s["scripts"], n_docs=s["docs"], n_entities=s["entities"], noise=s["noise"], seed=s["seed"])
    cfg.validate()
    docs = generate_synthetic(cfg)
    out = Path(s["output"])
    write_jsonl(out, [d.to_dict() for d in docs])
    _write_json(_sidecar(out), {"command": "gen-synthetic", "config": cfg.to_dict(), "documents": len(docs)})
    print(json.dumps({"documents": len(docs), "output": str(out)}))
    return 0


def cmd_extract(args) -> int:
    s = _settings(args, {"input": None, "output": None, "seed": 0, "workers": 1, "ne": 8})
    _need(s, "input", "output")
    docs = [Document.from_dict(d) for d in read_jsonl(_existing(s["input"]))]
    cfg = ExtractionConfig(ne=s["ne"], chain_min_length=s["ne"] + 1, seed=s["seed"])
    result = extract_corpus(docs, cfg, workers=s["workers"])
    out = Path(s["output"])
    stem = out.name[: -len(".jsonl")] if out.name.endswith(".jsonl") else out.name
    write_jsonl(out, result.chains)
    write_jsonl(out.with_name(stem + ".events.jsonl"), result.events)
    report = {"command": "extract", "config": cfg.to_dict(), **result.report}
    _write_json(out.with_name(stem + ".report.json"), report)
    _write_json(_sidecar(out), {"command": "extract", "config": cfg.to_dict(), "input": s["input"]})
    print(json.dumps({k: result.report[k] for k in ("documents", "events", "chains")}))
    return 0


def cmd_build_dataset(args) -> int:
    s = _settings(args, {"input": None, "output": None, "seed": 0, "workers": 1, "ne": 8, "nc": 5,
                         "split": [0.8, 0.1, 0.1], "per_chain_cap": None})
    _need(s, "input", "output")
    src = _existing(s["input"])
    stem = src.name[: -len(".jsonl")] if src.name.endswith(".jsonl") else src.name
    chains = read_jsonl(src, NarrativeChain)
    pool = read_jsonl(_existing(str(src.with_name(stem + ".events.jsonl"))), RichEvent)
    if len(s["split"]) != 3 or min(s["split"]) < 0 or sum(s["split"]) <= 0:
        raise UsageError("--split needs three non-negative fractions")
    if s["nc"] < 2:
        raise UsageError("--nc must be at least 2")
    cfg = ExtractionConfig(ne=s["ne"], chain_min_length=s["ne"] + 1, negatives_per_instance=s["nc"] - 1,
                           seed=s["seed"], per_chain_cap=s["per_chain_cap"])
    splits, vocabs = build_dataset(chains, pool, cfg, tuple(s["split"]))
    manifest = save_dataset(s["output"], splits, vocabs, {"extraction": cfg.to_dict(), "split": list(s["split"]), "input": s["input"]})
    print(json.dumps({"counts": manifest["counts"], "vocab_digest": manifest["vocab_digest"]}))
    return 0


def _model_train_configs(s: dict, ne: int, nc: int) -> tuple[ModelConfig, TrainConfig]:
    m = {k: s[k] for k in MODEL_DEFAULTS}
    for flag, keys in (("layers", ("enc_layers", "temporal_layers")), ("heads", ("enc_heads", "temporal_heads")),
                       ("ffn_dim", ("enc_ffn", "temporal_ffn"))):
        if s.get(flag) is not None:
            for k in keys:
                m[k] = s[flag]
    if s.get("ablate"):
        m["ablations"] = s["ablate"]
    if m["ne"] != ne or m["nc"] != nc:
        if s.get("ne") not in (None, ne) or s.get("nc") not in (None, nc):
            raise DataError(f"dataset has ne={ne}, nc={nc} but the model was asked for ne={m['ne']}, nc={m['nc']}")
        m["ne"], m["nc"] = ne, nc
    m["init_seed"] = s["seed"]
    m["ablations"] = tuple(m["ablations"])
    t = TrainConfig(lr=s["lr"], batch_size=s["batch"], l2=s["l2"], epochs=s["epochs"], seed=s["seed"])
    return ModelConfig(**m), t


def cmd_train(args) -> int:
    defaults = {"input": None, "output": None, "seed": 0, "workers": 1, **MODEL_DEFAULTS,
                "layers": None, "heads": None, "ffn_dim": None, "ablate": None,
                "lr": TRAIN_DEFAULTS["lr"], "batch": TRAIN_DEFAULTS["batch_size"], "l2": TRAIN_DEFAULTS["l2"],
                "epochs": TRAIN_DEFAULTS["epochs"]}
    defaults.pop("ne"), defaults.pop("nc")
    s = _settings(args, {**defaults, "ne": None, "nc": None})
    _need(s, "input", "output")
    _existing(s["input"])
    train_set, vocabs = load_dataset(s["input"], "train")
    dev_set, _ = load_dataset(s["input"], "dev")
    if not train_set.instances:
        raise DataError("training split is empty")
    first = train_set.instances[0]
    s_full = {**s, "ne": s["ne"] if s["ne"] is not None else len(first.history),
              "nc": s["nc"] if s["nc"] is not None else len(first.candidates)}
    try:
        model_cfg, train_cfg = _model_train_configs(s_full, len(first.history), len(first.candidates))
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    out = Path(s["output"])
    result = train(train_set, dev_set, vocabs, model_cfg, train_cfg, log_path=out.with_name(out.name + ".log.jsonl"))
    result.checkpoint.meta["input"] = s["input"]
    result.checkpoint.save(out)
    print(json.dumps({"best_epoch": result.checkpoint.meta["best_epoch"],
                      "dev_accuracy": result.checkpoint.meta["dev_accuracy"], "output": str(out)}))
    return 0


def _load_for_eval(s: dict):
    ckpt = Checkpoint.load(_existing(s["checkpoint"]))
    dataset, vocabs = load_dataset(_existing(s["input"]), s["split"])
    if ckpt.config.get("vocab_digest") != vocabs.digest():
        raise DataError("dataset vocabulary digest does not match the checkpoint; refusing to evaluate")
    return ckpt, dataset


def cmd_eval(args) -> int:
    s = _settings(args, {"input": None, "output": None, "seed": 0, "workers": 1, "checkpoint": None, "split": "test"})
    _need(s, "input", "checkpoint")
    ckpt, dataset = _load_for_eval(s)
    result = evaluate(dataset, ckpt, workers=s["workers"])
    summary = {"accuracy": result.accuracy, "instances": len(dataset), "split": s["split"]}
    if s["output"]:
        out = Path(s["output"])
        write_jsonl(out, result.records())
        _write_json(_sidecar(out), {"command": "eval", **summary, "checkpoint": s["checkpoint"],
                                    "dataset": s["input"], "config": ckpt.config})
    print(json.dumps(summary))
    return 0


def cmd_inspect_attention(args) -> int:
    s = _settings(args, {"input": None, "output": None, "seed": 0, "workers": 1, "checkpoint": None,
                         "split": "test", "instance": 0, "event": 0})
    _need(s, "input", "checkpoint", "output")
    ckpt, dataset = _load_for_eval(s)
    if not 0 <= s["instance"] < len(dataset):
        raise UsageError(f"--instance {s['instance']} is outside the {len(dataset)} instances of {s['split']}")
    inst: McncInstance = dataset.instances[s["instance"]]
    events = inst.history + inst.candidates
    if not 0 <= s["event"] < len(events):
        raise UsageError(f"--event must lie in [0, {len(events) - 1}]")
    model = model_from_checkpoint(ckpt)
    report = attention_report(model, events[s["event"]], inst.protagonist)
    report["source"] = {"instance_id": inst.instance_id, "event": s["event"], "split": s["split"],
                        "checkpoint": s["checkpoint"], "config": ckpt.config}
    out = Path(s["output"])
    _write_json(out.with_name(out.name + ".json"), report)
    out.with_name(out.name + ".csv").write_text(attention_csv(report))
    print(json.dumps({"layers": len(report["layers"]), "labels": report["labels"]}))
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "extract": cmd_extract,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-attention": cmd_inspect_attention,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, PenmanError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
