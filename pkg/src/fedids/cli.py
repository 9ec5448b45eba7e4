"""Command-line entry point: ``fedids {synth,tokenizer,train,fed,quantize,eval}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckptmod
from . import flows, metrics, tokenizer
from .config import ExperimentConfig, load_config, merge
from .federated import OptimConfig, RoundConfig, evaluate, run_simulation, train_centralized
from .model import PUBLISHED_PARAM_COUNT, ConfigError, ModelConfig, count_params, predict
from .partition import partition_stats, split_dirichlet, split_iid
from .quantize import quantize_model

log = logging.getLogger("fedids")

# stable artifact names under --out-dir
MANIFEST = "manifest.json"
ROUNDS = "rounds.jsonl"
EPOCHS = "epochs.jsonl"
METRICS = "metrics.json"
MODEL = "model.fids"
TOKENIZER = "tokenizer.bbpe"
CONFIG = "config.json"
PARTITION = "partition.json"
CONFUSION = "confusion.csv"


class UsageError(ConfigError):
    pass


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


# ---------------------------------------------------------------- arguments


def _add_experiment_args(p: argparse.ArgumentParser, federated: bool) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--preset", choices=["full", "mini"], help="model size preset (default full)")
    p.add_argument("--data", help="flow CSV")
    p.add_argument("--label-column")
    p.add_argument("--fraction", type=float, help="stratified subsample fraction of the file")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--tokenizer", help="reuse a saved tokenizer instead of training one")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, dest="num_layers")
    g.add_argument("--hidden", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--ffn", type=int, dest="intermediate")
    g.add_argument("--seq-len", type=int)
    g.add_argument("--vocab", type=int)
    g.add_argument("--dropout", type=float)
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--batch-size", type=int)
    if not federated:
        g.add_argument("--epochs", type=int)
    else:
        g = p.add_argument_group("federated")
        g.add_argument("--clients", type=int)
        mode = g.add_mutually_exclusive_group()
        mode.add_argument("--alpha", type=float, help="Dirichlet concentration (non-IID)")
        mode.add_argument("--iid", action="store_true", default=None)
        g.add_argument("--rounds", type=int)
        g.add_argument("--local-epochs", type=int)
        g.add_argument("--workers", type=int, help="concurrent client tasks; never changes results")


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.preset)
    a = vars(args)
    updates = {
        "seed": a.get("seed"),
        "out_dir": a.get("out_dir"),
        "dataset": {
            "path": a.get("data"),
            "label_column": a.get("label_column"),
            "fraction": a.get("fraction"),
            "train_fraction": a.get("train_fraction"),
        },
        "model": {k: a.get(k) for k in ("num_layers", "hidden", "heads", "intermediate", "seq_len", "vocab", "dropout")},
        "training": {
            "lr": a.get("lr"),
            "weight_decay": a.get("weight_decay"),
            "batch_size": a.get("batch_size"),
            "epochs": a.get("epochs"),
        },
    }
    if "clients" in a:
        fed = {k: a.get(k) for k in ("clients", "alpha", "rounds", "local_epochs", "workers")}
        if a.get("iid"):
            fed["iid"] = True
        elif a.get("alpha") is not None:
            fed["iid"] = False
        updates["federated"] = fed
    return merge(cfg, updates).validate()


# ---------------------------------------------------------------- pipeline


def _prepare(cfg: ExperimentConfig, tokenizer_path: str | None):
    data = _existing(cfg.dataset.path, "--data")
    tok = None
    if tokenizer_path is not None:
        tok = tokenizer.TokenizerModel.load(_existing(tokenizer_path, "--tokenizer"))
        if tok.target_vocab_size > cfg.model.vocab:
            raise UsageError(f"tokenizer vocab {tok.target_vocab_size} exceeds model vocab {cfg.model.vocab}")
    prepared = flows.prepare_dataset(
        data,
        seq_len=cfg.model.seq_len,
        vocab_size=cfg.model.vocab,
        tokenizer=tok,
        label_column=cfg.dataset.label_column,
        fraction=cfg.dataset.fraction,
        train_fraction=cfg.dataset.train_fraction,
        seed=cfg.seed,
    )
    model_cfg = replace(cfg.model, num_classes=len(prepared.manifest.class_names)).validate()
    return prepared, model_cfg


def _checkpoint_meta(cfg: ExperimentConfig, prepared: flows.PreparedData, kind: str) -> dict:
    return {
        "kind": kind,
        "class_names": prepared.manifest.class_names,
        "tokenizer": tokenizer.dumps(prepared.tokenizer),
        "label_column": cfg.dataset.label_column,
        "fraction": cfg.dataset.fraction,
        "train_fraction": cfg.dataset.train_fraction,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }


def _write_common(out: Path, cfg: ExperimentConfig, prepared: flows.PreparedData) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = prepared.manifest.to_dict()
    manifest["config"] = cfg.to_dict()
    _dump(manifest, out / MANIFEST)
    _dump(cfg.to_dict(), out / CONFIG)
    prepared.tokenizer.save(out / TOKENIZER)


def _final_metrics(weights, model_cfg, prepared, cfg, out: Path, extra: dict) -> dict:
    preds = predict(weights, model_cfg, prepared.test.token_ids, prepared.test.mask)
    doc = metrics.metrics_document(preds, prepared.test.labels, prepared.manifest.class_names)
    doc["split"] = "test"
    doc["param_count"] = count_params(model_cfg)
    doc.update(extra)
    doc["config"] = cfg.to_dict()
    _dump(doc, out / METRICS)
    metrics.write_confusion_csv(np.asarray(doc["confusion"]), prepared.manifest.class_names, out / CONFUSION)
    return doc


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    try:
        spec = flows.SyntheticSpec(
            classes=args.classes,
            fields=args.fields,
            rows_per_class=args.rows_per_class,
            noise=args.noise,
            seed=args.seed,
            values_per_field=args.values_per_field,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    flows.generate_synthetic(spec, out)
    names = flows.class_names_for(spec.classes)
    manifest = {
        "kind": "synthetic",
        "spec": spec.__dict__,
        "class_names": names,
        "counts": {n: spec.rows_per_class for n in names},
        "label_column": flows.DEFAULT_LABEL_COLUMN,
        "seed": spec.seed,
        "source_sha256": flows.file_sha256(out),
    }
    manifest_path = out.with_name(out.name + ".manifest.json")
    _dump(manifest, manifest_path)
    print(json.dumps({"data": str(out), "manifest": str(manifest_path)}))
    return 0


def cmd_tokenizer(args) -> int:
    if args.vocab < tokenizer.FIRST_MERGE_ID:
        raise UsageError(f"--vocab must be at least {tokenizer.FIRST_MERGE_ID} (256 bytes + 4 specials)")
    data = _existing(args.data, "--data")
    records = flows.load_csv(data, args.label_column, fraction=args.fraction, seed=args.seed)
    train, _, manifest = flows.split_train_test(records, args.train_fraction, args.seed, flows.file_sha256(data))
    model = tokenizer.train_vocab([flows.hash_encode(r) for r in train], args.vocab)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    print(json.dumps({"out": args.out, "vocab_size": model.vocab_size, "merges": len(model.merges)}))
    return 0


def cmd_train(args) -> int:
    cfg = _experiment(args)
    prepared, model_cfg = _prepare(cfg, args.tokenizer)
    out = Path(cfg.out_dir)
    _write_common(out, cfg, prepared)
    optim = OptimConfig(cfg.training.lr, cfg.training.weight_decay, cfg.training.batch_size)
    with open(out / EPOCHS, "w", encoding="utf-8") as fh:

        def on_epoch(rep):
            fh.write(json.dumps(rep.to_dict()) + "\n")
            fh.flush()

        weights, reports = train_centralized(
            model_cfg, optim, prepared.train, prepared.test, cfg.training.epochs, cfg.seed, on_epoch=on_epoch
        )
    ckptmod.save(ckptmod.Checkpoint(model_cfg.to_dict(), weights, _checkpoint_meta(cfg, prepared, "centralized")), out / MODEL)
    doc = _final_metrics(
        weights, model_cfg, prepared, cfg, out, {"final_train_accuracy": reports[-1].train_acc}
    )
    print(json.dumps({"out_dir": str(out), "test_accuracy": doc["accuracy"], "train_accuracy": reports[-1].train_acc}))
    return 0


def cmd_fed(args) -> int:
    cfg = _experiment(args)
    prepared, model_cfg = _prepare(cfg, args.tokenizer)
    out = Path(cfg.out_dir)
    _write_common(out, cfg, prepared)
    f = cfg.federated
    labels = prepared.train.labels
    if f.iid:
        plan = split_iid(len(labels), f.clients, cfg.seed, labels)
    else:
        plan = split_dirichlet(labels, f.clients, f.alpha, cfg.seed)
    _dump({**plan.to_dict(), "config": cfg.to_dict()}, out / PARTITION)
    stats = partition_stats(plan, labels, model_cfg.num_classes)
    rcfg = RoundConfig(
        clients=f.clients,
        rounds=f.rounds,
        local_epochs=f.local_epochs,
        optim=OptimConfig(cfg.training.lr, cfg.training.weight_decay, cfg.training.batch_size),
        seed=cfg.seed,
        workers=f.workers,
    )
    result = run_simulation(
        model_cfg, rcfg, prepared.train, prepared.test, plan, out, _checkpoint_meta(cfg, prepared, "federated")
    )
    doc = _final_metrics(
        result.weights,
        model_cfg,
        prepared,
        cfg,
        out,
        {"rounds": [r.to_dict() for r in result.reports], "partition": stats.to_dict()},
    )
    print(json.dumps({"out_dir": str(out), "test_accuracy": doc["accuracy"], "rounds": len(result.reports) - 1}))
    return 0


def _load_model(path: str | None):
    p = _existing(path, "--model")
    try:
        ckpt = ckptmod.load(p)
    except ckptmod.CheckpointError as exc:
        raise UsageError(f"{p}: {exc}") from None
    return ckpt, ModelConfig.from_dict(ckpt.config).validate()


def _eval_arrays(ckpt, model_cfg: ModelConfig, data_path: str, split: str) -> flows.ExampleArrays:
    meta = ckpt.meta
    if "tokenizer" not in meta or "class_names" not in meta:
        raise UsageError("checkpoint carries no tokenizer/class metadata; cannot encode CSV input")
    tok = tokenizer.loads(meta["tokenizer"])
    data = _existing(data_path, "--data")
    label_column = meta.get("label_column", flows.DEFAULT_LABEL_COLUMN)
    seed = meta.get("seed", 0)
    if split == "all":
        records = flows.load_csv(data, label_column)
    else:
        # reproduce the training run's subsample and split
        records = flows.load_csv(data, label_column, fraction=meta.get("fraction", 1.0), seed=seed)
        train, test, _ = flows.split_train_test(records, meta.get("train_fraction", 0.8), seed)
        records = test if split == "test" else train
    examples = flows.build_examples(records, tok, meta["class_names"], model_cfg.seq_len)
    return flows.stack_examples(examples, model_cfg.seq_len)


def cmd_quantize(args) -> int:
    ckpt, model_cfg = _load_model(args.model)
    policy = args.policy
    if policy not in ("default", "none"):
        policy = [n.strip() for n in policy.split(",") if n.strip()]
    evaluate_fn = None
    if args.eval is not None:
        arrays = _eval_arrays(ckpt, model_cfg, args.eval, args.split)
        evaluate_fn = lambda w: evaluate(w, model_cfg, arrays)  # noqa: E731
    try:
        qckpt, report = quantize_model(ckpt, policy, evaluate_fn)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ckptmod.save(qckpt, args.out)
    doc = report.to_dict()
    doc["model"] = args.model
    doc["out"] = args.out
    doc["config"] = ckpt.meta.get("config")
    report_path = Path(args.report) if args.report else Path(args.out).with_name(Path(args.out).name + ".report.json")
    _dump(doc, report_path)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ckpt, model_cfg = _load_model(args.model)
    arrays = _eval_arrays(ckpt, model_cfg, args.data, args.split)
    if len(arrays) == 0:
        raise UsageError("no examples to evaluate")
    weights = ckpt.float_weights()
    preds = predict(weights, model_cfg, arrays.token_ids, arrays.mask)
    doc = metrics.metrics_document(preds, arrays.labels, ckpt.meta["class_names"])
    full = ModelConfig(num_classes=15)
    doc["split"] = args.split
    doc["config"] = ckpt.meta.get("config")
    doc["param_count"] = count_params(model_cfg)
    doc["param_accounting"] = {
        "model": count_params(model_cfg),
        "full_config_c15": count_params(full),
        "published": PUBLISHED_PARAM_COUNT,
        "note": "closed-form count without token-type embeddings or pooler; the published figure is not reproducible from the listed hyperparameters",
    }
    if args.time:
        doc["timing"] = metrics.time_inference(
            weights, model_cfg, (arrays.token_ids[0], arrays.mask[0]), args.reps, args.warmup, args.hardware
        ).to_dict()
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump(doc, out / METRICS)
        metrics.write_confusion_csv(np.asarray(doc["confusion"]), ckpt.meta["class_names"], out / CONFUSION)
    print(json.dumps(doc, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedids", description="Federated transformer intrusion-detection simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic flow CSV")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--fields", type=int, default=12)
    p.add_argument("--rows-per-class", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--values-per-field", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tokenizer", help="train and save a byte-level BPE vocabulary")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", type=int, default=5000)
    p.add_argument("--out", required=True)
    p.add_argument("--label-column", default=flows.DEFAULT_LABEL_COLUMN)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tokenizer)

    p = sub.add_parser("train", help="centralized training")
    _add_experiment_args(p, federated=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fed", help="federated simulation (FedAvg)")
    _add_experiment_args(p, federated=True)
    p.set_defaults(func=cmd_fed)

    p = sub.add_parser("quantize", help="per-channel int8 post-training quantization")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", default="default", help="'default', 'none', or comma-separated tensor names")
    p.add_argument("--eval", help="CSV to measure accuracy before/after on")
    p.add_argument("--split", choices=["all", "train", "test"], default="all")
    p.add_argument("--report", help="report path (default <out>.report.json)")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="metrics and inference timing for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["all", "train", "test"], default="all")
    p.add_argument("--time", action="store_true")
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--hardware", help="hardware description for the timing report")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, flows.SchemaError, flows.CSVParseError, FileNotFoundError) as exc:
        print(f"fedids {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"fedids {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
