"""Command-line interface: train, eval, gradcheck, ablate, synth, dump-embeddings.

Flags mirror the run configuration; --config may point at a JSON file whose
keys equal flag names (dashes or underscores), with explicit flags taking
precedence. Every command honors --seed and produces byte-deterministic
outputs for fixed inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import autodiff as ad
from . import model as mdl
from . import synth as synth_mod
from . import trainer
from .config import TrainConfig
from .encoder import DEFAULT_TEMPLATE, Vocabulary
from .episodes import load_dataset, load_fixed_embeddings, load_splits
from .errors import FsprotoError
from .gradcheck import run_gradcheck
from .serialize import atomic_write_bytes, read_checkpoint

# (flag, config field, type, help) — one row per TrainConfig knob
_CONFIG_FLAGS = [
    ("--n-way", "n_way", int, "classes per episode"),
    ("--k-shot", "k_shot", int, "support instances per class"),
    ("--m-query", "m_query", int, "query instances per class"),
    ("--dim", "dim", int, "representation width"),
    ("--max-seq-len", "max_seq_len", int, "token truncation length"),
    ("--min-freq", "min_freq", int, "vocabulary frequency threshold"),
    ("--template", "template", str, "label template stem"),
    ("--template-position", "template_position", str, "before|after the text"),
    ("--distance", "distance", str, "euclidean|sqeuclidean|cosine"),
    ("--attention-mode", "attention_mode", str, "per-query|aggregated"),
    ("--tau", "tau", float, "contrastive temperature"),
    ("--supcon-form", "supcon_form", str, "out|in contrastive aggregation"),
    ("--lr", "lr", float, "Adam learning rate"),
    ("--max-iters", "max_iters", int, "training iteration cap"),
    ("--eval-every", "eval_every", int, "iterations between evaluations"),
    ("--patience", "patience", int, "stagnant evaluations before stopping"),
    ("--episodes", "eval_episodes", int, "episodes per evaluation"),
    ("--rho-schedule", "rho_schedule", str, "linear or constant:<v>"),
    ("--seed", "seed", int, "run seed"),
]

_TOGGLE_FLAGS = [
    ("--no-attention", "attention_on"),
    ("--no-contrastive", "contrastive_on"),
    ("--no-template", "template_on"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    for flag, field, ftype, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=field, type=ftype, default=None,
                            help=f"{help_text} (default {getattr(defaults, field)})")
    for flag, field in _TOGGLE_FLAGS:
        parser.add_argument(flag, dest=field, action="store_false", default=None,
                            help=f"disable {field.removesuffix('_on')} (default on)")
    parser.add_argument("--config", default=None,
                        help="JSON file of flag values; explicit flags override it")


def _add_data_flags(parser: argparse.ArgumentParser, splits_required: bool = True) -> None:
    parser.add_argument("--data", required=True, help="JSON-lines dataset path")
    parser.add_argument("--splits", required=splits_required,
                        help="JSON class-split file path")
    parser.add_argument("--embeddings", default=None,
                        help="fixed-embedding file; replaces the token path")


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise FsprotoError(f"{args.config}: config file must hold a JSON object")
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        for key, value in raw.items():
            norm = key.replace("-", "_")
            if norm not in fields:
                raise FsprotoError(f"{args.config}: unknown config key {key!r}")
            values[norm] = value
    for f in dataclasses.fields(TrainConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(cfg: TrainConfig, data_path, splits_path, dataset,
                   splits, vocab_size: int, embeddings_path=None) -> dict:
    manifest = {
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        "dataset": {"path": str(data_path), "sha256": _sha256(data_path),
                    **dataset.stats()},
        "splits": {"path": str(splits_path), "sha256": _sha256(splits_path),
                   "counts": splits.counts()},
        "vocab_size": vocab_size,
    }
    if embeddings_path:
        manifest["embeddings"] = {"path": str(embeddings_path),
                                  "sha256": _sha256(embeddings_path)}
    return manifest


def _load_inputs(args, cfg):
    dataset = load_dataset(args.data)
    splits = load_splits(args.splits, dataset)
    fixed = None
    if getattr(args, "embeddings", None):
        fixed = load_fixed_embeddings(args.embeddings, dataset)
    return dataset, splits, fixed


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    dataset, splits, fixed = _load_inputs(args, cfg)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    result = trainer.train(cfg, dataset, splits, fixed=fixed, out_dir=out_dir,
                           log=lambda msg: print(msg))
    result.vocab.save(os.path.join(out_dir, "vocab.tsv"))
    atomic_write_bytes(os.path.join(out_dir, "config.json"),
                       (json.dumps(cfg.to_dict(), indent=2) + "\n").encode("utf-8"))
    manifest = build_manifest(cfg, args.data, args.splits, dataset, splits,
                              vocab_size=len(result.vocab),
                              embeddings_path=args.embeddings)
    atomic_write_bytes(os.path.join(out_dir, "manifest.json"),
                       (json.dumps(manifest, indent=2) + "\n").encode("utf-8"))
    print(f"best validation accuracy {result.best_val_acc:.4f} "
          f"at iteration {result.best_iteration}"
          + (" (early stop)" if result.stopped_early else ""))
    print(f"artifacts written to {out_dir}")
    return 0


def _load_checkpoint_params(args, cfg, dataset, splits, fixed):
    d, vocab_size, blocks = read_checkpoint(args.checkpoint)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = trainer.build_training_vocab(dataset, splits, min_frequency=cfg.min_freq)
    if len(vocab) != vocab_size:
        raise FsprotoError(
            f"{args.checkpoint}: vocabulary size {vocab_size} does not match the "
            f"rebuilt vocabulary ({len(vocab)}); pass the run's vocab.tsv via --vocab")
    if d != cfg.dim:
        raise FsprotoError(f"{args.checkpoint}: checkpoint width d={d} but --dim={cfg.dim}")
    params = mdl.params_from_blocks(blocks, d)
    if fixed is not None and params.hidden_w.shape[1] != fixed.dim:
        raise FsprotoError(
            f"checkpoint expects input width {params.hidden_w.shape[1]} "
            f"but the embedding file has dim {fixed.dim}")
    return params, vocab


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    dataset, splits, fixed = _load_inputs(args, cfg)
    params, vocab = _load_checkpoint_params(args, cfg, dataset, splits, fixed)
    spec = trainer.capped_eval_spec(cfg, splits, args.split)
    if spec.n_way < cfg.n_way:
        print(f"note: split {args.split!r} has {spec.n_way} classes; "
              f"evaluating {spec.n_way}-way")
    metrics = trainer.evaluate(params, vocab, dataset, splits, args.split,
                               cfg.eval_episodes, spec, cfg, cfg.seed, fixed)
    header = f"{'split':<8} {'episodes':>8} {'acc':>16} {'macro_f1':>16}"
    row = (f"{args.split:<8} {metrics.episodes:>8} "
           f"{metrics.accuracy:.4f} ± {metrics.acc_std:.4f} "
           f"{metrics.macro_f1:.4f} ± {metrics.f1_std:.4f}")
    print(header)
    print(row)
    csv_text = ("split,episodes,accuracy,acc_std,macro_f1,f1_std\n"
                f"{args.split},{metrics.episodes},{metrics.accuracy!r},"
                f"{metrics.acc_std!r},{metrics.macro_f1!r},{metrics.f1_std!r}\n")
    print(csv_text, end="")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        atomic_write_bytes(os.path.join(args.out_dir, "metrics.csv"),
                           csv_text.encode("utf-8"))
    return 0


def cmd_gradcheck(args) -> int:
    if args.inject_sign_flip:
        ad.set_backward_corruption("tanh")
    try:
        reports = run_gradcheck(eps=args.eps, tol=args.tol, seed=args.seed or 0)
    finally:
        ad.set_backward_corruption(None)
    all_passed = True
    for name, report in reports.items():
        status = "PASS" if report.passed else "FAIL"
        print(f"{name:<18} worst_rel_err={report.worst:.3e}  {status}")
        all_passed &= report.passed
    print(f"gradcheck: {'all components passed' if all_passed else 'FAILURES detected'} "
          f"(eps={args.eps}, tol={args.tol})")
    return 0 if all_passed else 1


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    dataset, splits, _ = _load_inputs(args, cfg)
    shots = tuple(int(s) for s in args.shots.split(","))
    rows = synth_mod.run_ablation(cfg, dataset, splits, shots=shots,
                                  eval_episodes=cfg.eval_episodes,
                                  eval_split=args.split,
                                  log=lambda msg: print(msg))
    csv_text = synth_mod.ablation_csv_text(rows)
    print(csv_text, end="")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        atomic_write_bytes(os.path.join(args.out_dir, "ablation.csv"),
                           csv_text.encode("utf-8"))
    for k in shots:
        gap = synth_mod.paired_gap(rows, "at+cl+lt", "none", k=k)
        print(f"paired gap (at+cl+lt vs none, {k}-shot): "
              f"mean={gap['mean']:+.4f} ± {gap['std']:.4f} over {gap['episodes']} episodes")
    return 0


def cmd_synth(args) -> int:
    spec = synth_mod.SynthSpec(
        classes=args.classes, instances_per_class=args.instances_per_class,
        vocab_size=args.vocab_size, keywords_per_class=args.keywords_per_class,
        injection_rate=args.injection_rate,
        label_informative=not args.plain_labels,
        min_tokens=args.min_tokens, max_tokens=args.max_tokens)
    rows = synth_mod.generate_synthetic(spec, seed=args.seed or 0)
    synth_mod.write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} instances over {spec.classes} classes to {args.out}")
    if args.splits_out:
        counts = tuple(int(c) for c in args.split_counts.split(","))
        split = synth_mod.split_by_class_order(rows, counts)
        atomic_write_bytes(args.splits_out,
                           (json.dumps(split, indent=2) + "\n").encode("utf-8"))
        print(f"wrote class split {counts} to {args.splits_out}")
    return 0


def cmd_dump_embeddings(args) -> int:
    cfg = resolve_config(args)
    dataset, splits, fixed = _load_inputs(args, cfg)
    params, vocab = _load_checkpoint_params(args, cfg, dataset, splits, fixed)
    rows = synth_mod.dump_embeddings(params, vocab, dataset, splits, args.split,
                                     args.count, cfg.seed, cfg, fixed)
    text = synth_mod.embeddings_csv_text(rows, d=params.d)
    atomic_write_bytes(args.out, text.encode("utf-8"))
    print(f"wrote {len(rows)} embedding rows ({params.d} dims) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsproto",
        description="Few-shot text classification with label templates, "
                    "contrastive learning, and attention prototypes.")
    parser.add_argument("--version", action="version", version=f"fsproto {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write artifacts")
    _add_config_flags(p_train)
    _add_data_flags(p_train)
    p_train.add_argument("--out-dir", required=True, help="artifact directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a split")
    _add_config_flags(p_eval)
    _add_data_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_eval.add_argument("--vocab", default=None, help="vocab.tsv from the training run")
    p_eval.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p_eval.add_argument("--out-dir", default=None, help="also write metrics.csv here")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="verify gradients of every component")
    p_grad.add_argument("--eps", type=float, default=1e-4, help="finite-difference step")
    p_grad.add_argument("--tol", type=float, default=1e-4, help="max relative error")
    p_grad.add_argument("--seed", type=int, default=0, help="fixture seed")
    p_grad.add_argument("--inject-sign-flip", action="store_true",
                        help=argparse.SUPPRESS)  # test hook: corrupt one adjoint
    p_grad.set_defaults(func=cmd_gradcheck)

    p_ablate = sub.add_parser("ablate", help="train/evaluate every component-toggle row")
    _add_config_flags(p_ablate)
    _add_data_flags(p_ablate)
    p_ablate.add_argument("--out-dir", default=None, help="also write ablation.csv here")
    p_ablate.add_argument("--shots", default="1,5", help="comma-separated K values")
    p_ablate.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p_ablate.set_defaults(func=cmd_ablate)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--out", required=True, help="output JSON-lines path")
    p_synth.add_argument("--classes", type=int, default=12)
    p_synth.add_argument("--instances-per-class", type=int, default=60)
    p_synth.add_argument("--vocab-size", type=int, default=120)
    p_synth.add_argument("--keywords-per-class", type=int, default=4)
    p_synth.add_argument("--injection-rate", type=float, default=0.3)
    p_synth.add_argument("--plain-labels", action="store_true",
                         help="use uninformative class names instead of keywords")
    p_synth.add_argument("--min-tokens", type=int, default=8)
    p_synth.add_argument("--max-tokens", type=int, default=16)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--splits-out", default=None, help="also write a split file")
    p_synth.add_argument("--split-counts", default="8,2,2",
                         help="train,valid,test class counts for --splits-out")
    p_synth.set_defaults(func=cmd_synth)

    p_dump = sub.add_parser("dump-embeddings", help="export representations as CSV")
    _add_config_flags(p_dump)
    _add_data_flags(p_dump)
    p_dump.add_argument("--checkpoint", required=True)
    p_dump.add_argument("--vocab", default=None, help="vocab.tsv from the training run")
    p_dump.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p_dump.add_argument("--count", type=int, default=100)
    p_dump.add_argument("--out", required=True, help="output CSV path")
    p_dump.set_defaults(func=cmd_dump_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FsprotoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
