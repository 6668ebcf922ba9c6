"""Synthetic bag-of-tokens datasets plus the component-toggle ablation harness.

Each class owns a disjoint block of keyword tokens; instances mix uniform
background tokens (drawn from the whole shared vocabulary) with class
keywords at a configurable injection rate, so the achievable accuracy is
controlled and label-informative class names carry real signal.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import trainer
from .config import TrainConfig
from .episodes import Dataset, FixedEmbeddingTable, SplitAssignment
from .errors import DataError
from .serialize import atomic_write_bytes


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 12
    instances_per_class: int = 60
    vocab_size: int = 120
    keywords_per_class: int = 4
    injection_rate: float = 0.3
    label_informative: bool = True
    min_tokens: int = 8
    max_tokens: int = 16

    def __post_init__(self):
        if self.classes < 2 or self.instances_per_class < 1:
            raise DataError("need at least 2 classes and 1 instance per class")
        if self.keywords_per_class < 1:
            raise DataError("need at least 1 keyword per class")
        if self.vocab_size < self.classes * self.keywords_per_class:
            raise DataError("vocabulary too small for disjoint per-class keyword blocks")
        if not 0.0 <= self.injection_rate <= 1.0:
            raise DataError("injection rate must lie in [0, 1]")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise DataError("token length bounds are inconsistent")

    def keywords_of(self, class_index: int) -> list[str]:
        start = class_index * self.keywords_per_class
        return [f"tok{i:03d}" for i in range(start, start + self.keywords_per_class)]


def generate_synthetic(spec: SynthSpec, seed: int) -> list[dict]:
    """Rows of {"text", "label"}, grouped by class, deterministic per seed."""
    rng = np.random.default_rng(seed)
    class_names = []
    for c in range(spec.classes):
        if spec.label_informative:
            class_names.append(spec.keywords_of(c)[rng.integers(spec.keywords_per_class)])
        else:
            class_names.append(f"label{c:02d}")
    rows = []
    for c in range(spec.classes):
        keywords = spec.keywords_of(c)
        for _ in range(spec.instances_per_class):
            length = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
            tokens = []
            for _ in range(length):
                if rng.random() < spec.injection_rate:
                    tokens.append(keywords[rng.integers(len(keywords))])
                else:
                    tokens.append(f"tok{rng.integers(spec.vocab_size):03d}")
            rows.append({"text": " ".join(tokens), "label": class_names[c]})
    return rows


def write_jsonl(path, rows: list[dict]) -> None:
    payload = "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    atomic_write_bytes(path, payload.encode("utf-8"))


def split_by_class_order(rows: list[dict], counts: tuple[int, int, int]) -> dict:
    """Split-file dict assigning classes (in first-appearance order) to train/valid/test."""
    names = list(dict.fromkeys(row["label"] for row in rows))
    if sum(counts) != len(names):
        raise DataError(f"split counts {counts} do not sum to {len(names)} classes")
    a, b, _ = counts
    return {"train": names[:a], "valid": names[a:a + b], "test": names[a + b:]}


# Component-toggle rows, in presentation order: (row id, attention, contrastive, template)
ABLATION_ROWS = (
    ("none", False, False, False),
    ("lt", False, False, True),
    ("cl", False, True, False),
    ("at", True, False, False),
    ("at+cl", True, True, False),
    ("at+cl+lt", True, True, True),
)


@dataclass
class AblationRow:
    row_id: str
    at: bool
    cl: bool
    lt: bool
    metrics: dict[int, trainer.Metrics]  # keyed by k_shot

    def accuracy(self, k: int) -> float | None:
        return self.metrics[k].accuracy if k in self.metrics else None

    def f1(self, k: int) -> float | None:
        return self.metrics[k].macro_f1 if k in self.metrics else None


def run_ablation(cfg: TrainConfig, dataset: Dataset, splits: SplitAssignment,
                 rows=ABLATION_ROWS, shots: tuple[int, ...] = (1, 5),
                 eval_episodes: int = 200, eval_split: str = "test",
                 log=None) -> list[AblationRow]:
    """Train and score one model per toggle row and shot count.

    Every run shares the base seed, so training episode streams and
    evaluation episodes are identical across rows: metric differences are
    attributable to the toggles alone.
    """
    say = log if log is not None else (lambda *_: None)
    results = []
    for row_id, at, cl, lt in rows:
        metrics: dict[int, trainer.Metrics] = {}
        for k in shots:
            run_cfg = dataclasses.replace(
                cfg, attention_on=at, contrastive_on=cl, template_on=lt, k_shot=k)
            say(f"ablation row {row_id!r} k={k}: training {run_cfg.max_iters} iterations")
            outcome = trainer.train(run_cfg, dataset, splits)
            spec = trainer.capped_eval_spec(run_cfg, splits, eval_split)
            metrics[k] = trainer.evaluate(
                outcome.params, outcome.vocab, dataset, splits, eval_split,
                eval_episodes, spec, run_cfg, cfg.seed, keep_per_episode=True)
            say(f"ablation row {row_id!r} k={k}: acc={metrics[k].accuracy:.4f} "
                f"f1={metrics[k].macro_f1:.4f}")
        results.append(AblationRow(row_id=row_id, at=at, cl=cl, lt=lt, metrics=metrics))
    return results


def ablation_csv_text(rows: list[AblationRow]) -> str:
    def cell(value):
        return "" if value is None else repr(value)

    lines = ["row,at,cl,lt,acc_1shot,f1_1shot,acc_5shot,f1_5shot"]
    for row in rows:
        lines.append(",".join([
            row.row_id,
            "1" if row.at else "0", "1" if row.cl else "0", "1" if row.lt else "0",
            cell(row.accuracy(1)), cell(row.f1(1)),
            cell(row.accuracy(5)), cell(row.f1(5)),
        ]))
    return "\n".join(lines) + "\n"


def paired_gap(rows: list[AblationRow], row_a: str, row_b: str, k: int) -> dict:
    """Per-episode paired accuracy differences between two rows (a minus b)."""
    by_id = {row.row_id: row for row in rows}
    a = by_id[row_a].metrics[k].per_episode_acc
    b = by_id[row_b].metrics[k].per_episode_acc
    if a is None or b is None:
        raise ValueError("paired_gap requires per-episode metrics")
    diff = a - b
    return {"mean": float(diff.mean()), "std": float(diff.std()),
            "wins": int(np.sum(diff > 0)), "losses": int(np.sum(diff < 0)),
            "episodes": int(diff.size)}


def dump_embeddings(params: mdl.ModelParams, vocab, dataset: Dataset,
                    splits: SplitAssignment, split: str, count: int, seed: int,
                    cfg: TrainConfig,
                    fixed: FixedEmbeddingTable | None = None) -> list[dict]:
    """Representations of sampled split instances (untemplated), one row each."""
    pool = [inst for inst in dataset.instances
            if inst.class_name in splits.classes_of(split)]
    if count > len(pool):
        raise DataError(f"requested {count} rows but split {split!r} has {len(pool)}")
    rng = trainer.derive_rng(seed, "dump", split)
    picked = [pool[i] for i in rng.choice(len(pool), size=count, replace=False)]
    tensors = params.leaves(requires_grad=False)
    rows = []
    for inst in picked:
        rep = mdl.encode_instance(tensors, vocab, inst.text, inst.row_index, cfg, fixed)
        rows.append({"row_index": inst.row_index, "class_name": inst.class_name,
                     "vector": np.asarray(rep.data, dtype=np.float64)})
    return rows


def embeddings_csv_text(rows: list[dict], d: int) -> str:
    header = ["row_index", "class_name"] + [f"v{i}" for i in range(d)]
    lines = [",".join(header)]
    for row in rows:
        cells = [str(row["row_index"]), row["class_name"]]
        cells += [repr(float(x)) for x in row["vector"]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
