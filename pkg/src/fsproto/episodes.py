"""Dataset ingestion, class splits, and N-way K-shot episode sampling.

Datasets are UTF-8 JSON-lines with string fields "text" and "label"; the
row index is the zero-based line number and also keys the optional
fixed-embedding table. Support texts are templated with their own class
name; query texts are never modified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .encoder import LabelTemplate, apply_template, tokenize
from .errors import DataError, EpisodeError, SplitError
from .serialize import read_fixed_embeddings

SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class LabeledInstance:
    text: str
    class_name: str
    class_id: int
    row_index: int


@dataclass
class Dataset:
    """Instances in file order plus the first-appearance label map."""

    instances: list[LabeledInstance]
    label_map: dict[str, int]

    @cached_property
    def by_class(self) -> dict[str, list[LabeledInstance]]:
        grouped: dict[str, list[LabeledInstance]] = {name: [] for name in self.label_map}
        for inst in self.instances:
            grouped[inst.class_name].append(inst)
        return grouped

    @property
    def class_names(self) -> list[str]:
        return list(self.label_map)

    def __len__(self) -> int:
        return len(self.instances)

    def stats(self) -> dict:
        counts = {name: len(group) for name, group in self.by_class.items()}
        lengths = [len(tokenize(inst.text, max_len=10**9)) for inst in self.instances]
        return {
            "samples": len(self.instances),
            "classes": len(self.label_map),
            "instances_per_class_min": min(counts.values()),
            "instances_per_class_max": max(counts.values()),
            "mean_token_length": float(np.mean(lengths)) if lengths else 0.0,
        }


def load_dataset(path) -> Dataset:
    instances: list[LabeledInstance] = []
    label_map: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            for key in ("text", "label"):
                if key not in record:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
                if not isinstance(record[key], str):
                    raise DataError(f"{path}:{lineno}: field {key!r} must be a string")
            label = record["label"]
            if label not in label_map:
                label_map[label] = len(label_map)
            instances.append(LabeledInstance(
                text=record["text"],
                class_name=label,
                class_id=label_map[label],
                row_index=len(instances),
            ))
    if not instances:
        raise DataError(f"{path}: dataset is empty")
    return Dataset(instances=instances, label_map=label_map)


@dataclass(frozen=True)
class SplitAssignment:
    """Pairwise-disjoint train/valid/test class-name sets covering the dataset."""

    train: frozenset[str]
    valid: frozenset[str]
    test: frozenset[str]

    def classes_of(self, split: str) -> frozenset[str]:
        if split not in SPLIT_NAMES:
            raise SplitError(f"unknown split {split!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, split)

    def counts(self) -> dict[str, int]:
        return {name: len(self.classes_of(name)) for name in SPLIT_NAMES}


def load_splits(path, dataset: Dataset) -> SplitAssignment:
    with open(path, encoding="utf-8") as fh:
        try:
            record = json.loads(fh.read())
        except json.JSONDecodeError as exc:
            raise SplitError(f"{path}: malformed JSON ({exc.msg})") from exc
    if not isinstance(record, dict) or set(record) != set(SPLIT_NAMES):
        raise SplitError(f'{path}: expected an object with keys "train", "valid", "test"')
    sets = {}
    for name in SPLIT_NAMES:
        entries = record[name]
        if not isinstance(entries, list) or not all(isinstance(c, str) for c in entries):
            raise SplitError(f"{path}: split {name!r} must be a list of class names")
        if len(entries) != len(set(entries)):
            dup = sorted(c for c in entries if entries.count(c) > 1)[0]
            raise SplitError(f"{path}: class {dup!r} listed twice under {name!r}")
        sets[name] = frozenset(entries)
    for a in range(len(SPLIT_NAMES)):
        for b in range(a + 1, len(SPLIT_NAMES)):
            overlap = sets[SPLIT_NAMES[a]] & sets[SPLIT_NAMES[b]]
            if overlap:
                raise SplitError(
                    f"{path}: class {sorted(overlap)[0]!r} appears in both "
                    f"{SPLIT_NAMES[a]!r} and {SPLIT_NAMES[b]!r}")
    assigned = sets["train"] | sets["valid"] | sets["test"]
    dataset_classes = set(dataset.label_map)
    missing = dataset_classes - assigned
    if missing:
        raise SplitError(f"{path}: dataset class {sorted(missing)[0]!r} missing from the split file")
    unknown = assigned - dataset_classes
    if unknown:
        raise SplitError(f"{path}: split class {sorted(unknown)[0]!r} not present in the dataset")
    return SplitAssignment(train=sets["train"], valid=sets["valid"], test=sets["test"])


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    m_query: int

    def __post_init__(self):
        if self.n_way < 2:
            raise EpisodeError(f"n_way must be at least 2, got {self.n_way}")
        if self.k_shot < 1 or self.m_query < 1:
            raise EpisodeError("k_shot and m_query must be at least 1")


@dataclass(frozen=True)
class SupportItem:
    text: str  # templated when a template is in effect
    local_label: int
    class_name: str
    row_index: int


@dataclass(frozen=True)
class QueryItem:
    text: str  # always the original text
    local_label: int
    row_index: int


@dataclass(frozen=True)
class QueryView:
    """Label-free view handed to the classification path."""

    text: str
    row_index: int


@dataclass(frozen=True)
class Episode:
    support: tuple[SupportItem, ...]
    query: tuple[QueryItem, ...]
    class_map: tuple[str, ...]  # local label -> global class name
    templated: bool

    @property
    def n_way(self) -> int:
        return len(self.class_map)

    @property
    def k_shot(self) -> int:
        return len(self.support) // len(self.class_map)

    @property
    def m_query(self) -> int:
        return len(self.query) // len(self.class_map)

    def query_views(self) -> list[QueryView]:
        return [QueryView(text=q.text, row_index=q.row_index) for q in self.query]

    def query_labels(self) -> list[int]:
        return [q.local_label for q in self.query]


def sample_episode(dataset: Dataset, splits: SplitAssignment, split: str,
                   spec: EpisodeSpec, template: LabelTemplate | None,
                   rng: np.random.Generator,
                   template_position: str = "after") -> Episode:
    """Draw one class-balanced episode from the given split.

    N classes uniformly without replacement; per class K+M instances without
    replacement, the first K templated into the support set and the rest
    untouched into the query set. Local labels follow the sampled class order.
    """
    pool = sorted(splits.classes_of(split))
    if len(pool) < spec.n_way:
        raise EpisodeError(
            f"split {split!r} has {len(pool)} classes but the episode needs {spec.n_way}")
    chosen = [pool[i] for i in rng.choice(len(pool), size=spec.n_way, replace=False)]
    need = spec.k_shot + spec.m_query
    support: list[SupportItem] = []
    query: list[QueryItem] = []
    for local, class_name in enumerate(chosen):
        members = dataset.by_class[class_name]
        if len(members) < need:
            raise EpisodeError(
                f"class {class_name!r} has {len(members)} instances but the episode "
                f"needs {need} (K={spec.k_shot} support + M={spec.m_query} query)")
        picked = rng.choice(len(members), size=need, replace=False)
        for j in picked[:spec.k_shot]:
            inst = members[j]
            text = inst.text if template is None else apply_template(
                template, class_name, inst.text, position=template_position)
            support.append(SupportItem(text=text, local_label=local,
                                       class_name=class_name, row_index=inst.row_index))
        for j in picked[spec.k_shot:]:
            inst = members[j]
            query.append(QueryItem(text=inst.text, local_label=local, row_index=inst.row_index))
    return Episode(support=tuple(support), query=tuple(query),
                   class_map=tuple(chosen), templated=template is not None)


@dataclass(frozen=True)
class FixedEmbeddingTable:
    """One precomputed vector per dataset row; replaces the token pooling path."""

    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def row(self, row_index: int) -> np.ndarray:
        return self.vectors[row_index]


def load_fixed_embeddings(path, dataset: Dataset) -> FixedEmbeddingTable:
    vectors = read_fixed_embeddings(path)
    if vectors.shape[0] != len(dataset):
        raise DataError(
            f"{path}: embedding count {vectors.shape[0]} does not match dataset size {len(dataset)}")
    if not np.all(np.isfinite(vectors)):
        bad = int(np.argwhere(~np.isfinite(vectors).all(axis=1))[0][0])
        raise DataError(f"{path}: non-finite embedding at row {bad}")
    return FixedEmbeddingTable(vectors=vectors)
