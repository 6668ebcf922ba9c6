"""Tokenization, vocabulary, label templates, and the trainable text encoder.

The encoder is deliberately small: mean-pooled token embeddings pushed
through a tanh hidden layer and a linear output layer. A separate square
projection feeds the attention mechanism.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import DataError, FormatError, ShapeError

DEFAULT_TEMPLATE = "Overall, the topic of the text is"
MAX_SEQUENCE_LENGTH = 256

PAD_TOKEN, PAD_ID = "<pad>", 0
UNK_TOKEN, UNK_ID = "<unk>", 1

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def tokenize(text: str, max_len: int = MAX_SEQUENCE_LENGTH) -> list[str]:
    """Lowercase, map non-alphanumerics to spaces, split, keep first max_len tokens."""
    return _NON_ALNUM.sub(" ", text.lower()).split()[:max_len]


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-id map with reserved padding (0) and unknown (1) entries."""

    token_to_id: Mapping[str, int]
    min_frequency: int = 1

    def __post_init__(self):
        if self.token_to_id.get(PAD_TOKEN) != PAD_ID or self.token_to_id.get(UNK_TOKEN) != UNK_ID:
            raise FormatError("vocabulary must reserve id 0 for padding and 1 for unknown")
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise FormatError("vocabulary ids must be contiguous starting at 0")

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def save(self, path) -> None:
        lines = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        with open(path, "w", encoding="utf-8") as fh:
            for token, idx in lines:
                fh.write(f"{token}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        mapping: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise FormatError(f"vocabulary line {lineno}: expected 'token<TAB>id'")
                try:
                    mapping[parts[0]] = int(parts[1])
                except ValueError as exc:
                    raise FormatError(f"vocabulary line {lineno}: bad id {parts[1]!r}") from exc
        return cls(token_to_id=mapping)


def build_vocab(corpus: Sequence[str], min_frequency: int = 1,
                class_names: Iterable[str] = ()) -> Vocabulary:
    """Vocabulary over a training corpus.

    Keeps every token seen at least min_frequency times, then adds the
    tokens of the provided class names so rendered templates never map to
    unknown. Evaluation splits must not be passed in here: keeping unseen
    classes out of the vocabulary is part of the episode discipline.
    """
    if not corpus:
        raise DataError("build_vocab: corpus is empty")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text, max_len=10**9))
    mapping = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    kept = sorted((t for t, c in counts.items() if c >= min_frequency),
                  key=lambda t: (-counts[t], t))
    for token in kept:
        mapping[token] = len(mapping)
    for name in sorted(set(class_names)):
        for token in tokenize(name):
            if token not in mapping:
                mapping[token] = len(mapping)
    return Vocabulary(token_to_id=mapping, min_frequency=min_frequency)


@dataclass(frozen=True)
class LabelTemplate:
    """Fixed natural-language stem rendered with a class name via a space join."""

    text: str = DEFAULT_TEMPLATE

    def render(self, class_name: str) -> str:
        if not class_name:
            raise DataError("label template: class name is empty")
        return f"{self.text} {class_name}"


def apply_template(template: LabelTemplate, class_name: str, text: str,
                   position: str = "after") -> str:
    """Concatenate the rendered label sentence with the original text.

    "after" (default) makes the label read as a concluding statement;
    "before" puts it ahead of the text.
    """
    rendered = template.render(class_name)
    if position == "after":
        return f"{text} {rendered}"
    if position == "before":
        return f"{rendered} {text}"
    raise ValueError(f"unknown template position {position!r}")


@dataclass
class EncoderParams:
    """Trainable encoder arrays: token embeddings plus a two-layer head.

    hidden_w is (d, input_dim); input_dim equals d in the token path and the
    table width when running on fixed embeddings.
    """

    embedding: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @property
    def d(self) -> int:
        return self.out_w.shape[0]


@dataclass
class ProjectionParams:
    """Square fully connected layer feeding the attention scores."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.shape[0] != self.weight.shape[1] or self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError("projection must keep input and output widths equal")


def init_encoder_params(rng: np.random.Generator, vocab_size: int, d: int,
                        input_dim: int | None = None) -> EncoderParams:
    if d < 2:
        raise ValueError("representation width d must be at least 2")
    input_dim = d if input_dim is None else input_dim
    dtype = ad.get_dtype()
    return EncoderParams(
        embedding=(rng.normal(0.0, 0.1, size=(vocab_size, d))).astype(dtype),
        hidden_w=(rng.normal(0.0, 1.0, size=(d, input_dim)) / np.sqrt(input_dim)).astype(dtype),
        hidden_b=np.zeros(d, dtype=dtype),
        out_w=(rng.normal(0.0, 1.0, size=(d, d)) / np.sqrt(d)).astype(dtype),
        out_b=np.zeros(d, dtype=dtype),
    )


def init_projection_params(rng: np.random.Generator, d: int) -> ProjectionParams:
    dtype = ad.get_dtype()
    return ProjectionParams(
        weight=(rng.normal(0.0, 1.0, size=(d, d)) / np.sqrt(d)).astype(dtype),
        bias=np.zeros(d, dtype=dtype),
    )


def encode(tensors: Mapping[str, ad.Tensor], token_ids: Sequence[int],
           max_len: int = MAX_SEQUENCE_LENGTH,
           fixed_vector: np.ndarray | None = None) -> ad.Tensor:
    """Representation of a token sequence (or of a precomputed fixed vector).

    Mean token embedding -> tanh hidden layer -> linear output. The output
    width is the encoder's d regardless of sequence length; an empty
    sequence contributes a zero pooled vector.
    """
    if fixed_vector is not None:
        pooled = ad.const(fixed_vector)
    else:
        pooled = ad.embed_mean(tensors["embedding"], list(token_ids)[:max_len])
    hidden = ad.tanh(ad.add(ad.matvec(tensors["hidden_w"], pooled), tensors["hidden_b"]))
    return ad.add(ad.matvec(tensors["out_w"], hidden), tensors["out_b"])


def project(tensors: Mapping[str, ad.Tensor], v: ad.Tensor) -> ad.Tensor:
    """Attention projection g(v) = weight @ v + bias (dimension preserving)."""
    return ad.add(ad.matvec(tensors["proj_w"], v), tensors["proj_b"])
