"""Model parameters and the per-episode forward pass tying the pieces together.

One episode forward: encode templated support texts and raw query texts,
apply the contrastive loss to the merged set, build (attention) prototypes,
classify queries by distance softmax, and combine the two losses with the
annealed weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import protonet
from .config import TrainConfig
from .contrastive import ContrastiveConfig, supcon_loss
from .episodes import Episode, FixedEmbeddingTable, QueryView

PARAM_NAMES = ("embedding", "hidden_w", "hidden_b", "out_w", "out_b", "proj_w", "proj_b")


@dataclass
class ModelParams:
    """All trainable arrays; storage stays numpy, graphs get per-step leaves."""

    embedding: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray

    @property
    def d(self) -> int:
        return self.out_w.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def leaves(self, requires_grad: bool = False) -> dict[str, ad.Tensor]:
        return {name: ad.Tensor(arr, requires_grad=requires_grad)
                for name, arr in self.as_dict().items()}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: arr.copy() for name, arr in self.as_dict().items()})


def init_params(rng: np.random.Generator, vocab_size: int, d: int,
                input_dim: int | None = None) -> ModelParams:
    e = enc.init_encoder_params(rng, vocab_size, d, input_dim=input_dim)
    g = enc.init_projection_params(rng, d)
    return ModelParams(embedding=e.embedding, hidden_w=e.hidden_w, hidden_b=e.hidden_b,
                       out_w=e.out_w, out_b=e.out_b, proj_w=g.weight, proj_b=g.bias)


def params_from_blocks(blocks: Mapping[str, np.ndarray], d: int) -> ModelParams:
    """Rebuild shaped parameters from flat checkpoint blocks."""
    shaped = {}
    for name in PARAM_NAMES:
        flat = np.asarray(blocks[name], dtype=ad.get_dtype())
        if name in ("hidden_b", "out_b", "proj_b"):
            shaped[name] = flat.reshape(d)
        elif name == "embedding":
            shaped[name] = flat.reshape(-1, d)
        elif name == "hidden_w":
            shaped[name] = flat.reshape(d, -1)  # rectangular in fixed-embedding mode
        else:
            shaped[name] = flat.reshape(d, d)
    return ModelParams(**shaped)


def encode_instance(tensors: Mapping[str, ad.Tensor], vocab: enc.Vocabulary, text: str,
                 row_index: int, cfg: TrainConfig,
                 fixed: FixedEmbeddingTable | None) -> ad.Tensor:
    if fixed is not None:
        return enc.encode(tensors, (), max_len=cfg.max_seq_len,
                          fixed_vector=fixed.row(row_index))
    ids = vocab.encode(enc.tokenize(text, max_len=cfg.max_seq_len))
    return enc.encode(tensors, ids, max_len=cfg.max_seq_len)


def episode_representations(tensors: Mapping[str, ad.Tensor], vocab: enc.Vocabulary,
                            episode: Episode, cfg: TrainConfig,
                            fixed: FixedEmbeddingTable | None = None,
                            query_views: Sequence[QueryView] | None = None,
                            ) -> tuple[list[list[ad.Tensor]], list[ad.Tensor]]:
    """Support representations grouped by local label, plus query representations."""
    support_reps: list[list[ad.Tensor]] = [[] for _ in range(episode.n_way)]
    for item in episode.support:
        support_reps[item.local_label].append(
            encode_instance(tensors, vocab, item.text, item.row_index, cfg, fixed))
    views = episode.query_views() if query_views is None else list(query_views)
    query_reps = [encode_instance(tensors, vocab, v.text, v.row_index, cfg, fixed)
                  for v in views]
    return support_reps, query_reps


def classify_episode(tensors: Mapping[str, ad.Tensor], vocab: enc.Vocabulary,
                     episode: Episode, cfg: TrainConfig,
                     fixed: FixedEmbeddingTable | None = None,
                     ) -> tuple[list[ad.Tensor], list[list[ad.Tensor]], list[ad.Tensor]]:
    """Probability vectors for every query (plus the reps for reuse)."""
    support_reps, query_reps = episode_representations(tensors, vocab, episode, cfg, fixed)
    protos_per_query = protonet.episode_prototypes(
        support_reps, query_reps, tensors, mode=cfg.attention_mode,
        attention_on=cfg.attention_on)
    probs = [protonet.classify(q, protos, kind=cfg.distance)
             for q, protos in zip(query_reps, protos_per_query)]
    return probs, support_reps, query_reps


@dataclass
class EpisodeLossResult:
    loss: ad.Tensor
    l_pn: float
    l_con: float
    rho: float
    train_acc: float
    clamped: bool


def episode_loss(tensors: Mapping[str, ad.Tensor], vocab: enc.Vocabulary,
                 episode: Episode, cfg: TrainConfig, rho: float,
                 fixed: FixedEmbeddingTable | None = None) -> EpisodeLossResult:
    """Combined multi-task objective for one training episode."""
    probs, support_reps, query_reps = classify_episode(tensors, vocab, episode, cfg, fixed)
    labels = episode.query_labels()
    l_pn, clamped = protonet.protonet_loss(probs, labels)

    predictions = [int(np.argmax(p.data)) for p in probs]
    train_acc = float(np.mean([p == t for p, t in zip(predictions, labels)]))

    if cfg.contrastive_on:
        all_reps = [rep for class_reps in support_reps for rep in class_reps] + query_reps
        all_labels = [item.local_label for item in episode.support] + labels
        l_con = supcon_loss(all_reps, all_labels,
                            ContrastiveConfig(tau=cfg.tau, form=cfg.supcon_form))
        loss = ad.add(ad.mul(ad.const(1.0 - rho), l_pn), ad.mul(ad.const(rho), l_con))
        l_con_value = float(l_con.data)
    else:
        loss = l_pn  # rho is ignored when the contrastive task is disabled
        l_con_value = 0.0

    return EpisodeLossResult(loss=loss, l_pn=float(l_pn.data), l_con=l_con_value,
                             rho=rho, train_acc=train_acc, clamped=clamped)


def predict_episode(params: ModelParams, vocab: enc.Vocabulary, episode: Episode,
                    cfg: TrainConfig,
                    fixed: FixedEmbeddingTable | None = None) -> list[int]:
    """Predicted local labels for the episode's queries; label-free input path."""
    tensors = params.leaves(requires_grad=False)
    probs, _, _ = classify_episode(tensors, vocab, episode, cfg, fixed)
    return [int(np.argmax(p.data)) for p in probs]
