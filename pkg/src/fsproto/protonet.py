"""Instance attention over support samples, weighted prototypes, and the
distance-softmax classifier with its cross-entropy loss.

Attention weighs each support sample by its relevance to the query through
a shared projection: score = sum(tanh(g(v_s) * g(v_q))). With equal scores
(or attention off) the prototypes reduce exactly to class means.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import encoder
from .errors import EpisodeError, ShapeError

DISTANCES = ("euclidean", "sqeuclidean", "cosine")
ATTENTION_MODES = ("per-query", "aggregated")

PROB_FLOOR = 1e-12  # classifier probabilities are clamped here before log


def attention_score(support_rep: ad.Tensor, query_rep: ad.Tensor,
                    proj: Mapping[str, ad.Tensor]) -> ad.Tensor:
    """Raw relevance of one support sample to one query."""
    return attention_score_projected(encoder.project(proj, support_rep),
                                     encoder.project(proj, query_rep))


def attention_score_projected(projected_support: ad.Tensor,
                              projected_query: ad.Tensor) -> ad.Tensor:
    """Score from already-projected representations: sum(tanh(ps * pq))."""
    return ad.vsum(ad.tanh(ad.mul(projected_support, projected_query)))


def attention_weights(scores: Sequence[ad.Tensor]) -> ad.Tensor:
    """Normalized per-class weights; stable softmax, sums to one."""
    if not scores:
        raise EpisodeError("attention_weights: need at least one score")
    return ad.softmax(ad.stack(list(scores)))


def weighted_prototype(reps: Sequence[ad.Tensor], weights: ad.Tensor) -> ad.Tensor:
    """Convex combination of support representations."""
    if weights.data.shape != (len(reps),):
        raise ShapeError("weighted_prototype: one weight per representation required")
    proto: ad.Tensor | None = None
    for i, rep in enumerate(reps):
        term = ad.mul(ad.pick(weights, i), rep)
        proto = term if proto is None else ad.add(proto, term)
    return proto


def uniform_weights(k: int) -> ad.Tensor:
    # softmax of equal scores yields exactly these floats, so the attention-off
    # path stays bit-identical to attention with a constant-score projection
    return ad.const(np.full(k, 1.0 / k, dtype=ad.get_dtype()))


def prototypes_for_query(support_reps: Sequence[Sequence[ad.Tensor]],
                         query_rep: ad.Tensor,
                         proj: Mapping[str, ad.Tensor]) -> list[ad.Tensor]:
    """Per-query attention prototypes, one per class, K=1 reducing to the lone rep."""
    protos = []
    for class_reps in support_reps:
        if len(class_reps) == 1:
            protos.append(class_reps[0])
            continue
        scores = [attention_score(rep, query_rep, proj) for rep in class_reps]
        protos.append(weighted_prototype(class_reps, attention_weights(scores)))
    return protos


def episode_prototypes(support_reps: Sequence[Sequence[ad.Tensor]],
                       query_reps: Sequence[ad.Tensor],
                       proj: Mapping[str, ad.Tensor],
                       mode: str = "per-query",
                       attention_on: bool = True) -> list[list[ad.Tensor]]:
    """Prototype set for every query.

    per-query: each query induces its own prototypes from its own scores.
    aggregated: scores are summed over the whole query set and one shared
    prototype set is reused. Attention off forces uniform weights (shared).
    """
    if mode not in ATTENTION_MODES:
        raise ValueError(f"attention mode must be one of {ATTENTION_MODES}, got {mode!r}")
    k = len(support_reps[0])
    if not attention_on or k == 1:
        shared = [class_reps[0] if k == 1 else
                  weighted_prototype(class_reps, uniform_weights(k))
                  for class_reps in support_reps]
        return [shared] * len(query_reps)

    projected_support = [[encoder.project(proj, rep) for rep in class_reps]
                         for class_reps in support_reps]
    projected_queries = [encoder.project(proj, q) for q in query_reps]

    if mode == "aggregated":
        shared = []
        for class_reps, class_proj in zip(support_reps, projected_support):
            scores = []
            for ps in class_proj:
                total: ad.Tensor | None = None
                for pq in projected_queries:
                    term = attention_score_projected(ps, pq)
                    total = term if total is None else ad.add(total, term)
                scores.append(total)
            shared.append(weighted_prototype(class_reps, attention_weights(scores)))
        return [shared] * len(query_reps)

    per_query = []
    for pq in projected_queries:
        protos = []
        for class_reps, class_proj in zip(support_reps, projected_support):
            scores = [attention_score_projected(ps, pq) for ps in class_proj]
            protos.append(weighted_prototype(class_reps, attention_weights(scores)))
        per_query.append(protos)
    return per_query


def distance(u: ad.Tensor, v: ad.Tensor, kind: str = "euclidean") -> ad.Tensor:
    if kind == "euclidean":
        return ad.eucdist(u, v)
    if kind == "sqeuclidean":
        return ad.sqdist(u, v)
    if kind == "cosine":
        return ad.sub(ad.const(1.0), ad.cosine(u, v))
    raise ValueError(f"distance must be one of {DISTANCES}, got {kind!r}")


def classify(query_rep: ad.Tensor, prototypes: Sequence[ad.Tensor],
             kind: str = "euclidean") -> ad.Tensor:
    """Class probabilities: softmax over negative prototype distances."""
    dists = [distance(query_rep, proto, kind) for proto in prototypes]
    return ad.softmax(ad.stack([ad.neg(d) for d in dists]))


def protonet_loss(prob_vectors: Sequence[ad.Tensor],
                  true_labels: Sequence[int]) -> tuple[ad.Tensor, bool]:
    """Cross-entropy against one-hot query labels, summed over queries.

    Returns (loss, clamped): clamped is True when any true-class probability
    hit the floor before the log.
    """
    if len(prob_vectors) != len(true_labels):
        raise EpisodeError("protonet_loss: probabilities and labels are misaligned")
    total: ad.Tensor | None = None
    clamped = False
    for probs, label in zip(prob_vectors, true_labels):
        p_true = ad.pick(probs, int(label))
        if float(p_true.data) <= PROB_FLOOR:
            clamped = True
        term = ad.neg(ad.log(ad.clamp_min(p_true, PROB_FLOOR)))
        total = term if total is None else ad.add(total, term)
    return total, clamped
