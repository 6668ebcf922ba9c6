"""Supervised contrastive loss over the merged support+query set of an episode.

Pairwise temperature-scaled cosine similarities; each instance is pulled
toward the other members of its class and pushed from everything else. Two
aggregation forms are supported: "out" (default) averages log-ratios over
the positives, "in" takes the log of the averaged positive ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import autodiff as ad
from .errors import EpisodeError

SUPCON_FORMS = ("out", "in")


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 5.0
    form: str = "out"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.form not in SUPCON_FORMS:
            raise ValueError(f"supcon form must be one of {SUPCON_FORMS}, got {self.form!r}")


@dataclass(frozen=True)
class ContrastiveIndexSets:
    """For each anchor p: A(p) = everyone else, H(p) = same-label subset of A(p)."""

    contrast: tuple[tuple[int, ...], ...]
    positives: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.contrast)


def build_index_sets(labels: Sequence[int]) -> ContrastiveIndexSets:
    n = len(labels)
    contrast = []
    positives = []
    for p in range(n):
        others = tuple(t for t in range(n) if t != p)
        contrast.append(others)
        positives.append(tuple(h for h in others if labels[h] == labels[p]))
    return ContrastiveIndexSets(contrast=tuple(contrast), positives=tuple(positives))


def cosine_sim(v1: ad.Tensor, v2: ad.Tensor) -> ad.Tensor:
    """Cosine similarity in [-1, 1]; zero-norm inputs are guarded, not fatal."""
    return ad.cosine(v1, v2)


def supcon_loss(reps: Sequence[ad.Tensor], labels: Sequence[int],
                config: ContrastiveConfig = ContrastiveConfig()) -> ad.Tensor:
    """Total supervised contrastive loss over all instances.

    Out form per anchor: logsumexp of scaled similarities over A(p) minus the
    mean scaled similarity over H(p). In form: log|H(p)| + logsumexp over A(p)
    minus logsumexp over H(p). Both are summed over anchors.
    """
    if len(reps) != len(labels):
        raise EpisodeError("supcon_loss: representations and labels are misaligned")
    sets = build_index_sets(labels)
    for p, positives in enumerate(sets.positives):
        if not positives:
            raise EpisodeError(
                f"supcon_loss: instance {p} has no same-class partner; "
                "episodes must provide K+M >= 2 per class")
    inv_tau = ad.const(1.0 / config.tau)
    n = len(reps)
    sims: dict[tuple[int, int], ad.Tensor] = {}
    for p in range(n):
        for t in range(p + 1, n):
            sims[(p, t)] = ad.mul(ad.cosine(reps[p], reps[t]), inv_tau)

    def sim(p: int, t: int) -> ad.Tensor:
        return sims[(p, t)] if p < t else sims[(t, p)]

    total: ad.Tensor | None = None
    for p in range(n):
        everyone = ad.stack([sim(p, t) for t in sets.contrast[p]])
        lse_all = ad.logsumexp(everyone)
        positives = sets.positives[p]
        if config.form == "out":
            pos_sum: ad.Tensor | None = None
            for h in positives:
                pos_sum = sim(p, h) if pos_sum is None else ad.add(pos_sum, sim(p, h))
            per_anchor = ad.sub(lse_all, ad.mul(pos_sum, ad.const(1.0 / len(positives))))
        else:
            lse_pos = ad.logsumexp(ad.stack([sim(p, h) for h in positives]))
            per_anchor = ad.add(ad.const(math.log(len(positives))), ad.sub(lse_all, lse_pos))
        total = per_anchor if total is None else ad.add(total, per_anchor)
    return total
