"""Run configuration shared by the trainer, evaluator, ablation harness, and CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .contrastive import SUPCON_FORMS
from .encoder import DEFAULT_TEMPLATE, MAX_SEQUENCE_LENGTH
from .episodes import EpisodeSpec
from .protonet import ATTENTION_MODES, DISTANCES

RHO_SCHEDULES = ("linear",)  # plus "constant:<value>"


@dataclass
class TrainConfig:
    # episode construction
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 5
    # model
    dim: int = 64
    max_seq_len: int = MAX_SEQUENCE_LENGTH
    min_freq: int = 1
    template: str = DEFAULT_TEMPLATE
    template_position: str = "after"
    distance: str = "euclidean"
    attention_mode: str = "per-query"
    tau: float = 5.0
    supcon_form: str = "out"
    # component toggles (ablation switches)
    attention_on: bool = True
    contrastive_on: bool = True
    template_on: bool = True
    # optimization
    lr: float = 1e-3
    max_iters: int = 10000
    eval_every: int = 100
    patience: int = 3
    eval_episodes: int = 1000
    rho_schedule: str = "linear"
    seed: int = 0

    def validate(self) -> None:
        self.episode_spec()  # raises on bad N/K/M
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.max_seq_len < 1:
            raise ValueError("max_seq_len must be positive")
        if self.min_freq < 1:
            raise ValueError("min_freq must be at least 1")
        if self.template_position not in ("before", "after"):
            raise ValueError(f"template_position must be 'before' or 'after', got {self.template_position!r}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.supcon_form not in SUPCON_FORMS:
            raise ValueError(f"supcon_form must be one of {SUPCON_FORMS}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 1 <= self.eval_every <= self.max_iters:
            raise ValueError("eval_every must lie in [1, max_iters]")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be positive")
        parse_rho_schedule(self.rho_schedule)

    def episode_spec(self) -> EpisodeSpec:
        return EpisodeSpec(n_way=self.n_way, k_shot=self.k_shot, m_query=self.m_query)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


def parse_rho_schedule(spec: str):
    """Return rho(step, max_iterations) for a schedule spec.

    "linear" anneals 0 -> 1 across max_iterations; "constant:<v>" holds v.
    """
    if spec == "linear":
        def linear(step: int, max_iterations: int) -> float:
            if not 0 <= step <= max_iterations:
                raise ValueError(f"step {step} outside [0, {max_iterations}]")
            return step / max_iterations

        return linear
    if spec.startswith("constant:"):
        value = float(spec.split(":", 1)[1])
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"constant rho must lie in [0, 1], got {value}")

        def constant(step: int, max_iterations: int) -> float:
            return value

        return constant
    raise ValueError(f"unknown rho schedule {spec!r}; use 'linear' or 'constant:<v>'")
