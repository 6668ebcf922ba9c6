"""Episodic multi-task training: Adam, loss weighting, early stopping, metrics.

The loop samples a training episode, backpropagates the combined loss, and
takes one Adam step; every eval_every iterations the validation split is
scored and the best checkpoint retained. All randomness is derived from the
run seed, so identical configs reproduce identical histories bit for bit.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .config import TrainConfig, parse_rho_schedule
from .encoder import LabelTemplate, Vocabulary, build_vocab
from .episodes import (Dataset, Episode, EpisodeSpec, FixedEmbeddingTable,
                       SplitAssignment, sample_episode)
from .errors import TrainingError
from .serialize import atomic_write_bytes, write_checkpoint

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8

HISTORY_COLUMNS = ("iteration", "l_pn", "l_con", "rho", "loss",
                   "train_acc", "val_acc", "val_f1")


def derive_rng(seed: int, *key) -> np.random.Generator:
    """Independent generator for a (seed, purpose...) key; strings are hashed."""
    parts = [seed & 0xFFFFFFFF]
    for item in key:
        if isinstance(item, str):
            parts.append(zlib.crc32(item.encode("utf-8")))
        else:
            parts.append(int(item) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))


def rho_schedule(step: int, max_iterations: int, spec: str = "linear") -> float:
    """Loss mixing weight at a step; the default anneals linearly 0 -> 1."""
    return parse_rho_schedule(spec)(step, max_iterations)


def combined_loss(l_pn: float, l_con: float, rho: float,
                  contrastive_on: bool = True) -> float:
    """(1 - rho) * l_pn + rho * l_con; just l_pn when the contrastive task is off."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if not contrastive_on:
        return l_pn
    return (1.0 - rho) * l_pn + rho * l_con


@dataclass
class OptimizerState:
    """Adam moments per parameter, plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_init(params: mdl.ModelParams) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(arr) for name, arr in params.as_dict().items()},
        v={name: np.zeros_like(arr) for name, arr in params.as_dict().items()},
    )


def adam_step(params: mdl.ModelParams, grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> tuple[mdl.ModelParams, OptimizerState]:
    """One bias-corrected Adam update, applied in place and returned."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, arr in params.as_dict().items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / (1.0 - state.beta1 ** t)
        v_hat = state.v[name] / (1.0 - state.beta2 ** t)
        arr -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(arr.dtype)
    return params, state


@dataclass
class LossReport:
    iteration: int
    l_pn: float
    l_con: float
    rho: float
    loss: float
    train_acc: float
    clamped: bool = False
    val_acc: float | None = None
    val_f1: float | None = None


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    acc_std: float
    f1_std: float
    episodes: int
    per_episode_acc: np.ndarray | None = None
    per_episode_f1: np.ndarray | None = None


def macro_f1(true_labels, predicted_labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; every class here has ground-truth members."""
    true_labels = np.asarray(true_labels)
    predicted_labels = np.asarray(predicted_labels)
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((predicted_labels == c) & (true_labels == c)))
        fp = int(np.sum((predicted_labels == c) & (true_labels != c)))
        fn = int(np.sum((predicted_labels != c) & (true_labels == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(scores))


def evaluate(params: mdl.ModelParams, vocab: Vocabulary, dataset: Dataset,
             splits: SplitAssignment, split: str, episodes: int, spec: EpisodeSpec,
             cfg: TrainConfig, seed: int,
             fixed: FixedEmbeddingTable | None = None,
             keep_per_episode: bool = False) -> Metrics:
    """Mean per-episode accuracy and macro-F1 over freshly sampled episodes.

    Episode streams are keyed by (seed, split, index) only, so repeated calls
    score the same episodes - evaluations stay paired across rounds and runs.
    """
    template = LabelTemplate(cfg.template) if cfg.template_on else None
    accs = np.zeros(episodes)
    f1s = np.zeros(episodes)
    for idx in range(episodes):
        rng = derive_rng(seed, "eval", split, idx)
        episode = sample_episode(dataset, splits, split, spec, template, rng,
                                 template_position=cfg.template_position)
        predictions = mdl.predict_episode(params, vocab, episode, cfg, fixed)
        labels = episode.query_labels()
        accs[idx] = float(np.mean([p == t for p, t in zip(predictions, labels)]))
        f1s[idx] = macro_f1(labels, predictions, episode.n_way)
    return Metrics(
        accuracy=float(accs.mean()), macro_f1=float(f1s.mean()),
        acc_std=float(accs.std()), f1_std=float(f1s.std()), episodes=episodes,
        per_episode_acc=accs if keep_per_episode else None,
        per_episode_f1=f1s if keep_per_episode else None,
    )


@dataclass
class TrainResult:
    params: mdl.ModelParams
    vocab: Vocabulary
    history: list[LossReport]
    best_iteration: int
    best_val_acc: float
    stopped_early: bool
    eval_spec: EpisodeSpec
    input_dim: int


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest round-trip form keeps files byte-stable
    return str(value)


def history_csv_text(history: list[LossReport]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(_format_cell(v) for v in (
            row.iteration, row.l_pn, row.l_con, row.rho, row.loss,
            row.train_acc, row.val_acc, row.val_f1)))
    return "\n".join(lines) + "\n"


def write_history_csv(path, history: list[LossReport]) -> None:
    atomic_write_bytes(path, history_csv_text(history).encode("utf-8"))


def build_training_vocab(dataset: Dataset, splits: SplitAssignment,
                         min_frequency: int = 1) -> Vocabulary:
    """Vocabulary from the training split's texts and class names only."""
    train_classes = splits.classes_of("train")
    corpus = [inst.text for inst in dataset.instances if inst.class_name in train_classes]
    return build_vocab(corpus, min_frequency=min_frequency, class_names=train_classes)


def capped_eval_spec(cfg: TrainConfig, splits: SplitAssignment, split: str) -> EpisodeSpec:
    """The episode shape used for evaluation; N capped to the split's class count."""
    n = min(cfg.n_way, len(splits.classes_of(split)))
    return EpisodeSpec(n_way=n, k_shot=cfg.k_shot, m_query=cfg.m_query)


def train(cfg: TrainConfig, dataset: Dataset, splits: SplitAssignment,
          fixed: FixedEmbeddingTable | None = None,
          out_dir: str | None = None,
          log=None) -> TrainResult:
    """Full training run; returns the best-validation parameters and history."""
    cfg.validate()
    say = log if log is not None else (lambda *_: None)
    vocab = build_training_vocab(dataset, splits, min_frequency=cfg.min_freq)
    input_dim = fixed.dim if fixed is not None else cfg.dim
    params = mdl.init_params(derive_rng(cfg.seed, "init"), len(vocab), cfg.dim,
                             input_dim=input_dim)
    state = adam_init(params)
    schedule = parse_rho_schedule(cfg.rho_schedule)
    template = LabelTemplate(cfg.template) if cfg.template_on else None
    train_spec = cfg.episode_spec()
    val_spec = capped_eval_spec(cfg, splits, "valid")
    if val_spec.n_way < cfg.n_way:
        say(f"validation split has only {val_spec.n_way} classes; "
            f"evaluating {val_spec.n_way}-way instead of {cfg.n_way}-way")

    history: list[LossReport] = []
    best = params.copy()
    best_iteration = 0
    best_val_acc = -1.0
    stale_evals = 0
    stopped_early = False

    checkpoint_path = os.path.join(out_dir, "checkpoint.fsck") if out_dir else None
    history_path = os.path.join(out_dir, "history.csv") if out_dir else None

    for it in range(1, cfg.max_iters + 1):
        rng = derive_rng(cfg.seed, "train-episode", it)
        episode = sample_episode(dataset, splits, "train", train_spec, template, rng,
                                 template_position=cfg.template_position)
        rho = schedule(it, cfg.max_iters)
        leaves = params.leaves(requires_grad=True)
        with ad.Tape() as tape:
            result = mdl.episode_loss(leaves, vocab, episode, cfg, rho, fixed)
        tape.backward(result.loss)
        grads = {name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
                 for name, leaf in leaves.items()}
        try:
            adam_step(params, grads, state, cfg.lr)
        except TrainingError as exc:
            raise TrainingError(f"iteration {it}: {exc}") from exc

        report = LossReport(
            iteration=it, l_pn=result.l_pn, l_con=result.l_con, rho=rho,
            loss=combined_loss(result.l_pn, result.l_con, rho, cfg.contrastive_on),
            train_acc=result.train_acc, clamped=result.clamped)

        if it % cfg.eval_every == 0:
            metrics = evaluate(params, vocab, dataset, splits, "valid",
                               cfg.eval_episodes, val_spec, cfg, cfg.seed, fixed)
            report.val_acc = metrics.accuracy
            report.val_f1 = metrics.macro_f1
            if metrics.accuracy > best_val_acc:
                best = params.copy()
                best_iteration = it
                best_val_acc = metrics.accuracy
                stale_evals = 0
            else:
                stale_evals += 1
        history.append(report)

        if report.val_acc is not None:
            say(f"iter {it}: loss={report.loss:.4f} val_acc={report.val_acc:.4f} "
                f"val_f1={report.val_f1:.4f} best={best_val_acc:.4f}@{best_iteration}")
            # persist after each evaluation so an interrupted run stays loadable
            if checkpoint_path:
                write_checkpoint(checkpoint_path, best.d, best.vocab_size, best.as_dict())
            if history_path:
                write_history_csv(history_path, history)
            if stale_evals >= cfg.patience:
                stopped_early = True
                say(f"early stop at iteration {it} after {stale_evals} stagnant evaluations")
                break

    if checkpoint_path:
        write_checkpoint(checkpoint_path, best.d, best.vocab_size, best.as_dict())
    if history_path:
        write_history_csv(history_path, history)
    return TrainResult(params=best, vocab=vocab, history=history,
                       best_iteration=best_iteration, best_val_acc=best_val_acc,
                       stopped_early=stopped_early, eval_spec=val_spec,
                       input_dim=input_dim)
