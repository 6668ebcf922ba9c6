"""Component-wise gradient verification for every differentiable piece.

Runs in float64 on a tiny fixture episode (N=2, K=2, M=2, d=4) and compares
reverse-mode gradients with central finite differences, parameter block by
parameter block.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import model as mdl
from . import protonet
from .config import TrainConfig
from .contrastive import ContrastiveConfig, supcon_loss
from .encoder import LabelTemplate
from .episodes import Dataset, EpisodeSpec, LabeledInstance, SplitAssignment, sample_episode
from .trainer import derive_rng

FIXTURE_SPEC = EpisodeSpec(n_way=2, k_shot=2, m_query=2)
FIXTURE_D = 4

COMPONENTS = ("encoder", "projection", "supcon_out", "supcon_in",
              "attention_score", "attention_weights", "classifier", "combined")


def _fixture(seed: int = 0):
    """Tiny in-memory dataset, vocabulary, params, and one sampled episode."""
    rng = derive_rng(seed, "gradcheck-data")
    words = [f"w{i}" for i in range(8)]
    rows = []
    for c in range(3):
        for i in range(5):
            picks = rng.choice(len(words), size=4)
            text = " ".join(words[j] for j in picks) + f" key{c}"
            rows.append((text, f"class{c}"))
    instances = [LabeledInstance(text=t, class_name=l, class_id=int(l[-1]), row_index=i)
                 for i, (t, l) in enumerate(rows)]
    dataset = Dataset(instances=instances, label_map={f"class{c}": c for c in range(3)})
    splits = SplitAssignment(train=frozenset(["class0", "class1", "class2"]),
                             valid=frozenset(), test=frozenset())
    corpus = [t for t, _ in rows]
    vocab = enc.build_vocab(corpus, min_frequency=1, class_names=dataset.label_map)
    cfg = TrainConfig(n_way=2, k_shot=2, m_query=2, dim=FIXTURE_D)
    params = mdl.init_params(derive_rng(seed, "gradcheck-init"), len(vocab), FIXTURE_D)
    # bias the output layer so representation norms stay well away from zero:
    # near the origin the cosine's curvature blows up and central differences
    # lose accuracy for reasons unrelated to the adjoints under test
    params.out_b += 0.3 + 0.1 * np.arange(FIXTURE_D, dtype=params.out_b.dtype)
    episode = sample_episode(dataset, splits, "train", FIXTURE_SPEC,
                             LabelTemplate(cfg.template), derive_rng(seed, "gradcheck-episode"))
    return vocab, cfg, params, episode


def component_functions(seed: int = 0):
    """Scalar objectives keyed by component name, all over the full parameter set."""
    vocab, cfg, params, episode = _fixture(seed)
    probe = ad.const(np.linspace(0.3, 1.1, FIXTURE_D))

    def reps_of(p):
        return mdl.episode_representations(p, vocab, episode, cfg)

    def f_encoder(p):
        support_reps, query_reps = reps_of(p)
        total = None
        for rep in [r for group in support_reps for r in group] + query_reps:
            term = ad.vsum(ad.tanh(rep))
            total = term if total is None else ad.add(total, term)
        return total

    def f_projection(p):
        return ad.vsum(ad.tanh(enc.project(p, probe)))

    def make_supcon(form):
        def f(p):
            support_reps, query_reps = reps_of(p)
            reps = [r for group in support_reps for r in group] + query_reps
            labels = [s.local_label for s in episode.support] + episode.query_labels()
            return supcon_loss(reps, labels, ContrastiveConfig(tau=cfg.tau, form=form))

        return f

    def f_attention_score(p):
        support_reps, query_reps = reps_of(p)
        total = None
        for group in support_reps:
            for rep in group:
                for q in query_reps:
                    term = protonet.attention_score(rep, q, p)
                    total = term if total is None else ad.add(total, term)
        return total

    def f_attention_weights(p):
        # weighted readout of the normalized weights so every coordinate matters
        support_reps, query_reps = reps_of(p)
        total = None
        for group in support_reps:
            scores = [protonet.attention_score(rep, query_reps[0], p) for rep in group]
            weights = protonet.attention_weights(scores)
            for i in range(len(group)):
                term = ad.mul(ad.const(float(i + 1)), ad.pick(weights, i))
                total = term if total is None else ad.add(total, term)
        return total

    def f_classifier(p):
        support_reps, query_reps = reps_of(p)
        protos = [protonet.weighted_prototype(group, protonet.uniform_weights(len(group)))
                  for group in support_reps]
        probs = [protonet.classify(q, protos, kind=cfg.distance) for q in query_reps]
        loss, _ = protonet.protonet_loss(probs, episode.query_labels())
        return loss

    def f_combined(p):
        return mdl.episode_loss(p, vocab, episode, cfg, rho=0.37).loss

    return {
        "encoder": f_encoder,
        "projection": f_projection,
        "supcon_out": make_supcon("out"),
        "supcon_in": make_supcon("in"),
        "attention_score": f_attention_score,
        "attention_weights": f_attention_weights,
        "classifier": f_classifier,
        "combined": f_combined,
    }, params


def run_gradcheck(eps: float = 1e-4, tol: float = 1e-4, seed: int = 0):
    """Gradcheck every component; returns {component: GradcheckReport}.

    Central differences cannot certify coordinates whose true gradient sits
    below ~1e-8 (floating-point roundoff in f dominates there), so unlucky
    seeds can report spurious misses on such coordinates. The default seed
    is a well-conditioned fixture.
    """
    with ad.precision(np.float64):
        functions, params = component_functions(seed)
        arrays = {k: v.astype(np.float64) for k, v in params.as_dict().items()}
        return {name: ad.check_gradients(f, arrays, eps=eps, tol=tol)
                for name, f in functions.items()}
