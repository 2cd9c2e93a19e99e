"""Finite-difference suite over every differentiable piece of the pipeline."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .conllu import AnnotatedSample, Aspect, DepTree
from .contrast import ContrastInput, asi_loss, cross_graph_loss, cross_scope_loss
from .gradcheck import STEP, TOLERANCE, check
from .graphs import build_sem_adjacency, gnn_forward, init_gnn
from .model import MASC, MATE, ScopedModel, TrainConfig, build_vocab
from .pretrain import assc_loss
from .scope import compute_scope
from .synth import random_tree
from .tensor import Value

SENTENCE_LEN = 9
DIM = 8
LAYERS = 4
COMPONENTS = (
    "tensor_ops",
    "sem_adjacency_gnn",
    "cross_scope",
    "cross_graph",
    "asi",
    "mate_loss",
    "masc_loss",
    "assc_loss",
)


def _weighted(rng, shape):
    w = Value(rng.normal(size=shape))
    return lambda x: T.total(T.mul(x, w))


def _tensor_ops(rng):
    a = T.parameter(rng.normal(size=(4, 3)))
    b = T.parameter(rng.normal(size=(3, 5)))
    pos = T.parameter(rng.uniform(0.5, 2.0, size=(4, 3)))
    bias = T.parameter(rng.normal(size=3))
    # keep relu inputs away from the kink so differences stay one-sided
    away = T.parameter(np.where(rng.random((4, 3)) < 0.5, -1.0, 1.0) * rng.uniform(0.2, 1.0, size=(4, 3)))
    w43, w45, w44, w35 = (_weighted(rng, shape) for shape in ((4, 3), (4, 5), (4, 4), (3, 5)))
    cases = [
        (lambda: w45(T.matmul(a, b)), [a, b]),
        (lambda: w43(T.relu(away)), [away]),
        (lambda: w43(T.sigmoid(a)), [a]),
        (lambda: w43(T.exp(a)), [a]),
        (lambda: w43(T.log(pos)), [pos]),
        (lambda: w43(T.div(a, pos)), [a, pos]),
        (lambda: w43(T.add_bias(a, bias)), [a, bias]),
        (lambda: w43(T.softmax_rows(a)), [a]),
        (lambda: w43(T.log_softmax_rows(a)), [a]),
        (lambda: w44(T.cosine_pairwise(a, pos)), [a, pos]),
        (lambda: T.total(T.masked_mean_pool(a, [1, 0, 1, 1])), [a]),
        (lambda: w35(T.transpose(T.concat([T.transpose(b), T.transpose(b)], axis=0)[:5])), [b]),
    ]
    return cases


def _random_scopes(rng, n_targets=2):
    tree = random_tree(rng, SENTENCE_LEN)
    targets = rng.choice(np.arange(1, SENTENCE_LEN + 1), size=n_targets, replace=False)
    return [compute_scope(tree, int(t)) for t in targets]


def _sample(rng) -> AnnotatedSample:
    base = random_tree(rng, SENTENCE_LEN)
    nouns = sorted(int(i) for i in rng.choice(np.arange(1, SENTENCE_LEN + 1), size=2, replace=False))
    upos = ["NOUN" if t.index in nouns else "X" for t in base.tokens]
    forms = [f"w{int(k)}" for k in rng.integers(0, 6, SENTENCE_LEN)]
    tree = DepTree.from_heads(base.heads, forms=forms, upos=upos, sent_id="gradcheck")
    return AnnotatedSample(tree, [Aspect(nouns[0], nouns[0], 0), Aspect(nouns[1], nouns[1], 2)], "gradcheck")


def _fault(f: Callable[[], Value], params) -> Callable[[], Value]:
    """Adds a term whose value moves with ``params`` but which records no gradient."""

    def broken():
        hidden = sum(0.05 * float(np.sum(p.data**2)) for p in params)
        return T.add(f(), Value(hidden))

    return broken


def run_suite(seed: int = 0, fault: str | None = None, step: float = STEP) -> dict[str, float]:
    """Max relative error per component; ``fault`` names a component to sabotage."""
    if fault is not None and fault not in COMPONENTS:
        raise ValueError(f"unknown component {fault!r}; choose from {', '.join(COMPONENTS)}")
    rng = np.random.default_rng(seed)
    jobs: dict[str, list[tuple[Callable[[], Value], list[Value], bool]]] = {}

    jobs["tensor_ops"] = [(f, p, False) for f, p in _tensor_ops(rng)]

    H0 = T.parameter(rng.normal(size=(SENTENCE_LEN, DIM)))
    Wq = T.parameter(rng.normal(size=(DIM, DIM)) * 0.3)
    Wk = T.parameter(rng.normal(size=(DIM, DIM)) * 0.3)
    gnn = init_gnn(rng, DIM, LAYERS)
    w = _weighted(rng, (SENTENCE_LEN, DIM))
    jobs["sem_adjacency_gnn"] = [(lambda: w(gnn_forward(build_sem_adjacency(H0, Wq, Wk), H0, gnn)), [H0, Wq, Wk] + gnn.parameters(), False)]

    syn = T.parameter(rng.normal(size=(SENTENCE_LEN, DIM)))
    sem = T.parameter(rng.normal(size=(SENTENCE_LEN, DIM)))
    scopes = _random_scopes(rng)
    jobs["cross_scope"] = [(lambda: cross_scope_loss(syn, scopes, 0.1), [syn], False)]
    jobs["cross_graph"] = [(lambda: cross_graph_loss(syn, sem, scopes, 0.1), [syn, sem], False)]
    jobs["asi"] = [(lambda: asi_loss(ContrastInput(syn, sem, scopes, 0.1)), [syn, sem], False)]

    sample = _sample(rng)
    cfg = TrainConfig(dim=DIM, layers=LAYERS, seed=seed)
    for name, task in (("mate_loss", MATE), ("masc_loss", MASC)):
        model = ScopedModel(task, build_vocab([sample]), cfg)
        # pooled: the attention projections get gradients near 1e-7 that are pure rounding noise per tensor
        jobs[name] = [(lambda m=model: m.loss(sample, 0.2), model.parameters(), True)]

    H = T.parameter(rng.normal(size=(SENTENCE_LEN, DIM)))
    Wc, bc = T.parameter(rng.normal(size=(DIM, 3))), T.parameter(rng.normal(size=3))
    mask = np.zeros((2, SENTENCE_LEN))
    mask[0, 1:3] = 1
    mask[1, 5] = 1
    jobs["assc_loss"] = [(lambda: assc_loss(H, mask, [0, 2], Wc, bc), [H, Wc, bc], False)]

    report = {}
    for name in COMPONENTS:
        worst = 0.0
        for f, params, pooled in jobs[name]:
            if name == fault:
                f = _fault(f, params)
            worst = max(worst, check(f, params, step, pooled=pooled))
        report[name] = worst
    return report


def failures(report: dict[str, float], tolerance: float = TOLERANCE) -> list[str]:
    return [name for name, err in report.items() if not err < tolerance]
