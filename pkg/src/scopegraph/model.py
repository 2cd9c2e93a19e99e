"""Dual-graph scoped classifier for aspect extraction (MATE) and polarity (MASC).

Per sentence: encode tokens, build the attention graph and the dependency
graph, run one GNN over each, fuse the two streams with a sigmoid gate, then
pool the fused and semantic features inside each target's scope, append the
sentence-level encoder mean, and classify. Training adds ``lambda * L_ASI``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .conllu import AnnotatedSample, DepTree, candidate_targets
from .contrast import ContrastInput, asi_loss
from .graphs import GnnParams, build_sem_adjacency, build_syn_adjacency, gnn_forward, init_gnn, uniform_init
from .metrics import SpanPrediction, masc_metrics, span_prf
from .scope import Scope, anchor_token, compute_scope, scope_mask
from .tensor import Value

log = logging.getLogger(__name__)

MATE, MASC = "mate", "masc"
UNK, MASK = "<unk>", "<mask>"
THRESHOLD = 0.5


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_asi: float = 0.2
    # toy-scale optimiser; the reference fine-tuning run used lr 2e-5,
    # batch 16, 20 epochs on a frozen pretrained encoder
    lr: float = 0.05
    epochs: int = 50
    batch_size: int = 1
    dim: int = 16
    layers: int = 4
    tau: float = 0.1
    seed: int = 0
    syn_row_normalize: bool = False
    encoder_mixing: bool = True
    mix_window: int = 2
    ablate_scope: bool = False
    grad_clip: float = 0.0  # global gradient-norm cap per step; 0 disables

    def __post_init__(self):
        checks = [
            (self.lambda_asi >= 0, "lambda_asi must be >= 0"),
            (self.lr > 0, "lr must be > 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.dim >= 1, "dim must be >= 1"),
            (self.layers >= 1, "layers must be >= 1"),
            (self.tau > 0, "tau must be > 0"),
            (self.mix_window >= 0, "mix_window must be >= 0"),
            (self.grad_clip >= 0, "grad_clip must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        clean = {}
        for k, v in data.items():
            default = getattr(cls, k)
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{k} must be true/false")
            elif isinstance(default, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"{k} must be an integer")
            elif isinstance(default, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{k} must be a number")
                v = float(v)
            clean[k] = v
        return cls(**clean)

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------------


def build_vocab(samples: Iterable[AnnotatedSample]) -> list[str]:
    forms = set()
    for s in samples:
        forms.update(s.tree.forms)
        if s.scene_graph:
            forms.update(s.scene_graph)
    forms -= {UNK, MASK}
    return [UNK, MASK] + sorted(forms)


class EncoderStub:
    """Trainable embedding lookup plus an optional windowed mixing layer.

    With mixing on, row ``i`` becomes ``ReLU(sum_{|k| <= w} e_{i+k} W_e + b_e)``,
    so each token sees its neighbours up to ``w`` positions away.
    """

    def __init__(self, vocab: Sequence[str], dim: int, rng: np.random.Generator, mixing: bool = True, window: int = 2):
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.dim = dim
        self.window = window
        self.embedding = T.parameter(rng.normal(0.0, 1.0, size=(len(self.vocab), dim)))
        self.W_e = uniform_init(rng, (dim, dim), dim) if mixing else None
        self.b_e = uniform_init(rng, (dim,), dim) if mixing else None

    @property
    def mixing(self) -> bool:
        return self.W_e is not None

    def ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    def parameters(self) -> list[Value]:
        return [self.embedding] + ([self.W_e, self.b_e] if self.mixing else [])

    def lookup(self, tokens: Sequence[str]) -> Value:
        """Embedding rows only, for inputs where word order carries nothing."""
        if not tokens:
            raise ValueError("cannot encode an empty sentence")
        return T.take(self.embedding, self.ids(tokens))

    def encode(self, tokens: Sequence[str]) -> Value:
        E = self.lookup(tokens)
        if not self.mixing:
            return E
        n = len(tokens)
        pos = np.arange(n)
        band = (np.abs(pos[:, None] - pos[None, :]) <= self.window).astype(np.float64)
        return T.relu(T.add_bias(T.matmul(T.matmul(Value(band), E), self.W_e), self.b_e))


@dataclass
class FusionGate:
    W_g: Value  # [2D, D]
    b_g: Value  # [D]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> FusionGate:
        return cls(uniform_init(rng, (2 * dim, dim), 2 * dim), uniform_init(rng, (dim,), 2 * dim))

    def parameters(self) -> list[Value]:
        return [self.W_g, self.b_g]


def gated_fuse(H_sem: Value, H_syn: Value, gate: FusionGate) -> Value:
    """``F = g * H_syn + (1 - g) * H_sem`` with ``g = sigmoid([H_syn | H_sem] W_g + b_g)``."""
    if H_sem.shape != H_syn.shape:
        raise T.ShapeError(f"cannot fuse {list(H_sem.shape)} with {list(H_syn.shape)}")
    g = T.sigmoid(T.add_bias(T.matmul(T.concat([H_syn, H_sem], axis=1), gate.W_g), gate.b_g))
    return T.add(T.mul(g, H_syn), T.mul(T.sub(1.0, g), H_sem))


def target_features(F: Value, H_sem: Value, H: Value, mask_row) -> Value:
    """[scope-pool(F) | scope-pool(H_sem) | mean(H)], length 3D."""
    ones = np.ones(H.shape[0])
    return T.concat([T.masked_mean_pool(F, mask_row), T.masked_mean_pool(H_sem, mask_row), T.masked_mean_pool(H, ones)])


def bce(p: Value, y, eps: float = T.EPS) -> Value:
    """Elementwise binary cross-entropy; each log argument is floored at ``eps``."""
    y = np.asarray(y, dtype=np.float64)
    pos = T.mul(Value(y), T.log(T.clamp(p, eps, 1.0)))
    neg = T.mul(Value(1.0 - y), T.log(T.clamp(T.sub(1.0, p), eps, 1.0)))
    return T.scale(T.add(pos, neg), -1.0)


def mate_objective(probs: Value, labels, lam: float, asi: Value | float = 0.0) -> Value:
    """Mean BCE over candidates plus ``lam * asi``."""
    return T.add(T.mean(bce(probs, labels)), T.scale(T.as_value(asi), lam))


def masc_objective(log_probs: Value, labels: Sequence[int], lam: float, asi: Value | float = 0.0) -> Value:
    """Mean negative log-likelihood of the gold classes plus ``lam * asi``."""
    labels = list(labels)
    picked = T.take(log_probs, (np.arange(len(labels)), np.asarray(labels)))
    return T.add(T.scale(T.mean(picked), -1.0), T.scale(T.as_value(asi), lam))


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------


@dataclass
class Forward:
    H: Value
    H_sem: Value
    H_syn: Value
    F: Value
    scopes: list[Scope]
    anchors: list[int]
    logits: Value | None


class ScopedModel:
    def __init__(self, task: str, vocab: Sequence[str], config: TrainConfig):
        if task not in (MATE, MASC):
            raise ValueError(f"unknown task {task!r}")
        self.task = task
        self.config = config
        rng = np.random.default_rng(config.seed)
        D = config.dim
        self.encoder = EncoderStub(vocab, D, rng, config.encoder_mixing, config.mix_window)
        self.W_q = uniform_init(rng, (D, D), D)
        self.W_k = uniform_init(rng, (D, D), D)
        self.sem = init_gnn(rng, D, config.layers)
        self.syn = init_gnn(rng, D, config.layers)
        self.gate = FusionGate.init(rng, D)
        self.n_out = 1 if task == MATE else 3
        self.head_W = uniform_init(rng, (3 * D, self.n_out), 3 * D)
        self.head_b = uniform_init(rng, (self.n_out,), 3 * D)

    def named_parameters(self) -> list[tuple[str, Value]]:
        named = [("embedding", self.encoder.embedding)]
        if self.encoder.mixing:
            named += [("mix.W", self.encoder.W_e), ("mix.b", self.encoder.b_e)]
        named += [("W_q", self.W_q), ("W_k", self.W_k)]
        for prefix, gnn in (("sem", self.sem), ("syn", self.syn)):
            for i, (w, b) in enumerate(zip(gnn.weights, gnn.biases)):
                named += [(f"{prefix}.W{i}", w), (f"{prefix}.b{i}", b)]
        named += [("gate.W", self.gate.W_g), ("gate.b", self.gate.b_g), ("head.W", self.head_W), ("head.b", self.head_b)]
        return named

    def parameters(self) -> list[Value]:
        return [p for _, p in self.named_parameters()]

    # -- forward ---------------------------------------------------------------

    def forward(self, tree: DepTree, targets: Sequence[tuple[int, int]]) -> Forward:
        H = self.encoder.encode(tree.forms)
        A_sem = build_sem_adjacency(H, self.W_q, self.W_k)
        H_sem = gnn_forward(A_sem, H, self.sem)
        A_syn = build_syn_adjacency(tree, self.config.syn_row_normalize)
        H_syn = gnn_forward(A_syn, H, self.syn)
        F = gated_fuse(H_sem, H_syn, self.gate)
        S = len(tree)
        if self.config.ablate_scope:
            scopes = [Scope(tuple(t), 1, S) for t in targets]
        else:
            scopes = [compute_scope(tree, t) for t in targets]
        anchors = [anchor_token(tree, t) for t in targets]
        logits = None
        if targets:
            masks = scope_mask(scopes, S)
            feats = T.concat([T.reshape(target_features(F, H_sem, H, m), (1, -1)) for m in masks], axis=0)
            logits = T.add_bias(T.matmul(feats, self.head_W), self.head_b)
        return Forward(H, H_sem, H_syn, F, scopes, anchors, logits)

    def asi(self, fw: Forward) -> Value:
        return asi_loss(ContrastInput(fw.H_syn, fw.H_sem, fw.scopes, self.config.tau, fw.anchors))

    def targets_and_labels(self, sample: AnnotatedSample) -> tuple[list[tuple[int, int]], list[int]]:
        if self.task == MATE:
            cands = candidate_targets(sample.tree)
            labels = [int(any(a.start <= c <= a.end for a in sample.aspects)) for c in cands]
            return [(c, c) for c in cands], labels
        return [a.span for a in sample.aspects], [a.polarity for a in sample.aspects]

    def loss(self, sample: AnnotatedSample, lam: float | None = None) -> Value | None:
        """Training objective for one sample, or None when it has no targets."""
        lam = self.config.lambda_asi if lam is None else lam
        targets, labels = self.targets_and_labels(sample)
        if not targets:
            log.debug("skipping %s: no %s targets", sample.sample_id, self.task)
            return None
        fw = self.forward(sample.tree, targets)
        asi = self.asi(fw) if lam else Value(0.0)
        if self.task == MATE:
            probs = T.sigmoid(T.reshape(fw.logits, (len(targets),)))
            return mate_objective(probs, labels, lam, asi)
        return masc_objective(T.log_softmax_rows(fw.logits), labels, lam, asi)

    # -- inference -------------------------------------------------------------

    def candidate_probs(self, tree: DepTree) -> list[tuple[int, float]]:
        cands = candidate_targets(tree)
        if not cands:
            return []
        fw = self.forward(tree, [(c, c) for c in cands])
        probs = T.sigmoid(T.reshape(fw.logits, (len(cands),))).data
        return list(zip(cands, probs.tolist()))

    def predict_spans(self, tree: DepTree) -> list[tuple[int, int]]:
        accepted = [c for c, p in self.candidate_probs(tree) if p > THRESHOLD]
        return merge_adjacent(accepted)

    def polarity_probs(self, tree: DepTree, spans: Sequence[tuple[int, int]]) -> np.ndarray:
        if not spans:
            return np.zeros((0, 3))
        fw = self.forward(tree, spans)
        return T.softmax_rows(fw.logits).data

    def predict_polarities(self, tree: DepTree, spans: Sequence[tuple[int, int]]) -> list[int]:
        return [int(i) for i in np.argmax(self.polarity_probs(tree, spans), axis=1)]

    # -- serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "config": self.config.to_dict(),
            "vocab": self.encoder.vocab,
            "tensors": {name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()} for name, p in self.named_parameters()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> ScopedModel:
        model = cls(doc["task"], doc["vocab"], TrainConfig.from_dict(doc["config"]))
        tensors = doc["tensors"]
        for name, p in model.named_parameters():
            if name not in tensors:
                raise ConfigError(f"model file lacks tensor {name!r}")
            t = tensors[name]
            if tuple(t["shape"]) != p.shape:
                raise ConfigError(f"tensor {name!r} has shape {t['shape']}, expected {list(p.shape)}")
            p.data = np.asarray(t["data"], dtype=np.float64).reshape(p.shape)
        return model


def merge_adjacent(indices: Iterable[int]) -> list[tuple[int, int]]:
    spans: list[list[int]] = []
    for i in sorted(set(indices)):
        if spans and spans[-1][1] == i - 1:
            spans[-1][1] = i
        else:
            spans.append([i, i])
    return [(a, b) for a, b in spans]


# ----------------------------------------------------------------------------
# training and evaluation
# ----------------------------------------------------------------------------


def sgd_step(params: Sequence[Value], lr: float, n: int, clip: float = 0.0) -> None:
    grads = [p for p in params if p.grad is not None]
    factor = lr / n
    if clip > 0:
        norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in grads)) / n
        if norm > clip:
            factor *= clip / norm
    for p in grads:
        p.data -= factor * p.grad
        p.grad = None


def evaluate(model: ScopedModel, corpus: Sequence[AnnotatedSample]) -> dict:
    if model.task == MATE:
        gold = {s.sample_id: [a.span for a in s.aspects] for s in corpus}
        pred = {s.sample_id: model.predict_spans(s.tree) for s in corpus}
        p, r, f1 = span_prf(gold, pred)
        return {"P": p, "R": r, "F1": f1}
    gold_pol, pred_pol = [], []
    for s in corpus:
        if s.aspects:
            gold_pol += [a.polarity for a in s.aspects]
            pred_pol += model.predict_polarities(s.tree, [a.span for a in s.aspects])
    acc, macro = masc_metrics(gold_pol, pred_pol)
    return {"acc": acc, "macro_f1": macro}


def train(task: str, corpus: Sequence[AnnotatedSample], config: TrainConfig, eval_corpus=None, vocab=None, on_epoch=None):
    """Plain SGD over shuffled samples. Returns ``(model, trace)``.

    ``trace`` holds one dict per epoch with the mean training loss and the
    metrics on ``eval_corpus`` (the training corpus when omitted).
    """
    if not corpus:
        raise ValueError("empty training corpus")
    model = ScopedModel(task, vocab or build_vocab(corpus), config)
    params = model.parameters()
    rng = np.random.default_rng(config.seed + 1)
    eval_corpus = corpus if eval_corpus is None else eval_corpus
    trace = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(corpus))
        total, used, pending = 0.0, 0, 0
        for idx in order:
            loss = model.loss(corpus[idx])
            if loss is None:
                continue
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, sample {corpus[idx].sample_id}")
            T.backward(loss)
            total += value
            used += 1
            pending += 1
            if pending == config.batch_size:
                sgd_step(params, config.lr, pending, config.grad_clip)
                pending = 0
        if pending:
            sgd_step(params, config.lr, pending, config.grad_clip)
        row = {"epoch": epoch, "task": task, "loss": total / used if used else 0.0}
        row.update(evaluate(model, eval_corpus))
        trace.append(row)
        if on_epoch:
            on_epoch(row)
    return model, trace


def jmasa_infer(mate_model: ScopedModel, masc_model: ScopedModel, corpus: Sequence[AnnotatedSample]) -> list[SpanPrediction]:
    out = []
    for s in corpus:
        spans = mate_model.predict_spans(s.tree)
        out.append(SpanPrediction(s.sample_id, spans, masc_model.predict_polarities(s.tree, spans)))
    return out


def jmasa_metrics(predictions: Sequence[SpanPrediction], corpus: Sequence[AnnotatedSample]) -> tuple[float, float, float]:
    gold = {s.sample_id: [(a.start, a.end, a.polarity) for a in s.aspects] for s in corpus}
    pred = {p.sample_id: p.items(with_polarity=True) for p in predictions}
    return span_prf(gold, pred)
