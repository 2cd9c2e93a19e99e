"""Semantic (attention) and syntactic (dependency) graphs and their GNNs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .conllu import DepTree
from .tensor import Value

DEFAULT_LAYERS = 4


@dataclass
class GnnParams:
    weights: list[Value]
    biases: list[Value]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight and at least one layer")
        d = self.weights[0].shape[0]
        for w, b in zip(self.weights, self.biases):
            if w.shape != (d, d) or b.shape != (d,):
                raise T.ShapeError(f"layer shapes {list(w.shape)}/{list(b.shape)} do not match D={d}")

    @property
    def layers(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> list[Value]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Value:
    bound = 1.0 / math.sqrt(fan_in)
    return T.parameter(rng.uniform(-bound, bound, size=shape))


def init_gnn(rng: np.random.Generator, dim: int, layers: int = DEFAULT_LAYERS) -> GnnParams:
    ws = [uniform_init(rng, (dim, dim), dim) for _ in range(layers)]
    bs = [uniform_init(rng, (dim,), dim) for _ in range(layers)]
    return GnnParams(ws, bs)


def build_sem_adjacency(H: Value, W_q: Value, W_k: Value) -> Value:
    """Row-stochastic attention adjacency ``softmax((H W_q)(H W_k)^T / sqrt(D))``."""
    d = H.shape[1]
    scores = T.matmul(T.matmul(H, W_q), T.transpose(T.matmul(H, W_k)))
    return T.softmax_rows(T.scale(scores, 1.0 / math.sqrt(d)))


def build_syn_adjacency(tree: DepTree, row_normalize: bool = False) -> np.ndarray:
    n = len(tree)
    A = np.eye(n)
    for t in tree.tokens:
        if t.head:
            A[t.index - 1, t.head - 1] = A[t.head - 1, t.index - 1] = 1.0
    if row_normalize:
        A = A / A.sum(axis=1, keepdims=True)
    return A


def gnn_forward(A, H0: Value, params: GnnParams) -> Value:
    """Apply ``H_l = ReLU(A H_{l-1} W_l + b_l)`` for every layer; returns the last H."""
    A = T.as_value(A)
    if A.shape != (H0.shape[0], H0.shape[0]):
        raise T.ShapeError(f"adjacency {list(A.shape)} does not match {H0.shape[0]} nodes")
    if H0.shape[1] != params.dim:
        raise T.ShapeError(f"features of width {H0.shape[1]} for D={params.dim} layers")
    H = H0
    for W, b in zip(params.weights, params.biases):
        H = T.relu(T.add_bias(T.matmul(T.matmul(A, H), W), b))
    return H
