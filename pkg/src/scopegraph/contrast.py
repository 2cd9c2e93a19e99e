"""Scope-aware contrastive objectives over the two graph views.

Two losses, each applied in both directions (syntactic and semantic anchors):

* cross-scope: InfoNCE inside one view, where nodes in the target's scope are
  positives for the target node and every node sits in the denominator;
* cross-graph: the anchor is contrasted against the other view, with the
  anchor/counterpart similarity ``w`` acting both as an extra positive term and
  as a weight on each in-scope similarity.

The anchor itself is never one of its own positives. ``w`` is differentiated
through like any other quantity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .scope import Scope
from .tensor import Value

DEFAULT_TAU = 0.1


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def _anchors(scopes: Sequence[Scope], anchors: Sequence[int] | None) -> list[int]:
    if anchors is None:
        return [sc.target[1] for sc in scopes]
    if len(anchors) != len(scopes):
        raise ValueError(f"{len(anchors)} anchors for {len(scopes)} scopes")
    return list(anchors)


def positives(scope: Scope, anchor: int) -> list[int]:
    """0-based in-scope node indices paired with ``anchor`` (1-based)."""
    return [i - 1 for i in scope.indices if i != anchor]


def cross_scope_loss(nodes: Value, scopes: Sequence[Scope], tau: float = DEFAULT_TAU, anchors=None) -> Value:
    _check_tau(tau)
    if not scopes:
        return Value(0.0)
    anchors = _anchors(scopes, anchors)
    S = nodes.shape[0]
    rows = [a - 1 for a in anchors]
    weights = np.zeros((len(scopes), S))
    for r, (sc, a) in enumerate(zip(scopes, anchors)):
        if sc.end > S:
            raise ValueError(f"scope [{sc.start}, {sc.end}] exceeds {S} nodes")
        weights[r, positives(sc, a)] = 1.0
    sim = T.cosine_pairwise(nodes, nodes)
    logp = T.log_softmax_rows(T.scale(T.take(sim, rows), 1.0 / tau))
    return T.scale(T.total(T.mul(logp, Value(weights))), -1.0 / len(scopes))


def cross_graph_loss(anchor_nodes: Value, other_nodes: Value, scopes: Sequence[Scope], tau: float = DEFAULT_TAU, anchors=None) -> Value:
    _check_tau(tau)
    if anchor_nodes.shape != other_nodes.shape:
        raise T.ShapeError(f"graph views differ: {list(anchor_nodes.shape)} vs {list(other_nodes.shape)}")
    if not scopes:
        return Value(0.0)
    anchors = _anchors(scopes, anchors)
    S = anchor_nodes.shape[0]
    cross = T.cosine_pairwise(anchor_nodes, other_nodes)
    terms = []
    for sc, a in zip(scopes, anchors):
        pos = positives(sc, a)
        if sc.end > S:
            raise ValueError(f"scope [{sc.start}, {sc.end}] exceeds {S} nodes")
        if not pos:
            continue
        row = T.take(cross, a - 1)
        omega = T.take(cross, (a - 1, a - 1))
        denom = T.reshape(T.logsumexp_rows(T.reshape(T.scale(row, 1.0 / tau), (1, S))), ())
        weighted = T.scale(T.mul(omega, T.take(row, pos)), 1.0 / tau)
        numer = T.log(T.add(T.exp(weighted), T.exp(T.scale(omega, 1.0 / tau))))
        terms.append(T.sub(T.scale(denom, float(len(pos))), T.total(numer)))
    if not terms:
        return Value(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return T.scale(acc, 1.0 / len(scopes))


@dataclass
class ContrastInput:
    syn_nodes: Value
    sem_nodes: Value
    scopes: list[Scope]
    tau: float = DEFAULT_TAU
    anchors: list[int] | None = field(default=None)

    def __post_init__(self):
        _check_tau(self.tau)
        S = self.syn_nodes.shape[0]
        for sc in self.scopes:
            if sc.start < 1 or sc.end > S:
                raise ValueError(f"scope [{sc.start}, {sc.end}] outside [1, {S}]")


def asi_components(inp: ContrastInput) -> dict[str, Value]:
    args = (inp.scopes, inp.tau, inp.anchors)
    return {
        "scope_syn": cross_scope_loss(inp.syn_nodes, *args),
        "scope_sem": cross_scope_loss(inp.sem_nodes, *args),
        "graph_syn": cross_graph_loss(inp.syn_nodes, inp.sem_nodes, *args),
        "graph_sem": cross_graph_loss(inp.sem_nodes, inp.syn_nodes, *args),
    }


def asi_loss(inp: ContrastInput) -> Value:
    parts = asi_components(inp)
    scope = T.add(parts["scope_syn"], parts["scope_sem"])
    graph = T.add(parts["graph_syn"], parts["graph_sem"])
    return T.add(scope, graph)
