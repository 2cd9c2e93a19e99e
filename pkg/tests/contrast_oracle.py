"""Scalar triple-loop reference for the scope contrastive losses (plain floats, no numpy)."""

import math


def cos(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv + 1e-12)


def cross_scope(nodes, targets, tau):
    """targets: list of (anchor, start, end), 1-based inclusive."""
    if not targets:
        return 0.0
    S = len(nodes)
    total = 0.0
    for a, start, end in targets:
        n_t = nodes[a - 1]
        denom = sum(math.exp(cos(n_t, nodes[i]) / tau) for i in range(S))
        for j in range(start, end + 1):
            if j == a:
                continue
            total += -math.log(math.exp(cos(n_t, nodes[j - 1]) / tau) / denom)
    return total / len(targets)


def cross_graph(anchor_nodes, other_nodes, targets, tau):
    if not targets:
        return 0.0
    S = len(anchor_nodes)
    total = 0.0
    for a, start, end in targets:
        n_t = anchor_nodes[a - 1]
        omega = cos(n_t, other_nodes[a - 1])
        denom = sum(math.exp(cos(n_t, other_nodes[i]) / tau) for i in range(S))
        for j in range(start, end + 1):
            if j == a:
                continue
            num = math.exp(omega / tau) + math.exp(omega * cos(n_t, other_nodes[j - 1]) / tau)
            total += -math.log(num / denom)
    return total / len(targets)


def asi(syn, sem, targets, tau):
    return (
        cross_scope(syn, targets, tau)
        + cross_scope(sem, targets, tau)
        + cross_graph(syn, sem, targets, tau)
        + cross_graph(sem, syn, targets, tau)
    )
