"""Target-specific scopes over a dependency tree.

A target's path set is the target, all of its descendants, and its head (when
it has one). The scope is the contiguous interval from the leftmost to the
rightmost member of that set, so words sitting between them (e.g. an adverb
attached elsewhere) are covered too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conllu import DepTree


@dataclass(frozen=True)
class Scope:
    target: tuple[int, int]  # inclusive token span of the target
    start: int
    end: int

    def __post_init__(self):
        if not self.start <= self.target[0] <= self.target[1] <= self.end:
            raise ValueError(f"scope [{self.start}, {self.end}] does not contain target {self.target}")

    @property
    def indices(self) -> range:
        return range(self.start, self.end + 1)

    def __contains__(self, index: int) -> bool:
        return self.start <= index <= self.end


def _as_span(target) -> tuple[int, int]:
    if isinstance(target, (tuple, list)):
        start, end = int(target[0]), int(target[1])
    else:
        start = end = int(target)
    return start, end


def _check_index(tree: DepTree, index: int) -> None:
    if not 1 <= index <= len(tree):
        raise IndexError(f"token {index} outside sentence of length {len(tree)}")


def path_set(tree: DepTree, target: int) -> set[int]:
    _check_index(tree, target)
    kids = tree.children()
    members = set()
    stack = [target]
    while stack:
        i = stack.pop()
        members.add(i)
        stack.extend(kids[i])
    head = tree.head_of(target)
    if head:
        members.add(head)
    return members


def compute_scope(tree: DepTree, target) -> Scope:
    """Scope of a single token or of an inclusive ``(start, end)`` aspect span."""
    start, end = _as_span(target)
    _check_index(tree, start)
    _check_index(tree, end)
    if end < start:
        raise ValueError(f"target span ({start}, {end}) is reversed")
    members = set().union(*(path_set(tree, i) for i in range(start, end + 1)))
    return Scope((start, end), min(members), max(members))


def scope_mask(scopes: Sequence[Scope], length: int) -> np.ndarray:
    mask = np.zeros((len(scopes), length), dtype=np.float64)
    for row, sc in enumerate(scopes):
        if sc.start < 1 or sc.end > length:
            raise ValueError(f"scope [{sc.start}, {sc.end}] outside sentence of length {length}")
        mask[row, sc.start - 1 : sc.end] = 1.0
    return mask


def anchor_token(tree: DepTree, span) -> int:
    """The single node standing in for a (possibly multi-token) target.

    Picks the span token whose head lies outside the span; ties go to the
    rightmost such token.
    """
    start, end = _as_span(span)
    outside = [i for i in range(start, end + 1) if not start <= tree.head_of(i) <= end]
    return max(outside) if outside else end
