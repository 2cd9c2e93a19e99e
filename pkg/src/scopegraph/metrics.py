"""Span-level P/R/F1 (exact match, micro-averaged) and MASC accuracy / macro-F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

NUM_CLASSES = 3


@dataclass
class SpanPrediction:
    sample_id: str
    spans: list[tuple[int, int]]
    polarities: list[int] | None = field(default=None)

    def items(self, with_polarity: bool = False) -> set[tuple]:
        if not with_polarity:
            return {tuple(s) for s in self.spans}
        if self.polarities is None or len(self.polarities) != len(self.spans):
            raise ValueError(f"{self.sample_id}: need one polarity per span")
        return {(s[0], s[1], p) for s, p in zip(self.spans, self.polarities)}


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def span_prf(gold: Mapping[str, Sequence[tuple]], predicted: Mapping[str, Sequence[tuple]]) -> tuple[float, float, float]:
    """Micro P, R, F1 over exact-match items keyed by sample id.

    Items are compared as tuples, so passing ``(start, end, polarity)``
    triples gives the joint span+polarity score.
    """
    unknown = set(predicted) - set(gold)
    if unknown:
        raise KeyError(f"predictions for unknown sample ids: {sorted(unknown)[:5]}")
    tp = n_pred = n_gold = 0
    for sid, g in gold.items():
        gs = {tuple(x) for x in g}
        ps = {tuple(x) for x in predicted.get(sid, ())}
        tp += len(gs & ps)
        n_pred += len(ps)
        n_gold += len(gs)
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    return p, r, _f1(p, r)


def masc_metrics(gold: Sequence[int], predicted: Sequence[int]) -> tuple[float, float]:
    """Accuracy and macro-F1 over the fixed three-class set; absent classes score 0."""
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold labels vs {len(predicted)} predictions")
    if not gold:
        return 0.0, 0.0
    acc = sum(g == p for g, p in zip(gold, predicted)) / len(gold)
    f1s = []
    for c in range(NUM_CLASSES):
        tp = sum(g == c and p == c for g, p in zip(gold, predicted))
        fp = sum(g != c and p == c for g, p in zip(gold, predicted))
        fn = sum(g == c and p != c for g, p in zip(gold, predicted))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(_f1(prec, rec))
    return acc, sum(f1s) / NUM_CLASSES


def prf_record(task: str, p: float, r: float, f1: float) -> dict:
    return {"task": task, "P": p, "R": r, "F1": f1}


def masc_record(acc: float, macro_f1: float) -> dict:
    return {"task": "masc", "acc": acc, "macro_f1": macro_f1}
