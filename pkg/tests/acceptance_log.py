"""Collects one verdict per acceptance criterion for the terminal summary."""

from __future__ import annotations

import time
from contextlib import contextmanager

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    notes: list[str] = []
    start = time.perf_counter()
    verdict = "FAIL"
    try:
        yield notes
        verdict = "PASS"
    finally:
        line = f"[{verdict}] {number:>2}. {title} ({time.perf_counter() - start:.1f} s){': ' if notes else ''}{'; '.join(notes)}"
        RESULTS.append(line)
        print(line)
