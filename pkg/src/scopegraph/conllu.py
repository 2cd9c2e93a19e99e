"""CoNLL-U dependency trees and JSON-lines aspect annotations."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

POLARITIES = ("POS", "NEU", "NEG")
CANDIDATE_UPOS = frozenset({"NOUN", "PROPN", "PRON"})
CORPUS_CONLLU = "corpus.conllu"
CORPUS_ANNOTATIONS = "annotations.jsonl"


class ConlluError(ValueError):
    """Malformed CoNLL-U line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TreeError(ValueError):
    """Sentence whose heads do not form a single-rooted tree."""

    def __init__(self, message: str, sent_id: str):
        super().__init__(f"sentence {sent_id}: {message}")
        self.sent_id = sent_id


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    upos: str
    head: int
    deprel: str


@dataclass(frozen=True)
class DepTree:
    tokens: tuple[Token, ...]
    sent_id: str = ""

    def __post_init__(self):
        validate_tree(self)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def root(self) -> int:
        return next(t.index for t in self.tokens if t.head == 0)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    def head_of(self, index: int) -> int:
        return self.tokens[index - 1].head

    def children(self) -> dict[int, list[int]]:
        kids: dict[int, list[int]] = {i: [] for i in range(0, len(self) + 1)}
        for t in self.tokens:
            kids[t.head].append(t.index)
        return kids

    @classmethod
    def from_heads(cls, heads: Iterable[int], forms=None, upos=None, deprels=None, sent_id: str = "") -> DepTree:
        heads = list(heads)
        n = len(heads)
        forms = forms or [f"w{i}" for i in range(1, n + 1)]
        upos = upos or ["X"] * n
        deprels = deprels or ["root" if h == 0 else "dep" for h in heads]
        return cls(tuple(Token(i + 1, forms[i], upos[i], heads[i], deprels[i]) for i in range(n)), sent_id)


def validate_tree(tree: DepTree) -> None:
    n = len(tree.tokens)
    sid = tree.sent_id or "?"
    if n == 0:
        raise TreeError("empty sentence", sid)
    for pos, t in enumerate(tree.tokens, start=1):
        if t.index != pos:
            raise TreeError(f"token ids not consecutive at {t.index}", sid)
        if not 0 <= t.head <= n:
            raise TreeError(f"head {t.head} of token {t.index} out of range [0, {n}]", sid)
        if t.head == t.index:
            raise TreeError(f"token {t.index} is its own head", sid)
    roots = [t.index for t in tree.tokens if t.head == 0]
    if not roots:
        # every token has a head, so following heads must loop
        raise TreeError("cycle: no token attaches to the root", sid)
    if len(roots) != 1:
        raise TreeError(f"expected exactly one root, found {len(roots)}", sid)
    kids = tree.children()
    reached = set()
    stack = [roots[0]]
    while stack:
        i = stack.pop()
        reached.add(i)
        stack.extend(kids[i])
    if len(reached) != n:
        missing = sorted(set(range(1, n + 1)) - reached)
        raise TreeError(f"cycle: tokens {missing} unreachable from root", sid)


def parse_conllu(source: str | TextIO) -> list[DepTree]:
    """Parse CoNLL-U text; multiword ranges and empty nodes are skipped."""
    stream = io.StringIO(source) if isinstance(source, str) else source
    trees: list[DepTree] = []
    rows: list[Token] = []
    sent_id = ""

    def flush():
        nonlocal rows, sent_id
        if rows:
            trees.append(DepTree(tuple(rows), sent_id or f"s{len(trees) + 1}"))
        rows, sent_id = [], ""

    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "sent_id":
                sent_id = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"expected 10 tab-separated columns, got {len(cols)}", lineno)
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            index, head = int(cols[0]), int(cols[6])
        except ValueError:
            raise ConlluError(f"non-integer ID or HEAD ({cols[0]!r}, {cols[6]!r})", lineno) from None
        if index != len(rows) + 1:
            raise ConlluError(f"expected token id {len(rows) + 1}, got {index}", lineno)
        rows.append(Token(index, cols[1], cols[3], head, cols[7]))
    flush()
    return trees


def serialize_conllu(trees: Iterable[DepTree]) -> str:
    out = []
    for tree in trees:
        if tree.sent_id:
            out.append(f"# sent_id = {tree.sent_id}")
        out.append(f"# text = {' '.join(tree.forms)}")
        for t in tree.tokens:
            out.append("\t".join([str(t.index), t.form, "_", t.upos, "_", "_", str(t.head), t.deprel, "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def candidate_targets(tree: DepTree) -> list[int]:
    return [t.index for t in tree.tokens if t.upos in CANDIDATE_UPOS]


# ----------------------------------------------------------------------------
# annotations
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Aspect:
    start: int
    end: int
    polarity: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class AnnotatedSample:
    tree: DepTree
    aspects: list[Aspect]
    sample_id: str
    image_feature: np.ndarray | None = None
    scene_graph: list[str] | None = field(default=None)

    def __post_init__(self):
        check_aspects(self.aspects, len(self.tree), self.sample_id)


def polarity_id(label) -> int:
    if isinstance(label, bool):
        raise AnnotationError(f"unknown polarity label {label!r}")
    if isinstance(label, int):
        if label in (0, 1, 2):
            return label
    elif isinstance(label, str) and label.upper() in POLARITIES:
        return POLARITIES.index(label.upper())
    raise AnnotationError(f"unknown polarity label {label!r}")


def check_aspects(aspects: list[Aspect], n: int, sample_id: str) -> None:
    last_end = 0
    for a in sorted(aspects, key=lambda a: a.start):
        if a.end < a.start:
            raise AnnotationError(f"{sample_id}: aspect end {a.end} < start {a.start}")
        if a.start < 1 or a.end > n:
            raise AnnotationError(f"{sample_id}: aspect ({a.start}, {a.end}) outside sentence of length {n}")
        if a.start <= last_end:
            raise AnnotationError(f"{sample_id}: overlapping aspect spans at token {a.start}")
        if a.polarity not in (0, 1, 2):
            raise AnnotationError(f"{sample_id}: polarity {a.polarity} not in 0..2")
        last_end = a.end


def load_annotations(stream: str | TextIO, trees: Mapping[str, DepTree] | Iterable[DepTree]) -> list[AnnotatedSample]:
    """Join JSON-lines annotation records to parsed trees.

    Each record carries ``sample_id``, ``aspects`` ([{start, end, polarity}]) and
    optionally ``conllu_ref`` (the tree's sent_id, defaulting to sample_id),
    ``image_feature`` and ``scene_graph``.
    """
    if not isinstance(trees, Mapping):
        trees = {t.sent_id: t for t in trees}
    stream = io.StringIO(stream) if isinstance(stream, str) else stream
    samples = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        sid = str(rec.get("sample_id", ""))
        ref = str(rec.get("conllu_ref", sid))
        if ref not in trees:
            raise AnnotationError(f"line {lineno}: unknown sample_id {ref!r}")
        aspects = []
        for a in rec.get("aspects", []):
            aspects.append(Aspect(int(a["start"]), int(a["end"]), polarity_id(a["polarity"])))
        image = rec.get("image_feature")
        samples.append(
            AnnotatedSample(
                tree=trees[ref],
                aspects=aspects,
                sample_id=sid,
                image_feature=None if image is None else np.asarray(image, dtype=np.float64),
                scene_graph=rec.get("scene_graph"),
            )
        )
    return samples


def annotation_record(sample: AnnotatedSample) -> dict:
    rec = {
        "sample_id": sample.sample_id,
        "conllu_ref": sample.tree.sent_id,
        "aspects": [{"start": a.start, "end": a.end, "polarity": POLARITIES[a.polarity]} for a in sample.aspects],
    }
    if sample.image_feature is not None:
        rec["image_feature"] = [float(x) for x in sample.image_feature]
    if sample.scene_graph is not None:
        rec["scene_graph"] = list(sample.scene_graph)
    return rec


def read_corpus(directory: str | Path) -> list[AnnotatedSample]:
    directory = Path(directory)
    with open(directory / CORPUS_CONLLU, encoding="utf-8") as fh:
        trees = parse_conllu(fh)
    with open(directory / CORPUS_ANNOTATIONS, encoding="utf-8") as fh:
        return load_annotations(fh, trees)
