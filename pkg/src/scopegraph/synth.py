"""Seeded template corpus whose aspect polarities live inside dependency scopes.

Sentences are built from clauses ``the [MOD] NOUN is CUE`` where the cue
adjective is the clause root and the noun's head, so it always falls inside
the noun's scope. Two-aspect sentences join two clauses with ``but`` and give
them opposite polarities. A distractor phrase ``near the CUE NOUN`` hangs off
the last clause: its cue word carries sentiment but lies outside every
aspect's scope, and its noun is a non-aspect candidate.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .conllu import (
    CORPUS_ANNOTATIONS,
    CORPUS_CONLLU,
    AnnotatedSample,
    Aspect,
    DepTree,
    Token,
    annotation_record,
    serialize_conllu,
)

POS, NEU, NEG = 0, 1, 2
MIN_VOCAB = 20


class InfeasibleSpec(ValueError):
    pass


@dataclass
class SynthSpec:
    seed: int = 42
    n_sentences: int = 500
    vocab_size: int = 100
    distractor_rate: float = 0.3
    two_aspect_rate: float = 0.3
    compound_rate: float = 0.1
    image_dim: int = 32
    n_places: int = 8

    def validate(self) -> None:
        if self.vocab_size < MIN_VOCAB:
            raise InfeasibleSpec(f"vocab_size must be >= {MIN_VOCAB}, got {self.vocab_size}")
        if self.n_sentences < 1:
            raise InfeasibleSpec("n_sentences must be >= 1")
        if self.image_dim < 1:
            raise InfeasibleSpec("image_dim must be >= 1")
        if self.n_places < 1:
            raise InfeasibleSpec("n_places must be >= 1")
        for name in ("distractor_rate", "two_aspect_rate", "compound_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise InfeasibleSpec(f"{name} must lie in [0, 1], got {rate}")

    @classmethod
    def from_dict(cls, data: dict) -> SynthSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleSpec(f"unknown spec keys: {sorted(unknown)}")
        spec = cls(**data)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Lexicon:
    nouns: list[str]
    cues: dict[int, list[str]]

    @classmethod
    def build(cls, vocab_size: int) -> Lexicon:
        n_pol = max(3, vocab_size * 15 // 100)
        n_neu = max(2, vocab_size // 10)
        n_nouns = vocab_size - 2 * n_pol - n_neu
        return cls(
            nouns=[f"n{i}" for i in range(n_nouns)],
            cues={
                POS: [f"good{i}" for i in range(n_pol)],
                NEU: [f"fine{i}" for i in range(n_neu)],
                NEG: [f"bad{i}" for i in range(n_pol)],
            },
        )


class _Builder:
    def __init__(self):
        self.rows: list[list] = []  # [form, upos, head, deprel]

    def add(self, form, upos, head=0, deprel="dep") -> int:
        self.rows.append([form, upos, head, deprel])
        return len(self.rows)

    def attach(self, index, head, deprel) -> None:
        self.rows[index - 1][2] = head
        self.rows[index - 1][3] = deprel

    def tree(self, sent_id: str) -> DepTree:
        return DepTree(tuple(Token(i, f, u, h, d) for i, (f, u, h, d) in enumerate(self.rows, start=1)), sent_id)


def _clause(b: _Builder, rng, lex: Lexicon, noun_pool: list, polarity: int, compound: bool):
    det = b.add("the", "DET")
    mod = b.add(noun_pool.pop(), "NOUN") if compound else None
    noun = b.add(noun_pool.pop(), "NOUN")
    cop = b.add("is", "AUX")
    cue = b.add(str(rng.choice(lex.cues[polarity])), "ADJ")
    b.attach(det, noun, "det")
    if mod:
        b.attach(mod, noun, "compound")
    b.attach(noun, cue, "nsubj")
    b.attach(cop, cue, "cop")
    start = mod or noun
    return cue, Aspect(start, noun, polarity)


def _sentence(rng: np.random.Generator, lex: Lexicon, spec: SynthSpec, sid: str):
    b = _Builder()
    pool = [str(n) for n in rng.permutation(lex.nouns)]
    two = rng.random() < spec.two_aspect_rate
    if two:
        p1 = POS if rng.random() < 0.5 else NEG
        polarities = [p1, NEG if p1 == POS else POS]
    else:
        polarities = [int(rng.integers(3))]
    aspects = []
    cue1, asp = _clause(b, rng, lex, pool, polarities[0], rng.random() < spec.compound_rate)
    aspects.append(asp)
    last = cue1
    if two:
        cc = b.add("but", "CCONJ")
        cue2, asp = _clause(b, rng, lex, pool, polarities[1], rng.random() < spec.compound_rate)
        b.attach(cc, cue2, "cc")
        b.attach(cue2, cue1, "conj")
        aspects.append(asp)
        last = cue2
    if rng.random() < spec.distractor_rate:
        case = b.add("near", "ADP")
        det = b.add("the", "DET")
        dcue = b.add(str(rng.choice(lex.cues[POS if rng.random() < 0.5 else NEG])), "ADJ")
        other = b.add(pool.pop(), "NOUN")
        for i, rel in ((case, "case"), (det, "det"), (dcue, "amod")):
            b.attach(i, other, rel)
        b.attach(other, last, "obl")
    b.attach(cue1, 0, "root")
    return b.tree(sid), aspects


def gen_synthetic(spec: SynthSpec) -> list[AnnotatedSample]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lex = Lexicon.build(spec.vocab_size)
    # a noun looks the same in every corpus drawn from this lexicon, whatever the seed
    look = np.random.default_rng([spec.vocab_size, spec.image_dim])
    codebook = dict(zip(lex.nouns, look.normal(size=(len(lex.nouns), spec.image_dim))))
    places = look.normal(size=(spec.n_places, spec.image_dim))
    samples = []
    for i in range(spec.n_sentences):
        sid = f"synth-{spec.seed}-{i:05d}"
        tree, aspects = _sentence(rng, lex, spec, sid)
        forms = tree.forms
        image = np.zeros(spec.image_dim)
        scene: list[str] = []
        for a in aspects:
            image += codebook[forms[a.end - 1]]
            scene += forms[a.start - 1 : a.end] + ["in", "picture"]
        # the setting shows in the picture and its scene graph but never in the text
        place = int(rng.integers(spec.n_places))
        image += places[place]
        scene += ["at", f"place{place}"]
        image += 0.05 * rng.normal(size=spec.image_dim)
        samples.append(AnnotatedSample(tree, aspects, sid, np.round(image, 6), scene))
    return samples


def write_corpus(samples: list[AnnotatedSample], out_dir: str | Path, spec: SynthSpec | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CORPUS_CONLLU).write_text(serialize_conllu(s.tree for s in samples), encoding="utf-8")
    lines = [json.dumps(annotation_record(s), sort_keys=True) for s in samples]
    (out / CORPUS_ANNOTATIONS).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    if spec is not None:
        (out / "spec-echo.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def random_tree(rng: np.random.Generator, n: int, sent_id: str = "") -> DepTree:
    """Random labelled tree on ``n`` tokens: each node attaches to an earlier-placed one."""
    order = rng.permutation(n) + 1
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = int(order[rng.integers(k)])
    upos = [str(rng.choice(["NOUN", "VERB", "ADJ", "PRON", "DET", "PROPN"])) for _ in range(n)]
    return DepTree.from_heads(heads, upos=upos, sent_id=sent_id)
