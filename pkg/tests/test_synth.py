import io

import pytest

from scopegraph.conllu import load_annotations, parse_conllu, read_corpus
from scopegraph.scope import compute_scope
from scopegraph.synth import InfeasibleSpec, SynthSpec, gen_synthetic, write_corpus


def test_deterministic_bytes(tmp_path):
    spec = SynthSpec(seed=42, n_sentences=60)
    write_corpus(gen_synthetic(spec), tmp_path / "a", spec)
    write_corpus(gen_synthetic(spec), tmp_path / "b", spec)
    for name in ("corpus.conllu", "annotations.jsonl", "spec-echo.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_two_aspect_rate_one():
    for s in gen_synthetic(SynthSpec(seed=3, n_sentences=100, two_aspect_rate=1.0)):
        assert len(s.aspects) == 2
        assert {a.polarity for a in s.aspects} == {0, 2}


def test_round_trip(tmp_path):
    spec = SynthSpec(seed=7, n_sentences=120, distractor_rate=0.5, two_aspect_rate=0.5, compound_rate=0.3)
    samples = gen_synthetic(spec)
    write_corpus(samples, tmp_path, spec)
    back = read_corpus(tmp_path)
    assert [s.sample_id for s in back] == [s.sample_id for s in samples]
    assert [s.aspects for s in back] == [s.aspects for s in samples]
    assert all(s.tree == t.tree for s, t in zip(back, samples))


def test_cue_in_scope_distractor_outside():
    """Every aspect's polarity cue sits in its scope; distractor cues sit in none."""
    samples = gen_synthetic(SynthSpec(seed=11, n_sentences=200, distractor_rate=1.0, two_aspect_rate=0.5))
    for s in samples:
        scopes = [compute_scope(s.tree, a.span) for a in s.aspects]
        forms = s.tree.forms
        cues = [i for i, f in enumerate(forms, start=1) if f.startswith(("good", "bad", "fine"))]
        for a, sc in zip(s.aspects, scopes):
            inside = [forms[i - 1] for i in cues if i in sc]
            assert len(inside) == 1
            assert inside[0].startswith(("good", "fine", "bad")[a.polarity])
        distractor = cues[-1]
        assert not any(distractor in sc for sc in scopes)


@pytest.mark.parametrize(
    "kwargs",
    [{"vocab_size": 19}, {"distractor_rate": 1.5}, {"two_aspect_rate": -0.1}, {"n_sentences": 0}],
)
def test_infeasible(kwargs):
    with pytest.raises(InfeasibleSpec):
        gen_synthetic(SynthSpec(**kwargs))


def test_minimum_vocab():
    samples = gen_synthetic(SynthSpec(vocab_size=20, n_sentences=30, two_aspect_rate=1.0, distractor_rate=1.0, compound_rate=1.0))
    assert len(samples) == 30


def test_trees_validate_on_reparse(tmp_path):
    spec = SynthSpec(seed=5, n_sentences=80)
    write_corpus(gen_synthetic(spec), tmp_path, spec)
    trees = parse_conllu((tmp_path / "corpus.conllu").read_text())
    assert len(trees) == 80
    with open(tmp_path / "annotations.jsonl") as fh:
        assert len(load_annotations(io.StringIO(fh.read()), trees)) == 80
