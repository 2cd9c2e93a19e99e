import json

import pytest

from conftest import STUDENT
from scopegraph.cli import EXIT_DIVERGED, EXIT_GRADCHECK, EXIT_INPUT, EXIT_OK, load_model, main
from scopegraph.conllu import read_corpus
from scopegraph.model import jmasa_infer, jmasa_metrics


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = write_json(out / "spec.json", {"seed": 7, "n_sentences": 24, "two_aspect_rate": 0.5})
    assert main(["gen-synthetic", "--spec", str(spec), "--out", str(out / "c")]) == 0
    return out / "c"


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus_dir):
    root = tmp_path_factory.mktemp("runs")
    cfg = write_json(root / "cfg.json", {"epochs": 2, "dim": 6, "layers": 2, "seed": 3})
    for task in ("mate", "masc"):
        assert main([f"train-{task}", "--config", str(cfg), "--corpus", str(corpus_dir), "--out", str(root / task)]) == 0
    return root


class TestParseScopes:
    def test_student_noun(self, capsys):
        code, out, _ = run(capsys, "parse-scopes", "--conllu", STUDENT, "--targets", "nouns")
        assert code == EXIT_OK
        records = [json.loads(line) for line in out.splitlines()]
        assert {"sample_id": "student", "target": 3, "start": 1, "end": 5} in records
        assert all(r["target"] in (3, 8, 9) for r in records)

    def test_all_targets(self, capsys):
        _, out, _ = run(capsys, "parse-scopes", "--conllu", STUDENT)
        assert len(out.splitlines()) == 9

    def test_empty_file(self, capsys, tmp_path):
        (tmp_path / "e.conllu").write_text("")
        code, out, _ = run(capsys, "parse-scopes", "--conllu", tmp_path / "e.conllu")
        assert code == EXIT_OK and out == ""

    def test_malformed(self, capsys, tmp_path):
        (tmp_path / "m.conllu").write_text("1\tonly\ttwo\n")
        code, _, err = run(capsys, "parse-scopes", "--conllu", tmp_path / "m.conllu")
        assert code == EXIT_INPUT and "line 1" in err

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "parse-scopes", "--conllu", tmp_path / "nope")[0] == EXIT_INPUT

    def test_generated_corpus_parses(self, capsys, corpus_dir):
        code, out, _ = run(capsys, "parse-scopes", "--conllu", corpus_dir / "corpus.conllu", "--targets", "nouns")
        assert code == EXIT_OK and out


class TestGenSynthetic:
    def test_byte_identical_reruns(self, capsys, tmp_path):
        spec = write_json(tmp_path / "s.json", {"seed": 42, "n_sentences": 40})
        for name in ("a", "b"):
            assert run(capsys, "gen-synthetic", "--spec", spec, "--out", tmp_path / name)[0] == EXIT_OK
        for f in ("corpus.conllu", "annotations.jsonl", "spec-echo.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_creates_nested_out_dir(self, capsys, tmp_path):
        spec = write_json(tmp_path / "s.json", {"n_sentences": 3})
        assert run(capsys, "gen-synthetic", "--spec", spec, "--out", tmp_path / "x" / "y")[0] == EXIT_OK
        assert (tmp_path / "x" / "y" / "corpus.conllu").exists()

    @pytest.mark.parametrize("doc", [{"vocab_size": 5}, {"bogus": 1}, [1, 2]])
    def test_infeasible(self, capsys, tmp_path, doc):
        spec = write_json(tmp_path / "s.json", doc)
        assert run(capsys, "gen-synthetic", "--spec", spec, "--out", tmp_path / "o")[0] == EXIT_INPUT


class TestTrain:
    def test_outputs_and_lambda_echo(self, trained):
        for task in ("mate", "masc"):
            d = trained / task
            assert (d / "model.json").exists()
            trace = [json.loads(line) for line in (d / "metrics.jsonl").read_text().splitlines()]
            assert [r["epoch"] for r in trace] == [1, 2]
            assert json.loads((d / "config.json").read_text())["lambda_asi"] == 0.2

    def test_printed_metrics(self, capsys, tmp_path, corpus_dir):
        cfg = write_json(tmp_path / "c.json", {"epochs": 1, "dim": 4, "layers": 1})
        code, out, _ = run(capsys, "train-masc", "--config", cfg, "--corpus", corpus_dir, "--out", tmp_path / "o")
        row = json.loads(out)
        assert code == EXIT_OK
        assert row["lambda_asi"] == 0.2 and row["task"] == "masc" and {"acc", "macro_f1"} <= set(row)

    def test_paths_from_config(self, capsys, tmp_path, corpus_dir):
        cfg = write_json(tmp_path / "c.json", {"epochs": 1, "dim": 4, "layers": 1, "corpus": str(corpus_dir), "out": str(tmp_path / "o")})
        assert run(capsys, "train-mate", "--config", cfg)[0] == EXIT_OK
        assert (tmp_path / "o" / "model.json").exists()

    def test_same_seed_identical_files(self, capsys, tmp_path, corpus_dir):
        cfg = write_json(tmp_path / "c.json", {"epochs": 2, "dim": 4, "layers": 2, "seed": 11})
        for name in ("a", "b"):
            assert run(capsys, "train-mate", "--config", cfg, "--corpus", corpus_dir, "--out", tmp_path / name)[0] == EXIT_OK
        for f in ("model.json", "metrics.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    @pytest.mark.parametrize("doc", [{"lamda": 0.1}, {"lambda_asi": -0.5}, {"epochs": "many"}, [1]])
    def test_bad_config(self, capsys, tmp_path, corpus_dir, doc):
        cfg = write_json(tmp_path / "c.json", doc)
        assert run(capsys, "train-mate", "--config", cfg, "--corpus", corpus_dir, "--out", tmp_path / "o")[0] == EXIT_INPUT

    def test_missing_corpus(self, capsys, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"epochs": 1})
        assert run(capsys, "train-mate", "--config", cfg, "--out", tmp_path / "o")[0] == EXIT_INPUT

    def test_divergence(self, capsys, tmp_path, corpus_dir):
        cfg = write_json(tmp_path / "c.json", {"epochs": 2, "lr": 1e8, "dim": 4, "layers": 2})
        code, _, err = run(capsys, "train-masc", "--config", cfg, "--corpus", corpus_dir, "--out", tmp_path / "o")
        assert code == EXIT_DIVERGED and "non-finite" in err


class TestEvalJmasa:
    def test_matches_library_composition(self, capsys, trained, corpus_dir):
        code, out, _ = run(capsys, "eval-jmasa", "--mate", trained / "mate" / "model.json", "--masc", trained / "masc" / "model.json", "--corpus", corpus_dir)
        assert code == EXIT_OK
        corpus = read_corpus(corpus_dir)
        p, r, f1 = jmasa_metrics(jmasa_infer(load_model(trained / "mate" / "model.json", "mate"), load_model(trained / "masc" / "model.json", "masc"), corpus), corpus)
        assert json.loads(out) == {"task": "jmasa", "P": p, "R": r, "F1": f1}

    def test_swapped_models(self, capsys, trained, corpus_dir):
        code, _, err = run(capsys, "eval-jmasa", "--mate", trained / "masc" / "model.json", "--masc", trained / "masc" / "model.json", "--corpus", corpus_dir)
        assert code == EXIT_INPUT and "expected mate" in err

    def test_damaged_model(self, capsys, trained, corpus_dir, tmp_path):
        doc = json.loads((trained / "mate" / "model.json").read_text())
        doc["tensors"]["embedding"]["shape"] = [1, 1]
        write_json(tmp_path / "m.json", doc)
        code, _, _ = run(capsys, "eval-jmasa", "--mate", tmp_path / "m.json", "--masc", trained / "masc" / "model.json", "--corpus", corpus_dir)
        assert code == EXIT_INPUT


class TestPretrain:
    def test_report_and_dump(self, capsys, tmp_path, corpus_dir):
        cfg = write_json(tmp_path / "c.json", {"epochs": 1, "dim": 4, "qformer_loss": 1.5})
        code, out, _ = run(capsys, "pretrain", "--config", cfg, "--corpus", corpus_dir, "--dump-pairs", tmp_path / "pairs.jsonl", "--out", tmp_path / "o")
        assert code == EXIT_OK
        rep = json.loads(out)
        assert rep["L_Q"] == 1.5
        assert rep["L_p"] == pytest.approx(rep["L_Q"] + rep["L_AOE"] + rep["L_ITM"] + rep["L_ASSC"], abs=1e-12)
        kinds = [json.loads(line)["kind"] for line in (tmp_path / "pairs.jsonl").read_text().splitlines()]
        assert kinds.count("aoe") == 24 and kinds.count("itm") == 24
        assert json.loads((tmp_path / "o" / "pretrain.json").read_text()) == rep

    def test_undersized_corpus(self, capsys, tmp_path):
        spec = write_json(tmp_path / "s.json", {"n_sentences": 1})
        run(capsys, "gen-synthetic", "--spec", spec, "--out", tmp_path / "one")
        cfg = write_json(tmp_path / "c.json", {"epochs": 1})
        assert run(capsys, "pretrain", "--config", cfg, "--corpus", tmp_path / "one")[0] == EXIT_INPUT


class TestGradcheck:
    def test_default_seed_passes_and_lists_components(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seed", 0)
        assert code == EXIT_OK
        names = [line.split("\t")[0] for line in out.splitlines()]
        assert names == ["tensor_ops", "sem_adjacency_gnn", "cross_scope", "cross_graph", "asi", "mate_loss", "masc_loss", "assc_loss"]

    def test_injected_fault(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--inject-fault", "cross_scope")
        assert code == EXIT_GRADCHECK and "cross_scope" in err


class TestReport:
    def test_figures_and_tsv(self, capsys, trained, tmp_path):
        code, out, _ = run(capsys, "report", "--metrics", trained / "mate" / "metrics.jsonl", trained / "masc" / "metrics.jsonl", "--out", tmp_path / "r")
        assert code == EXIT_OK
        assert (tmp_path / "r" / "mate.png").read_bytes()[:4] == b"\x89PNG"
        assert (tmp_path / "r" / "masc.png").exists()
        header, *rows = (tmp_path / "r" / "summary.tsv").read_text().splitlines()
        assert header.split("\t")[:4] == ["run", "task", "epochs", "final_loss"]
        assert len(rows) == 2 and out.splitlines()[0] == header

    def test_empty_trace(self, capsys, tmp_path):
        (tmp_path / "m.jsonl").write_text("")
        assert run(capsys, "report", "--metrics", tmp_path / "m.jsonl", "--out", tmp_path / "r")[0] == EXIT_INPUT
