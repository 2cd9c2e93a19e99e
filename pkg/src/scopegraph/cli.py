"""Command-line entry point.

Exit codes: 0 success, 2 bad input or config, 3 training diverged, 4 gradient
check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .conllu import candidate_targets, parse_conllu, read_corpus
from .model import MASC, MATE, ConfigError, ScopedModel, TrainConfig, TrainingDiverged, jmasa_infer, jmasa_metrics, train
from .scope import compute_scope

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_GRADCHECK = 4

PATH_KEYS = ("corpus", "eval_corpus", "out")
MODEL_FILE = "model.json"
METRICS_FILE = "metrics.jsonl"
CONFIG_ECHO = "config.json"

log = logging.getLogger("scopegraph")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _emit(obj) -> None:
    sys.stdout.write(_dumps(obj) + "\n")


def load_config(path: str | Path, extra_keys: tuple[str, ...] = ()) -> tuple[TrainConfig, dict]:
    """Split a flat JSON config into a validated ``TrainConfig`` and the remaining path/extra keys."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    side = {k: doc.pop(k) for k in PATH_KEYS + extra_keys if k in doc}
    return TrainConfig.from_dict(doc), side


def _resolve(arg, side: dict, key: str, required: bool = True):
    value = arg if arg is not None else side.get(key)
    if value is None and required:
        raise ConfigError(f"no {key} given on the command line or in the config")
    return value


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_parse_scopes(args) -> int:
    with open(args.conllu, encoding="utf-8") as fh:
        trees = parse_conllu(fh)
    for tree in trees:
        targets = candidate_targets(tree) if args.targets == "nouns" else [t.index for t in tree.tokens]
        for t in targets:
            sc = compute_scope(tree, t)
            _emit({"sample_id": tree.sent_id, "target": t, "start": sc.start, "end": sc.end})
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    from .synth import SynthSpec, gen_synthetic, write_corpus

    with open(args.spec, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("spec must be a JSON object")
    spec = SynthSpec.from_dict(doc)
    write_corpus(gen_synthetic(spec), args.out, spec)
    return EXIT_OK


def _train(task: str, args) -> int:
    config, side = load_config(args.config)
    corpus = read_corpus(_resolve(args.corpus, side, "corpus"))
    eval_dir = _resolve(args.eval_corpus, side, "eval_corpus", required=False)
    eval_corpus = read_corpus(eval_dir) if eval_dir else None
    out = Path(_resolve(args.out, side, "out"))
    log.info("training %s with %s", task, _dumps(config.to_dict()))
    model, trace = train(task, corpus, config, eval_corpus=eval_corpus)
    out.mkdir(parents=True, exist_ok=True)
    (out / MODEL_FILE).write_text(model.dumps(), encoding="utf-8")
    (out / CONFIG_ECHO).write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    with open(out / METRICS_FILE, "w", encoding="utf-8") as fh:
        for row in trace:
            fh.write(_dumps(row) + "\n")
    _emit({**trace[-1], "lambda_asi": config.lambda_asi})
    return EXIT_OK


def cmd_train_mate(args) -> int:
    return _train(MATE, args)


def cmd_train_masc(args) -> int:
    return _train(MASC, args)


def load_model(path: str | Path, task: str) -> ScopedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        model = ScopedModel.from_dict(doc)
    except (KeyError, TypeError) as err:
        raise ConfigError(f"{path}: not a model file ({err})") from err
    if model.task != task:
        raise ConfigError(f"{path} holds a {model.task} model, expected {task}")
    return model


def cmd_eval_jmasa(args) -> int:
    mate = load_model(args.mate, MATE)
    masc = load_model(args.masc, MASC)
    corpus = read_corpus(args.corpus)
    p, r, f1 = jmasa_metrics(jmasa_infer(mate, masc, corpus), corpus)
    _emit({"task": "jmasa", "P": p, "R": r, "F1": f1})
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .pretrain import build_aoe_pairs, build_itm_pairs, pretrain

    config, side = load_config(args.config, extra_keys=("qformer_loss",))
    corpus = read_corpus(_resolve(args.corpus, side, "corpus"))
    if len(corpus) < 2:
        raise ConfigError("pretraining needs a corpus of at least two samples")
    eval_dir = _resolve(args.eval_corpus, side, "eval_corpus", required=False)
    eval_corpus = read_corpus(eval_dir) if eval_dir else None
    qformer = side.get("qformer_loss", 0.0)
    if isinstance(qformer, bool) or not isinstance(qformer, (int, float)):
        raise ConfigError("qformer_loss must be a number")
    if args.dump_pairs:
        with open(args.dump_pairs, "w", encoding="utf-8") as fh:
            for pair in build_aoe_pairs(corpus) + build_itm_pairs(corpus, config.seed):
                fh.write(_dumps(pair.record()) + "\n")
    _, report = pretrain(corpus, config, float(qformer), eval_corpus=eval_corpus)
    out = _resolve(args.out, side, "out", required=False)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "pretrain.json").write_text(_dumps(report) + "\n", encoding="utf-8")
    _emit(report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import failures, run_suite

    report = run_suite(args.seed, fault=args.inject_fault)
    for name, err in report.items():
        sys.stdout.write(f"{name}\t{err:.3e}\n")
    bad = failures(report)
    if bad:
        sys.stderr.write(f"gradient check failed: {', '.join(bad)}\n")
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_report(args) -> int:
    """TSV summary of one or more metrics traces plus one PNG per trace."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.ticker import MaxNLocator

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in map(Path, args.metrics):
        with open(path, encoding="utf-8") as fh:
            trace = [json.loads(line) for line in fh if line.strip()]
        if not trace:
            raise ConfigError(f"{path}: empty metrics trace")
        label = path.parent.name or path.stem
        metric_keys = sorted(k for k in trace[0] if k not in ("epoch", "task", "loss"))
        epochs = [r["epoch"] for r in trace]
        fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(9, 3.5))
        ax_loss.plot(epochs, [r["loss"] for r in trace])
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("training loss")
        for k in metric_keys:
            ax_metric.plot(epochs, [r[k] for r in trace], label=k)
        ax_metric.set_xlabel("epoch")
        ax_metric.set_ylim(0, 1.02)
        ax_metric.legend()
        for ax in (ax_loss, ax_metric):
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        fig.suptitle(label if label == trace[0]["task"] else f"{label} ({trace[0]['task']})")
        fig.tight_layout()
        figure = out / f"{label}.png"
        fig.savefig(figure, metadata={"Software": None})
        plt.close(fig)
        last = trace[-1]
        row = {"run": label, "task": last["task"], "epochs": len(trace), "final_loss": f"{last['loss']:.6f}", "figure": figure.name}
        row.update({k: f"{last[k]:.6f}" for k in metric_keys})
        rows.append(row)
    columns = ["run", "task", "epochs", "final_loss"] + sorted({k for r in rows for k in r} - {"run", "task", "epochs", "final_loss", "figure"}) + ["figure"]
    with open(out / "summary.tsv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, columns, delimiter="\t", restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    sys.stdout.write((out / "summary.tsv").read_text(encoding="utf-8"))
    return EXIT_OK


# ----------------------------------------------------------------------------
# wiring
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scopegraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse-scopes", help="print the scope of every target as JSON lines")
    p.add_argument("--conllu", required=True)
    p.add_argument("--targets", choices=("all", "nouns"), default="all")
    p.set_defaults(func=cmd_parse_scopes)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    for name, func in (("train-mate", cmd_train_mate), ("train-masc", cmd_train_masc)):
        p = sub.add_parser(name, help=f"train the {name[6:].upper()} model")
        p.add_argument("--config", required=True)
        p.add_argument("--corpus")
        p.add_argument("--eval-corpus")
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("eval-jmasa", help="score MATE spans fed through MASC")
    p.add_argument("--mate", required=True)
    p.add_argument("--masc", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_eval_jmasa)

    p = sub.add_parser("pretrain", help="train the AOE, ITM and ASSC heads")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus")
    p.add_argument("--eval-corpus")
    p.add_argument("--out")
    p.add_argument("--dump-pairs", metavar="PATH", help="write AOE and ITM pairs as JSON lines")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("gradcheck", help="compare recorded gradients with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", metavar="COMPONENT", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="plot metrics traces and write a TSV summary")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_DIVERGED
    except (ValueError, OSError) as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
