"""``callgram`` command line.

Exit codes: 0 on success, 2 for bad input (unreadable or malformed files,
unknown labels, empty manifests, incompatible model/vocabulary), 1 for any
other failure. Diagnostics go to stderr; stdout carries only results.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from sklearn.base import clone

from callgram.evaluation import Split, compute_metrics, evaluate_unseen, metrics_table, stratified_split
from callgram.exceptions import CallgramError, ConfigError, VocabularyError
from callgram.experiment import (ExperimentConfig, StageFailed, derive_seed, run_experiment, synth_corpus,
                                 write_corpus)
from callgram.featurize import FeatureMatrix, NGramVocab, build_vocab, encode, encode_dataset
from callgram.selection import incremental_select, intersect_top, rank_features, top_set
from callgram.serialize import load_model, save_model
from callgram.trace import Label, load_dataset, read_manifest, read_trace_file
from callgram.tree import CLASSIFIERS, make_classifier

logger = logging.getLogger("callgram")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Raised for user input problems that map to exit code 2."""


def _json_out(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc


def _load_rows(manifest, root):
    rows = read_manifest(manifest)
    if not rows:
        raise InputError(f"{manifest}: manifest is empty")
    dataset, skipped = load_dataset(root or Path(manifest).parent, manifest)
    if not len(dataset):
        raise InputError(f"{manifest}: no readable traces")
    return dataset, skipped


def _load_split(path) -> Split:
    doc = _read_json(path)
    return Split(doc["train_ids"], doc["test_ids"], doc["ratio"], doc["seed"])


def cmd_ingest(args):
    dataset, skipped = _load_rows(args.manifest, args.root)
    out = Path(args.out)
    write_corpus(out, dataset, None)
    _json_out({"written": len(dataset), "skipped": [{"sample_id": s, "reason": r} for s, r in skipped],
               "manifest": str(out / "manifest.csv")})


def _experiment_config(args) -> ExperimentConfig:
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.ngram is not None:
        doc["ngram"] = args.ngram
    if args.chunk is not None:
        doc["chunk"] = args.chunk
    return ExperimentConfig.from_dict(doc)


def cmd_synth(args):
    cfg = _experiment_config(args)
    if "synth" not in cfg.input:
        raise ConfigError("config input has no 'synth' section")
    seeds = cfg.seeds()
    dataset, unseen, used = synth_corpus(cfg.input["synth"], seeds)
    out = Path(args.out)
    write_corpus(out, dataset, unseen)
    doc = {"config_hash": cfg.config_hash, "seed": cfg.seed, "seeds": seeds, "config": cfg.to_dict(),
           "synth": used}
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _json_out({"traces": len(dataset), "unseen": len(unseen), "classes": dataset.class_counts(),
               "directory": str(out)})


def cmd_featurize(args):
    dataset, _ = _load_rows(args.manifest, args.root)
    seed = derive_seed(args.seed or 0, "split")
    split = stratified_split(dataset.sample_ids, dataset.labels, args.ratio, seed)
    vocab = build_vocab(dataset.subset(split.train_ids), args.ngram or 2)
    matrix = encode_dataset(dataset, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")
    matrix.save(out / "matrix.txt")
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    _json_out({"vocab_id": vocab.vocab_id, "n": vocab.n, "n_features": len(vocab), "rows": len(dataset),
               "train": len(split.train_ids), "test": len(split.test_ids)})


def _fit_all(args, kinds, train):
    models = {}
    for kind in kinds:
        params = {}
        if kind in ("RF", "AdaBoost"):
            params["random_state"] = derive_seed(args.seed or 0, f"model/{kind}")
        if kind == "RF":
            params["n_jobs"] = args.threads
        models[kind] = make_classifier(kind, **params).fit(train.X, train.labels)
    return models


def cmd_train(args):
    matrix = FeatureMatrix.load(args.matrix)
    split = _load_split(args.split)
    train, test = matrix.select_ids(split.train_ids), matrix.select_ids(split.test_ids)
    kinds = list(CLASSIFIERS) if args.classifier == "all" else [args.classifier]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for kind, model in _fit_all(args, kinds, train).items():
        save_model(out / f"{kind}.json", model, vocab_id=matrix.vocab_id)
        results[kind] = compute_metrics(test.labels, model.predict(test.X))
    sys.stderr.write(metrics_table(results))
    _json_out({k: m.to_dict() for k, m in results.items()})


def cmd_select(args):
    matrix = FeatureMatrix.load(args.matrix)
    split = _load_split(args.split)
    train = matrix.select_ids(split.train_ids)
    kinds = args.classifiers.split(",")
    unknown = [k for k in kinds if k not in CLASSIFIERS]
    if unknown:
        raise ConfigError(f"unknown classifiers {unknown}")
    models = _fit_all(args, kinds, train)
    sets, doc = [], {}
    for kind in kinds:
        ranking = rank_features(models[kind].feature_importances_)
        est = clone(models[kind]).set_params(**({"n_jobs": 1} if kind == "RF" else {}))
        traj = incremental_select(matrix, ranking, [est], args.chunk or 100, split, n_jobs=args.threads)[0]
        sets.append(top_set(ranking, traj, matrix.vocab_id))
        doc[kind] = {"F1_max": traj.f1_max, "n_max": traj.n_max,
                     "selected_indices": [int(i) for i in ranking.top(traj.n_max)]}
        logger.info("[select] %s F1_max=%.4f n_max=%d", kind, traj.f1_max, traj.n_max)
    result = {"classifiers": doc}
    if len(sets) >= 2:
        result["intersection"] = sorted(intersect_top(sets))
    _json_out(result)


def _check_compat(info, vocab, model):
    if info["vocab_id"] is not None and info["vocab_id"] != vocab.vocab_id:
        raise VocabularyError(f"model was trained on vocabulary {info['vocab_id']}, got {vocab.vocab_id}")
    width = len(info["feature_indices"]) if info["feature_indices"] is not None else len(vocab)
    if width != model.n_features_in_:
        raise VocabularyError(f"model expects {model.n_features_in_} features, vocabulary gives {width}")


def cmd_evaluate(args):
    model, info = load_model(args.model)
    vocab = NGramVocab.load(args.vocab)
    _check_compat(info, vocab, model)
    dataset, _ = _load_rows(args.manifest, args.root)
    res = evaluate_unseen(model, dataset, vocab, selected=info["feature_indices"])
    _json_out(res.to_dict())


def cmd_predict(args):
    model, info = load_model(args.model)
    vocab = NGramVocab.load(args.vocab)
    _check_compat(info, vocab, model)
    # the label only matters for training; raw reports are parsed with a placeholder
    trace = read_trace_file(args.trace, label=Label.BENIGN if args.raw else None)
    x = encode(trace, vocab)
    if info["feature_indices"] is not None:
        x = x[info["feature_indices"]]
    pred = int(model.predict(x.reshape(1, -1))[0])
    sys.stdout.write(f"{trace.sample_id},{Label(pred).token}\n")


def cmd_run(args):
    cfg = _experiment_config(args)
    state = run_experiment(cfg, args.out, threads=args.threads)
    m = state["metrics"]
    _json_out({"directory": str(args.out), "config_hash": cfg.config_hash, "n_features": m["n_features"],
               "full": {k: v["f1"] for k, v in m["full"].items()},
               "reduced": None if m["reduced"] is None else m["reduced"]["metrics"]["f1"]})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    common.add_argument("--ngram", type=int, choices=(2, 3))
    common.add_argument("--chunk", type=int, help="selection chunk size k")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="callgram", description="API-call n-gram malware detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="convert manifest-listed reports to canonical traces")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", help="directory manifest paths are relative to (default: manifest's directory)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", parents=[common], help="split, build vocabulary, encode")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root")
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="fit classifiers and report test metrics")
    p.add_argument("--matrix", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--classifier", choices=list(CLASSIFIERS) + ["all"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", parents=[common], help="chunked feature selection and intersection")
    p.add_argument("--matrix", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--classifiers", default="DT,RF")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", parents=[common], help="score a manifest of unseen traces")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="classify one trace")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--raw", action="store_true", help="trace is a raw sandbox report")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("run", parents=[common], help="full experiment recipe")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="callgram %(levelname)s %(message)s", force=True)
    if args.threads < 1:
        logger.error("[%s] --threads must be >= 1", args.command)
        return EXIT_INPUT
    try:
        args.func(args)
    except StageFailed as exc:
        cause = exc.cause
        code = EXIT_INPUT if isinstance(cause, (CallgramError, OSError)) else EXIT_FAIL
        logger.error("[%s] %s", exc.stage, cause)
        return code
    except (CallgramError, InputError, OSError, KeyError, ValueError) as exc:
        logger.error("[%s] %s", args.command, exc)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - unexpected
        logger.exception("[%s] %s", args.command, exc)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
