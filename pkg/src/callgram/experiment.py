"""End-to-end experiment recipe: data, features, training, selection, unseen scoring.

Every random choice is seeded from the single top-level ``seed`` through
:func:`derive_seed`, and every written artifact carries the config hash and
the derived seeds.
"""

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from callgram.evaluation import compute_metrics, evaluate_unseen, metrics_table, stratified_split
from callgram.exceptions import ConfigError
from callgram.featurize import build_vocab, encode_dataset
from callgram.selection import incremental_select, intersect_top, rank_features, reduced_retrain, top_set
from callgram.serialize import save_model
from callgram.synth import GenConfig, MutationConfig, make_corpus
from callgram.trace import Dataset, load_dataset, write_manifest, write_trace_file
from callgram.tree import CLASSIFIERS, make_classifier

logger = logging.getLogger(__name__)

DEFAULT_CLASSIFIERS = {
    "DT": {"max_depth": None, "min_samples_split": 2},
    "RF": {"n_trees": 100, "max_features": "sqrt", "bootstrap": True},
    "AdaBoost": {"n_rounds": 50},
}


def derive_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}/{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class ExperimentConfig:
    ngram: int = 2
    seed: int = 0
    split_ratio: float = 0.7
    chunk: int = 100
    classifiers: Dict[str, dict] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_CLASSIFIERS)))
    select_with: List[str] = field(default_factory=lambda: ["DT", "RF", "AdaBoost"])
    intersect: List[str] = field(default_factory=lambda: ["DT", "RF"])
    reduced_classifier: str = "RF"
    # either {"manifest": ..., "root": ..., "unseen_manifest": ...} or {"synth": {...}}
    input: dict = field(default_factory=lambda: {"synth": {}})

    def __post_init__(self):
        if self.ngram not in (2, 3):
            raise ConfigError(f"ngram must be 2 or 3, got {self.ngram}")
        if self.chunk < 1:
            raise ConfigError("chunk must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must be in (0, 1)")
        merged = json.loads(json.dumps(DEFAULT_CLASSIFIERS))
        for kind, params in self.classifiers.items():
            if kind not in CLASSIFIERS:
                raise ConfigError(f"unknown classifier {kind!r}")
            merged[kind].update(params)
        self.classifiers = merged
        for kind in self.select_with + self.intersect + [self.reduced_classifier]:
            if kind not in CLASSIFIERS:
                raise ConfigError(f"unknown classifier {kind!r}")
        if len(self.intersect) < 2 or not set(self.intersect) <= set(self.select_with):
            raise ConfigError("intersect needs two or more classifiers that are also in select_with")
        if "manifest" not in self.input and "synth" not in self.input:
            raise ConfigError("input must name a 'manifest' or a 'synth' section")

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        return asdict(self)

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def seeds(self) -> Dict[str, int]:
        stages = ["synth", "mutation", "split"] + [f"model/{k}" for k in CLASSIFIERS]
        return {s: derive_seed(self.seed, s) for s in stages}


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _with_seed(kind: str, params: dict, seeds: Dict[str, int], threads: int):
    params = dict(params)
    if kind in ("RF", "AdaBoost"):
        params["random_state"] = seeds[f"model/{kind}"]
    if kind == "RF":
        params["n_jobs"] = threads
    return make_classifier(kind, **params)


class StageFailed(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def synth_corpus(section: dict, seeds: Dict[str, int]):
    gen = GenConfig.from_dict({**section.get("generator", {}), "seed": seeds["synth"]})
    mut = MutationConfig.from_dict({**section.get("mutation", {}), "seed": seeds["mutation"]})
    corpus = make_corpus(gen, mut, n_unseen=section.get("n_unseen", 90))
    return corpus.dataset, corpus.unseen, {"generator": gen.to_dict(), "mutation": mut.to_dict()}


def write_corpus(directory: Path, dataset: Dataset, unseen: Optional[Dataset]) -> None:
    traces = directory / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    for name, ds in (("manifest.csv", dataset), ("unseen_manifest.csv", unseen)):
        if ds is None:
            continue
        rows = []
        for t in ds:
            write_trace_file(t, traces / f"{t.sample_id}.json")
            rows.append((t.sample_id, f"traces/{t.sample_id}.json", t.label))
        write_manifest(rows, directory / name)


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Run every stage, writing artifacts to ``out_dir``; returns a summary dict.

    ``STAGE`` in ``out_dir`` names the stage in progress, and reads ``done``
    after success. On failure it is left pointing at the failed stage and
    :class:`StageFailed` is raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = config.seeds()
    stamp = {"config_hash": config.config_hash, "seed": config.seed, "seeds": seeds}
    state = {}

    def stage(name):
        (out / "STAGE").write_text(name + "\n", encoding="utf-8")
        logger.info("[%s] start", name)

    current = "setup"
    try:
        current = "data"
        stage(current)
        if "synth" in config.input:
            dataset, unseen, synth_cfg = synth_corpus(config.input["synth"], seeds)
            write_corpus(out / "corpus", dataset, unseen)
        else:
            root = config.input.get("root") or str(Path(config.input["manifest"]).parent)
            dataset, skipped = load_dataset(root, config.input["manifest"])
            unseen, synth_cfg = None, None
            if config.input.get("unseen_manifest"):
                unseen, _ = load_dataset(root, config.input["unseen_manifest"])
            if skipped:
                logger.warning("[data] skipped %d unreadable rows", len(skipped))
        _dump(out / "config.json", {**stamp, "config": config.to_dict(), "synth": synth_cfg})
        logger.info("[data] %d traces %s, %d unseen", len(dataset), dataset.class_counts(),
                    0 if unseen is None else len(unseen))

        current = "split"
        stage(current)
        split = stratified_split(dataset.sample_ids, dataset.labels, config.split_ratio, seeds["split"])
        _dump(out / "split.json", {**stamp, **split.to_dict()})

        current = "featurize"
        stage(current)
        vocab = build_vocab(dataset.subset(split.train_ids), config.ngram)
        matrix = encode_dataset(dataset, vocab)
        vocab.save(out / "vocab.json")
        matrix.save(out / "matrix.txt")
        train, test = matrix.select_ids(split.train_ids), matrix.select_ids(split.test_ids)
        logger.info("[featurize] n=%d V=%d train=%d test=%d", config.ngram, len(vocab), len(train.labels),
                    len(test.labels))

        current = "train"
        stage(current)
        models_dir = out / "models"
        models_dir.mkdir(exist_ok=True)
        full, full_metrics = {}, {}
        for kind, params in config.classifiers.items():
            model = _with_seed(kind, params, seeds, threads).fit(train.X, train.labels)
            full[kind] = model
            full_metrics[kind] = compute_metrics(test.labels, model.predict(test.X))
            save_model(models_dir / f"{kind}.json", model, vocab_id=vocab.vocab_id, **stamp)
        (out / "metrics.txt").write_text(metrics_table(full_metrics), encoding="utf-8")

        current = "select"
        stage(current)
        rankings, trajectories = {}, {}
        for kind in config.select_with:
            rankings[kind] = rank_features(full[kind].feature_importances_)
            est = _with_seed(kind, config.classifiers[kind], seeds, 1)
            trajectories[kind] = incremental_select(matrix, rankings[kind], [est], config.chunk, split,
                                                    n_jobs=threads)[0]
            logger.info("[select] %s F1_max=%.4f n_max=%d", kind, trajectories[kind].f1_max,
                        trajectories[kind].n_max)
        buf = io.StringIO()
        buf.write(f"# config_hash={stamp['config_hash']} seed={config.seed}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["classifier", "i", "accuracy", "precision", "recall", "f1"])
        for kind in config.select_with:
            writer.writerows(trajectories[kind].rows())
        (out / "trajectory.csv").write_text(buf.getvalue(), encoding="utf-8")
        sets = {k: top_set(rankings[k], trajectories[k], vocab.vocab_id) for k in config.select_with}
        _dump(out / "selection.json", {
            **stamp,
            "classifiers": {
                k: {"F1_max": trajectories[k].f1_max, "n_max": trajectories[k].n_max,
                    "selected_indices": [int(i) for i in rankings[k].top(trajectories[k].n_max)]}
                for k in config.select_with
            },
        })

        current = "intersect"
        stage(current)
        common = intersect_top([sets[k] for k in config.intersect])
        rank_pos = {k: np.argsort(rankings[k].order) for k in config.intersect}
        features = sorted(common, key=lambda i: tuple(int(rank_pos[k][i]) for k in config.intersect))
        _dump(out / "intersection.json", {
            **stamp,
            "n_features": len(vocab),
            "sets": {k: sets[k].n_max for k in config.intersect},
            "size": len(common),
            "features": [
                {"index": int(i), "gram": list(vocab.grams[i]),
                 "ranks": {k: int(rank_pos[k][i]) + 1 for k in config.intersect}}
                for i in features
            ],
        })

        current = "reduce"
        stage(current)
        reduced = None
        if common:
            red_est = _with_seed(config.reduced_classifier, config.classifiers[config.reduced_classifier], seeds,
                                 threads)
            reduced = reduced_retrain(matrix, common, red_est, split)
            save_model(models_dir / f"{config.reduced_classifier}_reduced.json", reduced.model,
                       vocab_id=vocab.vocab_id, feature_indices=reduced.features, **stamp)
        metrics_doc = {
            **stamp,
            "ngram": config.ngram,
            "n_features": len(vocab),
            "n_train": len(train.labels),
            "n_test": len(test.labels),
            "full": {k: m.to_dict() for k, m in full_metrics.items()},
            "reduced": None if reduced is None else {
                "classifier": config.reduced_classifier,
                "n_features": len(reduced.features),
                "reduction_ratio": round(reduced.reduction_ratio, 6),
                "metrics": reduced.metrics.to_dict(),
            },
        }
        _dump(out / "metrics.json", metrics_doc)

        current = "unseen"
        stage(current)
        unseen_doc = {**stamp, "evaluated": unseen is not None and len(unseen) > 0}
        if unseen_doc["evaluated"]:
            kind = config.reduced_classifier
            res_full = evaluate_unseen(full[kind], unseen, vocab)
            unseen_doc["full"] = {"classifier": kind, **res_full.to_dict()}
            if reduced is not None:
                res_red = evaluate_unseen(reduced.model, unseen, vocab, selected=reduced.features)
                unseen_doc["reduced"] = {"classifier": kind, **res_red.to_dict()}
        _dump(out / "unseen.json", unseen_doc)

        state = {
            "metrics": metrics_doc,
            "trajectories": trajectories,
            "rankings": rankings,
            "sets": sets,
            "intersection": common,
            "vocab": vocab,
            "unseen": unseen_doc,
            "split": split,
            "models": full,
            "reduced": reduced,
        }
        (out / "STAGE").write_text("done\n", encoding="utf-8")
        logger.info("[done] outputs in %s", out)
        return state
    except Exception as exc:
        logger.error("[%s] %s", current, exc)
        raise StageFailed(current, exc) from exc
