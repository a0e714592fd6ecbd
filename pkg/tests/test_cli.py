import json

import pytest

from callgram.cli import main
from callgram.featurize import NGramVocab
from callgram.serialize import load_model

SMALL_CONFIG = {
    "seed": 11,
    "chunk": 50,
    "classifiers": {"RF": {"n_trees": 10}, "AdaBoost": {"n_rounds": 10}},
    "input": {"synth": {"generator": {"n_benign": 40, "n_malicious": 40, "trace_length_range": [40, 80]},
                        "n_unseen": 20}},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def report(api_times):
    return json.dumps({"behavior": {"processes": [{"calls": [{"api": a, "time": t} for a, t in api_times]}]}})


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_json(base / "config.json", SMALL_CONFIG)
    assert main(["run", "--config", str(cfg), "--out", str(base / "out")]) == 0
    return base / "out"


def test_run_writes_artifacts(small_run):
    for name in ["metrics.json", "trajectory.csv", "intersection.json", "unseen.json", "selection.json",
                 "config.json", "split.json", "vocab.json", "matrix.txt", "models/RF.json"]:
        assert (small_run / name).exists(), name
    assert (small_run / "STAGE").read_text().strip() == "done"
    metrics = json.loads((small_run / "metrics.json").read_text())
    config = json.loads((small_run / "config.json").read_text())
    assert metrics["config_hash"] == config["config_hash"]
    assert set(metrics["seeds"]) >= {"split", "synth", "mutation", "model/RF"}
    first = (small_run / "trajectory.csv").read_text().splitlines()[0]
    assert first == f"# config_hash={metrics['config_hash']} seed=11"
    for name in ["intersection.json", "unseen.json", "selection.json", "split.json"]:
        assert json.loads((small_run / name).read_text())["config_hash"] == metrics["config_hash"]


def test_predict_verdicts(small_run, capsys):
    model, vocab = small_run / "models" / "DT.json", small_run / "vocab.json"
    split = json.loads((small_run / "split.json").read_text())
    train = set(split["train_ids"])
    mal = next(i for i in split["train_ids"] if i.startswith("rk-"))
    ben = next(i for i in split["train_ids"] if i.startswith("benign-"))
    assert mal in train and ben in train
    for sid, verdict in ((mal, "malicious"), (ben, "benign")):
        capsys.readouterr()
        trace = small_run / "corpus" / "traces" / f"{sid}.json"
        assert main(["predict", "--model", str(model), "--vocab", str(vocab), "--trace", str(trace)]) == 0
        assert capsys.readouterr().out == f"{sid},{verdict}\n"


def test_predict_with_reduced_model(small_run, capsys):
    reduced = small_run / "models" / "RF_reduced.json"
    _, info = load_model(reduced)
    assert info["feature_indices"]
    trace = small_run / "corpus" / "traces" / "benign-0000.json"
    assert main(["predict", "--model", str(reduced), "--vocab", str(small_run / "vocab.json"),
                 "--trace", str(trace)]) == 0
    assert capsys.readouterr().out.startswith("benign-0000,")


def test_predict_errors(small_run, tmp_path):
    model = str(small_run / "models" / "RF.json")
    vocab = str(small_run / "vocab.json")
    trace = str(small_run / "corpus" / "traces" / "benign-0001.json")
    assert main(["predict", "--model", model, "--vocab", vocab, "--trace", str(tmp_path / "nope.json")]) == 2
    other = tmp_path / "other_vocab.json"
    NGramVocab(2, [("A", "B"), ("B", "C")]).save(other)
    assert main(["predict", "--model", model, "--vocab", str(other), "--trace", trace]) == 2


def test_evaluate_unseen_manifest(small_run, capsys):
    capsys.readouterr()
    code = main(["evaluate", "--model", str(small_run / "models" / "RF_reduced.json"),
                 "--vocab", str(small_run / "vocab.json"),
                 "--manifest", str(small_run / "corpus" / "unseen_manifest.csv")])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    unseen = json.loads((small_run / "unseen.json").read_text())
    assert out["total"] == 20 and out["detected"] == unseen["reduced"]["detected"]


def test_ingest(tmp_path, capsys):
    rows = []
    for i in range(3):
        (tmp_path / f"r{i}.json").write_text(report([("A", 0.1), ("B", 0.2), ("C", 0.3 + i)]))
        rows.append(f"s{i},r{i}.json,{'malicious' if i else 'benign'}")
    (tmp_path / "m.csv").write_text("\n".join(rows) + "\n")
    assert main(["ingest", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "out")]) == 0
    assert sorted(p.name for p in (tmp_path / "out" / "traces").iterdir()) == ["s0.json", "s1.json", "s2.json"]
    assert json.loads(capsys.readouterr().out)["written"] == 3


def test_ingest_bad_inputs(tmp_path):
    (tmp_path / "r.json").write_text(report([("A", 0.1), ("B", 0.2)]))
    (tmp_path / "bad.csv").write_text("s0,r.json,spyware\n")
    (tmp_path / "empty.csv").write_text("")
    out = str(tmp_path / "out")
    assert main(["ingest", "--manifest", str(tmp_path / "bad.csv"), "--out", out]) == 2
    assert main(["ingest", "--manifest", str(tmp_path / "empty.csv"), "--out", out]) == 2
    assert main(["ingest", "--manifest", str(tmp_path / "missing.csv"), "--out", out]) == 2


def test_stagewise_commands(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", SMALL_CONFIG)
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "corpus")]) == 0
    assert main(["featurize", "--manifest", str(tmp_path / "corpus" / "manifest.csv"), "--ngram", "3",
                 "--seed", "11", "--out", str(tmp_path / "feat")]) == 0
    capsys.readouterr()
    assert main(["train", "--matrix", str(tmp_path / "feat" / "matrix.txt"), "--split",
                 str(tmp_path / "feat" / "split.json"), "--classifier", "DT", "--out", str(tmp_path / "m")]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"DT"}
    assert main(["select", "--matrix", str(tmp_path / "feat" / "matrix.txt"), "--split",
                 str(tmp_path / "feat" / "split.json"), "--chunk", "100", "--classifiers", "DT,AdaBoost"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["classifiers"]) == {"DT", "AdaBoost"}
    assert isinstance(doc["intersection"], list)


def test_run_failure_leaves_stage_marker(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"input": {"manifest": str(tmp_path / "missing.csv")}})
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) != 0
    assert (out / "STAGE").read_text().strip() == "data"


def test_bad_config_and_flags(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"ngram": 5})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--ngram", "4", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--threads", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["frobnicate"]) == 2


def test_run_from_manifest(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", SMALL_CONFIG)
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "corpus")]) == 0
    manifest_cfg = {**SMALL_CONFIG, "input": {"manifest": str(tmp_path / "corpus" / "manifest.csv"),
                                              "unseen_manifest": str(tmp_path / "corpus" / "unseen_manifest.csv")}}
    cfg2 = write_json(tmp_path / "c2.json", manifest_cfg)
    assert main(["run", "--config", str(cfg2), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "metrics.json").read_text())
    b = json.loads((tmp_path / "b" / "metrics.json").read_text())
    # same traces and seed, so everything but the config hash agrees
    assert a["full"] == b["full"] and a["reduced"] == b["reduced"]
    assert json.loads((tmp_path / "a" / "unseen.json").read_text())["full"]["total"] == 20
