import json

import pytest
import yaml

import metric_corpus as mc
from stepwise_qa.cli import EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, load_config, main
from stepwise_qa.datamodel import write_dataset


@pytest.fixture
def workspace(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "train.json"), "-n", "20", "--seed", "1"]) == EXIT_OK
    assert main(["synth", "--out", str(tmp_path / "dev.json"), "-n", "6", "--seed", "2"]) == EXIT_OK
    cfg = {
        "format": "hotpot",
        "train_file": "train.json",
        "dev_file": "dev.json",
        "out": "out",
        "seed": 0,
        "backend": "toy",
        "training": {"batch_size": 8, "epochs": 2, "learning_rate": 0.001},
    }
    (tmp_path / "run.yaml").write_text(yaml.safe_dump(cfg))
    return tmp_path


def run(ws, *args):
    return main([*args, "--config", str(ws / "run.yaml")])


def test_prepare_writes_caches_and_recall(workspace, capsys):
    assert run(workspace, "prepare") == EXIT_OK
    out = capsys.readouterr().out
    assert "train: 20 examples, filter gold recall" in out
    lines = (workspace / "out" / "prepare" / "train.jsonl").read_text().splitlines()
    assert len(lines) == 20
    assert run(workspace, "prepare") == EXIT_OK
    assert "cache hit" in capsys.readouterr().out
    assert run(workspace, "prepare", "--force") == EXIT_OK
    assert "cache hit" not in capsys.readouterr().out


def test_prepare_names_corrupt_records(workspace, capsys):
    data = json.loads((workspace / "train.json").read_text())
    data[3]["supporting_facts"].append(["No Such Title", 0])
    bad_id = data[3]["_id"]
    (workspace / "train.json").write_text(json.dumps(data))
    assert run(workspace, "prepare") == EXIT_ERROR
    assert bad_id in capsys.readouterr().err
    assert not (workspace / "out" / "prepare" / "meta.json").exists()


def test_config_layers(workspace):
    cfg = load_config(workspace / "run.yaml", ["training.epochs=7"], {"seed": 5})
    assert cfg.training.epochs == 7 and cfg.training.batch_size == 8
    assert cfg.seed == 5 and cfg.training.seed == 5
    assert cfg.train_file == str(workspace / "train.json")
    # untouched keys keep the dataset defaults
    assert (cfg.training.lambda1, cfg.training.lambda2, cfg.training.lambda3) == (10.0, 2.0, 5.0)


def test_full_chain_is_deterministic(workspace, capsys):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train") == EXIT_OK
    train_dir = workspace / "out" / "train"
    log = (train_dir / "loss_log.jsonl").read_text().splitlines()
    assert len(log) == 6  # 20 examples, batch 8, 2 epochs
    assert not (train_dir / "repredicted.jsonl").exists()
    assert run(workspace, "train") == EXIT_OK
    assert "nothing to do" in capsys.readouterr().out

    assert run(workspace, "predict") == EXIT_OK
    pdir = workspace / "out" / "predict"
    first = {p.name: p.read_bytes() for p in pdir.iterdir()}
    preds = json.loads((pdir / "dev.predictions.json").read_text())
    assert len(preds["answer"]) == 6 and len(preds["sp"]) == 6
    assert len((pdir / "dev.traces.jsonl").read_text().splitlines()) == 6
    assert run(workspace, "predict", "--force") == EXIT_OK
    assert {p.name: p.read_bytes() for p in pdir.iterdir()} == first

    report = workspace / "report.json"
    assert main(["eval", "--predictions", str(pdir / "dev.predictions.json"), "--gold", str(workspace / "dev.json"),
                 "--buckets", "type", "--out", str(report)]) == EXIT_OK
    rep = json.loads(report.read_text())
    assert rep["n"] == 6 and set(rep["per_bucket"]) <= {"bridge", "comparison"}


def test_predict_without_checkpoint(workspace, capsys):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "predict", "--checkpoint", str(workspace / "missing")) == EXIT_ERROR


def test_train_resume(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train", "--stop-after", "2") == EXIT_OK
    log = workspace / "out" / "train" / "loss_log.jsonl"
    assert len(log.read_text().splitlines()) == 2
    assert run(workspace, "train", "--resume") == EXIT_OK
    steps = [json.loads(x)["step"] for x in log.read_text().splitlines()]
    assert steps == list(range(6))


def test_bias_mitigation_flag(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert main(["train", "--bias-mitigation", "--config", str(workspace / "run.yaml"),
                 "--set", "training.epochs=1"]) == EXIT_OK
    d = workspace / "out" / "train"
    assert len((d / "repredicted.jsonl").read_text().splitlines()) == 20
    assert len((d / "qg_augmentation.jsonl").read_text().splitlines()) == 20


def test_eval_hand_corpus(tmp_path, capsys):
    write_dataset(mc.gold(), tmp_path / "gold.json")
    (tmp_path / "p.json").write_text(json.dumps(mc.predictions()))
    labels = {i: ("even" if int(i[1:]) % 2 == 0 else "odd") for i in mc.CASES}
    (tmp_path / "b.json").write_text(json.dumps(labels))
    assert main(["eval", "--predictions", str(tmp_path / "p.json"), "--gold", str(tmp_path / "gold.json"),
                 "--buckets", str(tmp_path / "b.json"), "--out", str(tmp_path / "r.json")]) == EXIT_OK
    rep = json.loads((tmp_path / "r.json").read_text())
    for k, v in mc.TOTALS.items():
        assert rep[k] == pytest.approx(float(v), abs=1e-9)
    assert set(rep["per_bucket"]) == {"even", "odd"}
    assert "even" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 2
    assert main(["prepare", "--config", str(tmp_path / "none.yaml")]) != EXIT_OK


def test_partial_prediction_failure(workspace, monkeypatch, capsys):
    from stepwise_qa import pipeline

    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train", "--set", "training.epochs=1") == EXIT_OK
    real = pipeline.run_stepwise
    victim = json.loads((workspace / "dev.json").read_text())[2]["_id"]

    def flaky(ex, *a, **kw):
        if ex.id == victim:
            raise pipeline.PipelineError("boom", ex.id, [])
        return real(ex, *a, **kw)

    monkeypatch.setattr(pipeline, "run_stepwise", flaky)
    assert run(workspace, "predict") == EXIT_PARTIAL
    assert victim in capsys.readouterr().err
    pdir = workspace / "out" / "predict"
    preds = json.loads((pdir / "dev.predictions.json").read_text())
    assert len(preds["answer"]) == 5 and victim not in preds["answer"]
    traces = [json.loads(x) for x in (pdir / "dev.traces.jsonl").read_text().splitlines()]
    assert len(traces) == 6 and any("error" in t for t in traces)
