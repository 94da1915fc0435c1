import json

import pytest

from malobf.cli import run
from malobf.dataset import Dataset, load_samples
from malobf.feature_vocab import FeatureVocabulary

SMALL = ["--n-benign", "120", "--n-malicious", "60", "--n-benign-features", "90", "--n-malware-features", "20"]


def test_unknown_flag_and_command(capsys):
    assert run(["train", "--bogus"]) == 2
    assert run(["frobnicate"]) == 2
    assert run([]) == 2
    capsys.readouterr()


def test_operation_failure_is_one_line(tmp_path, capsys):
    code = run(["build-vocab", "--samples", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert code == 1
    assert err.startswith("malobf: error:") and err.count("\n") == 1


def test_pipeline_subcommands(tmp_path):
    syn, voc, vec = tmp_path / "syn", tmp_path / "voc", tmp_path / "vec"
    assert run(["gen-synthetic", "--out", str(syn), "--seed", "2", *SMALL]) == 0
    samples = load_samples(syn / "samples.jsonl")
    assert len(samples) == 180
    before = (syn / "samples.jsonl").read_bytes()

    assert run(["build-vocab", "--samples", str(syn / "samples.jsonl"), "--out", str(voc), "--no-use-intents",
                "--k-api", "10"]) == 0
    vocab = FeatureVocabulary.load(voc / "vocab.json")
    assert vocab.kinds() == ("permission", "api") and len(vocab.block("api")) == 10

    assert run(["vectorize", "--samples", str(syn / "samples.jsonl"), "--vocab", str(voc / "vocab.json"),
                "--out", str(vec)]) == 0
    full = Dataset.load(vec / "dataset.jsonl")
    train, test = Dataset.load(vec / "train.jsonl"), Dataset.load(vec / "test.jsonl")
    assert len(test) == len(full) * 3 // 10 and len(train) + len(test) == len(full)
    assert (syn / "samples.jsonl").read_bytes() == before

    common = ["--train", str(vec / "train.jsonl"), "--validation", str(vec / "test.jsonl"),
              "--epochs", "3", "--batch-size", "32", "--hidden", "8,8"]
    assert run(["train", *common, "--out", str(tmp_path / "base")]) == 0
    assert run(["harden", *common, "--out", str(tmp_path / "hard")]) == 0
    assert len((tmp_path / "hard" / "curves_hardened.csv").read_text().splitlines()) == 4

    assert run(["attack", "--test", str(vec / "test.jsonl"), "--out", str(tmp_path / "atk")]) == 0
    obf = Dataset.load(tmp_path / "atk" / "obfuscated.jsonl")
    assert len(obf) == len(test)
    assert run(["attack", "--test", str(vec / "test.jsonl"), "--pool", "train", "--out", str(tmp_path / "x")]) == 1

    data = f"{vec / 'test.jsonl'},{tmp_path / 'atk' / 'obfuscated.jsonl'}"
    assert run(["evaluate", "--model", str(tmp_path / "base" / "model.ckpt"), "--data", data,
                "--out", str(tmp_path / "ev")]) == 0
    rows = (tmp_path / "ev" / "evaluation.csv").read_text().splitlines()
    assert rows[0] == "dataset,n,accuracy,fnr,fpr" and len(rows) == 3

    for d in (syn, voc, vec, tmp_path / "base", tmp_path / "hard", tmp_path / "atk", tmp_path / "ev"):
        assert (d / "resolved_config.json").exists()


def test_config_file_merged_under_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n-benign": 40, "n_malicious": 10, "seed": 5, "n_benign_features": 90}))
    assert run(["gen-synthetic", "--config", str(cfg), "--n-malicious", "7", "--out", str(tmp_path / "o")]) == 0
    resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    assert (resolved["n_benign"], resolved["n_malicious"], resolved["seed"]) == (40, 7, 5)
    assert len(load_samples(tmp_path / "o" / "samples.jsonl")) == 47


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rate_typo": 1}))
    assert run(["gen-synthetic", "--config", str(cfg), "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("figures", [False, True])
def test_matrix_small_is_reproducible(tmp_path, figures):
    args = ["matrix", *SMALL, "--feature-configs", "apis,all", "--epochs", "3", "--hardened-epochs", "3",
            "--batch-size", "64", "--hidden", "16", "--seed", "4"]
    if figures:
        args.append("--figures")
    assert run([*args, "--out", str(tmp_path / "a")]) == 0
    assert run([*args, "--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "metrics.csv" in names and "curves_all_hardened.csv" in names and "resolved_config.json" in names
    assert ("fnr.png" in names) == figures
    for n in names:
        if n.endswith(".csv"):
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert len((tmp_path / "a" / "metrics.csv").read_text().splitlines()) == 9
