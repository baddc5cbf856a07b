import json
import os

import pytest

from sharecause.cli import main
from sharecause.pipeline import sha256_file

SMALL = ("n_users = 150\nn_items = 30\nepochs = 3\nembedding_dim = 4\nbatch_size = 256\n"
         "ks = 5,10\nrepetitions = 1\nneural_iters = 50\n")


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "small.conf"
    p.write_text(SMALL)
    return str(p)


@pytest.fixture
def world(tmp_path, conf):
    out = tmp_path / "gen"
    assert main(["--config", conf, "--out", str(out), "--quiet", "generate"]) == 0
    return out


def _tree(root):
    return {os.path.relpath(os.path.join(d, f), root): sha256_file(os.path.join(d, f))
            for d, _, fs in os.walk(root) for f in fs}


def test_generate_outputs(world):
    for name in ("users.csv", "interactions.csv", "train.csv", "test.csv", "attributes.csv",
                 "news.csv", "news_features.csv", "world"):
        assert (world / name).exists()


def test_subcommand_chain(tmp_path, world, capsys):
    w = str(world)
    out = str(tmp_path / "o")
    for kind, extra in (("news", []), ("user_news", ["--attributes", f"{w}/attributes.csv"]),
                        ("neural", ["--news", f"{w}/news.csv",
                                    "--news-features", f"{w}/news_features.csv"])):
        rc = main(["--out", f"{out}/{kind}", "--quiet", "propensity", "--interactions",
                   f"{w}/train.csv", "--kind", kind, *extra])
        assert rc == 0, kind
        assert (tmp_path / "o" / kind / "propensity.csv").exists()

    for tag, prop in (("base", []), ("ips", ["--propensity", f"{out}/news/propensity.csv"])):
        rc = main(["train", "--out", f"{out}/{tag}", "--interactions", f"{w}/train.csv",
                   "--users", f"{w}/users.csv", "--epochs", "3", "--embedding-dim", "4", *prop])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["epochs"] == 3

    rc = main(["evaluate", "--out", f"{out}/eval", "--model", f"{out}/ips/model.txt",
               "--test", f"{w}/test.csv", "--train", f"{w}/train.csv", "--ks", "5,10"])
    assert rc == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["k"] == [5, 10] and len(metrics["recall"]) == 2

    rc = main(["--quiet", "causal", "--out", f"{out}/causal", "--interactions",
               f"{w}/interactions.csv", "--news", f"{w}/news.csv", "--attributes",
               f"{w}/attributes.csv", "--embeddings", f"news={out}/ips/embeddings.csv"])
    assert rc == 0
    assert (tmp_path / "o" / "causal" / "causal_LR-N.json").exists()
    assert (tmp_path / "o" / "causal" / "effects.csv").exists()

    lines = (tmp_path / "o" / "ips" / "embeddings.csv").read_text().splitlines()
    half = len(lines) // 2
    (tmp_path / "f.csv").write_text("\n".join(lines[:half]) + "\n")
    (tmp_path / "t.csv").write_text("\n".join(lines[:1] + lines[half:]) + "\n")
    rc = main(["--quiet", "behavior", "--out", f"{out}/beh", "--fake",
               str(tmp_path / "f.csv"), "--true", str(tmp_path / "t.csv")])
    assert rc == 0
    assert (tmp_path / "o" / "beh" / "behavior.json").exists()


def test_verify_unbiasedness(tmp_path):
    assert main(["--quiet", "--out", str(tmp_path), "verify-unbiasedness",
                 "--n-configs", "5"]) == 0
    res = json.loads((tmp_path / "unbiasedness.json").read_text())
    assert res["enumeration_ok"] and res["mc_ok"]


def test_quiet_suppresses_stdout(tmp_path, conf, capsys):
    assert main(["--quiet", "--config", conf, "--out", str(tmp_path), "generate"]) == 0
    assert capsys.readouterr().out == ""
    assert main(["--config", conf, "--out", str(tmp_path), "generate"]) == 0
    assert json.loads(capsys.readouterr().out)["n_users"] == 150


def test_flags_after_subcommand(tmp_path, conf):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", conf, "--seed", "4", "--out", str(a), "--quiet", "generate"]) == 0
    assert main(["generate", "--config", conf, "--seed", "4", "--out", str(b), "--quiet"]) == 0
    assert _tree(a) == _tree(b)


@pytest.mark.parametrize("argv", [
    [],
    ["nonsense"],
    ["train"],
    ["--seed", "x", "generate"],
    ["--config", "/no/such/file.conf", "generate"],
])
def test_validation_exit_code(tmp_path, argv, capsys):
    assert main(["--out", str(tmp_path), *argv]) == 1


def test_bad_config_key_is_validation_error(tmp_path):
    p = tmp_path / "bad.conf"
    p.write_text("n_users = 10\nwho = me\n")
    assert main(["--config", str(p), "--out", str(tmp_path), "--quiet", "pipeline"]) == 1


def test_missing_input_is_validation_error(tmp_path):
    assert main(["--quiet", "--out", str(tmp_path), "propensity", "--interactions",
                 str(tmp_path / "missing.csv")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_runtime_error(tmp_path, world):
    rc = main(["--quiet", "--out", str(tmp_path / "t"), "train", "--interactions",
               f"{world}/train.csv", "--learning-rate", "1e200", "--epochs", "3"])
    assert rc == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pipeline_divergence_exit_code(tmp_path):
    p = tmp_path / "div.conf"
    p.write_text(SMALL + "learning_rate = 1e200\ninit_std = 1.0\nl2_lambda = 1.0\n")
    assert main(["--quiet", "--config", str(p), "--out", str(tmp_path / "o"), "pipeline"]) == 2
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["status"] == "failed"


def test_pipeline_rerun_is_byte_identical(tmp_path, conf):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--quiet", "--config", conf, "--out", str(a), "pipeline"]) == 0
    assert main(["--quiet", "--config", conf, "--out", str(b), "pipeline"]) == 0
    ta, tb = _tree(a), _tree(b)
    assert ta == tb and "report.json" in ta and "manifest.json" in ta
