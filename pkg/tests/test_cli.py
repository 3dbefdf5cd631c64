import json

import pytest

from bolt.harness import benchmark as B
from bolt.harness import corpus as C
from bolt.harness.cli import build_parser, main


@pytest.fixture
def run_config(tiny_world, tmp_path):
    cfg = B.RunConfig(task=B.TOPIC_TASK, conditions=[["router"]], prompts=C.load_prompts()[:2], lengths=[5],
                      decode={"max_iterations": 2}, checkpoints=tiny_world.paths,
                      output_dir=str(tmp_path / "out"))
    path = tmp_path / "run.json"
    cfg.save(path)
    return path


def test_subcommands_are_registered():
    parser = build_parser()
    for cmd in ("train-lm", "train-clf", "generate", "benchmark", "gradcheck", "lambda-sweep", "ablation",
                "speed", "build-world"):
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([cmd, "--help"])
        assert exc.value.code == 0


def test_benchmark_dry_run(run_config, capsys):
    assert main(["benchmark", "--config", str(run_config), "--dry-run"]) == 0
    assert "2 samples planned" in capsys.readouterr().out


def test_benchmark_with_overrides(run_config, tmp_path, capsys):
    out = tmp_path / "override"
    assert main(["benchmark", "--config", str(run_config), "--out", str(out), "--seed", "5",
                 "--lam", "0.3", "--max-iterations", "1", "--schedule", "constant"]) == 0
    body = json.loads((out / "aggregate.json").read_text())
    assert body["config"]["seed"] == 5
    assert body["config"]["energy"]["lam"] == 0.3
    assert body["config"]["decode"] == {"max_iterations": 1, "schedule": "constant"}
    assert json.loads(capsys.readouterr().out)["metrics"]["n_samples"] == 2


def test_generate_keyword(tiny_world, capsys):
    code = main(["generate", "--lm", tiny_world.paths["generator"], "--prompt", "the food",
                 "--keywords", "router", "--length", "5", "--max-iterations", "2", "--trace"])
    out = capsys.readouterr().out
    assert code == 0 and out.startswith("the food ")
    assert '"iterations"' in out


def test_generate_needs_exactly_one_constraint(tiny_world, capsys):
    assert main(["generate", "--lm", tiny_world.paths["generator"], "--prompt", "the food"]) == 2


def test_train_lm_and_classifier(tmp_path, capsys):
    corpus = tmp_path / "lm.txt"
    C.write_lines(corpus, ["the food was good .", "the city is quiet ."] * 10)
    lm_path = tmp_path / "lm.npz"
    assert main(["train-lm", "--corpus", str(corpus), "--out", str(lm_path), "--d-model", "8",
                 "--heads", "2", "--max-len", "12", "--epochs", "1"]) == 0
    labeled = tmp_path / "clf.tsv"
    labeled.write_text("the food was good .\tpositive\nthe city is quiet .\tnegative\n" * 10)
    assert main(["train-clf", "--corpus", str(labeled), "--vocab-from", str(lm_path),
                 "--out", str(tmp_path / "clf.npz"), "--epochs", "1"]) == 0
    assert "held-out accuracy" in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    assert "27/27 checks passed" in capsys.readouterr().out
