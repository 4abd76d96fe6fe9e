import json

import pytest
import yaml

from expmem.cli import main
from expmem.core import write_corpus
from helpers import confused_truth, distractor, make_case, mock_world


def world_files(root, n_construction=40, n_test=20):
    _, corpus, test = mock_world(n_construction=n_construction, n_test=n_test)
    write_corpus(root / "corpus.jsonl", corpus)
    write_corpus(root / "test.jsonl", test)
    script = {
        "seed": 11,
        "confusions": [{"truth": confused_truth(i), "distractor": distractor(i), "mode": "always"} for i in range(10)],
    }
    (root / "agent.yaml").write_text(yaml.safe_dump(script))
    config = {
        "corpus": "corpus.jsonl",
        "testset": "test.jsonl",
        "store": "out/store.json",
        "logs": "out",
        "mock_agent": "agent.yaml",
        "mock_embedder": True,
    }
    (root / "run.yaml").write_text(yaml.safe_dump(config))
    return root / "run.yaml"


def test_build_eval_inspect(tmp_path, capsys):
    cfg = world_files(tmp_path)
    assert main(["build", "--config", str(cfg)]) == 0
    assert "built 8 notes" in capsys.readouterr().out
    assert (tmp_path / "out/store.json").exists()
    assert (tmp_path / "out/construction_log.jsonl").exists()

    assert main(["eval", "--config", str(cfg), "--trials", "2"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[:3] == ["Model", "Baseline", "w/Exp"]
    metrics = json.loads((tmp_path / "out/metrics.json").read_text())
    assert metrics["metrics"]["trials"] == 2
    assert metrics["metrics"]["delta"] > 0
    assert metrics["config"]["trials"] == 2
    assert "concurrency" not in metrics["config"]

    assert main(["inspect", "--config", str(cfg), "--label", confused_truth(0)]) == 0
    out = capsys.readouterr().out
    assert f"{confused_truth(0)} vs. {distractor(0)}" in out
    assert out.strip().endswith("1 notes")


def test_eval_baseline_only(tmp_path, capsys):
    cfg = world_files(tmp_path)
    assert main(["eval", "--config", str(cfg), "--baseline-only"]) == 0
    assert (tmp_path / "out/baseline_runlog.jsonl").exists()
    assert not (tmp_path / "out/exp_runlog.jsonl").exists()


def test_missing_corpus_is_fatal(tmp_path, capsys):
    cfg = world_files(tmp_path)
    assert main(["build", "--config", str(cfg), "--corpus", str(tmp_path / "nope.jsonl")]) == 1
    err = capsys.readouterr().err
    assert "corpus not found" in err and "nope.jsonl" in err


def test_missing_store_is_fatal(tmp_path, capsys):
    cfg = world_files(tmp_path)
    assert main(["eval", "--config", str(cfg)]) == 1
    assert "store not found" in capsys.readouterr().err


def test_bad_config_values(tmp_path, capsys):
    cfg = world_files(tmp_path)
    assert main(["build", "--config", str(cfg), "--rounds", "3"]) == 1
    assert "rounds" in capsys.readouterr().err
    (tmp_path / "bad.yaml").write_text("tau: 0.5\ncolour: red\n")
    assert main(["build", "--config", str(tmp_path / "bad.yaml")]) == 1
    assert "colour" in capsys.readouterr().err


def test_no_agent_configured(tmp_path, capsys):
    cfg = world_files(tmp_path)
    data = yaml.safe_load(cfg.read_text())
    del data["mock_agent"]
    cfg.write_text(yaml.safe_dump(data))
    assert main(["build", "--config", str(cfg)]) == 1
    assert "no agent configured" in capsys.readouterr().err


def test_malformed_corpus_reports_line(tmp_path, capsys):
    cfg = world_files(tmp_path)
    with open(tmp_path / "corpus.jsonl", "a") as fh:
        fh.write("{not json\n")
    assert main(["build", "--config", str(cfg)]) == 1
    assert "line 41" in capsys.readouterr().err


def test_partial_failure_exit_code(tmp_path, capsys):
    cfg = world_files(tmp_path)
    script = yaml.safe_load((tmp_path / "agent.yaml").read_text())
    script["failures"] = {"diagnose": ["t001"]}
    (tmp_path / "agent.yaml").write_text(yaml.safe_dump(script))
    assert main(["build", "--config", str(cfg)]) == 0
    assert main(["eval", "--config", str(cfg)]) == 2


def test_ablate(tmp_path, capsys):
    cfg = world_files(tmp_path, n_construction=20, n_test=10)
    grid = tmp_path / "grid.yaml"
    grid.write_text(yaml.safe_dump({"grid": [{"name": "default"}, {"name": "strict", "tau": 1.0}]}))
    assert main(["ablate", "--config", str(cfg), "--grid", str(grid)]) == 0
    out = capsys.readouterr().out
    assert "baseline (no memory)" in out and "strict" in out
    rows = json.loads((tmp_path / "out/ablation.json").read_text())["rows"]
    assert [r["config"]["name"] for r in rows] == ["default", "strict"]


def test_ablate_bad_grid(tmp_path, capsys):
    cfg = world_files(tmp_path)
    grid = tmp_path / "grid.yaml"
    grid.write_text(yaml.safe_dump({"grid": [{"name": "x", "taux": 1}]}))
    assert main(["ablate", "--config", str(cfg), "--grid", str(grid)]) == 1
    assert "taux" in capsys.readouterr().err


def test_split(tmp_path, capsys):
    cases = [make_case("a", "X", year=2023), make_case("b", "Y", year=2025), make_case("c", "Z", year=2024)]
    write_corpus(tmp_path / "all.jsonl", cases)
    out = tmp_path / "split"
    assert main(["split", "--corpus", str(tmp_path / "all.jsonl"), "--boundary", "2024", "--out-dir", str(out)]) == 0
    assert [json.loads(l)["id"] for l in (out / "construction.jsonl").read_text().splitlines()] == ["a"]
    assert [json.loads(l)["id"] for l in (out / "test.jsonl").read_text().splitlines()] == ["b", "c"]

    assert main(["split", "--corpus", str(tmp_path / "all.jsonl"), "--boundary", "2030", "--out-dir", str(out)]) == 0
    assert "test split is empty" in capsys.readouterr().err


def test_split_rejects_undated_case(tmp_path, capsys):
    write_corpus(tmp_path / "all.jsonl", [make_case("a", "X", year=None)])
    assert main(["split", "--corpus", str(tmp_path / "all.jsonl"), "--out-dir", str(tmp_path)]) == 1
    assert "'a'" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["teleport"])
