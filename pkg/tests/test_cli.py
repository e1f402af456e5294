"""End-to-end CLI tests over temporary workspaces: command wiring, exit
codes, config precedence, and run-to-run determinism."""

from __future__ import annotations

import io
import json
import os

import pytest

from adgcode import cli
from adgcode.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE
from adgcode.graph import load_graph
from adgcode.model import TrainingDivergedError, generate_greedy, load_checkpoint


def run_cli(args):
    out = io.StringIO()
    code = cli.run(args, out=out)
    return code, out.getvalue()


def write_config(tmp_path, **extra):
    base = {
        "paths": {
            "signatures": str(tmp_path / "signatures.sig"),
            "graph": str(tmp_path / "graph.adg"),
            "train": str(tmp_path / "train.tsv"),
            "valid": str(tmp_path / "valid.tsv"),
            "test": str(tmp_path / "test.tsv"),
            "checkpoint": str(tmp_path / "model.ckpt"),
        },
        "model": {
            "word_dim": 8, "code_dim": 8, "hidden_dim": 12, "mlp_hidden": 12,
            "dropout": 0.1, "beam_width": 2, "max_len": 25,
        },
        "embedder": {"hops": 2, "aggregator": "lstm"},
        "train": {
            "batch_size": 4, "max_epochs": 1000, "max_steps": 25,
            "eval_interval": 100, "patience": 5, "warmup_steps": 50, "seed": 0,
        },
        "seed": 0,
    }
    base.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base))
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    code, _ = run_cli([
        "gen-synthetic", "--out", str(tmp_path),
        "--types", "4", "--methods", "8", "--max-chain", "3",
        "--size", "12", "--seed", "3",
    ])
    assert code == EXIT_OK
    return tmp_path


class TestGenSynthetic:
    def test_writes_all_artifacts(self, tmp_path):
        code, out = run_cli([
            "gen-synthetic", "--out", str(tmp_path),
            "--types", "3", "--methods", "6", "--max-chain", "2", "--size", "6",
        ])
        assert code == EXIT_OK
        for name in ("signatures.sig", "train.tsv", "valid.tsv", "test.tsv"):
            assert (tmp_path / name).exists()

    def test_deterministic_per_seed(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        for d in (a_dir, b_dir):
            code, _ = run_cli([
                "gen-synthetic", "--out", str(d),
                "--types", "4", "--methods", "8", "--max-chain", "3",
                "--size", "10", "--seed", "7",
            ])
            assert code == EXIT_OK
        for name in ("signatures.sig", "train.tsv", "valid.tsv", "test.tsv"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_invalid_spec_usage_error(self, tmp_path):
        code, _ = run_cli([
            "gen-synthetic", "--out", str(tmp_path), "--methods", "0",
        ])
        assert code == EXIT_USAGE


class TestBuildGraph:
    def test_toy_signatures(self, tmp_path):
        sig = tmp_path / "toy.sig"
        sig.write_text(
            "type C\ntype D\ntype E\n"
            "method m1 () -> C\nmethod m2 () -> C\n"
            "method m3 () -> D\nmethod m4 (C, D) -> E\n"
        )
        graph_path = tmp_path / "toy.adg"
        code, out = run_cli([
            "build-graph", "--signatures", str(sig), "--graph", str(graph_path),
        ])
        assert code == EXIT_OK
        adg = load_graph(graph_path.read_text())
        assert adg.num_nodes == 4
        edges = {(e.head, e.tag, e.tail) for e in adg.edges}
        assert (1, "C", 3) in edges and (2, "D", 3) in edges
        assert "Nodes 4" in out

    def test_empty_signatures(self, tmp_path):
        sig = tmp_path / "empty.sig"
        sig.write_text("# nothing here\n")
        code, out = run_cli([
            "build-graph", "--signatures", str(sig), "--graph", str(tmp_path / "g.adg"),
        ])
        assert code == EXIT_OK
        assert "Nodes 0" in out and "Edges 0" in out

    def test_stats_match_dump_oracle(self, workspace):
        cfg = write_config(workspace)
        code, out = run_cli(["build-graph", "--config", cfg])
        assert code == EXIT_OK
        adg = load_graph((workspace / "graph.adg").read_text())
        stats = dict(line.split() for line in out.strip().splitlines())
        assert int(stats["Nodes"]) == adg.num_nodes
        assert int(stats["Edges"]) == adg.num_edges
        expect_avg = adg.num_edges / adg.num_nodes
        assert float(stats["Avg.in"]) == pytest.approx(expect_avg, abs=0.005)

    def test_parse_error_exit_code(self, tmp_path):
        sig = tmp_path / "bad.sig"
        sig.write_text("method broken ( -> X\n")
        code, _ = run_cli([
            "build-graph", "--signatures", str(sig), "--graph", str(tmp_path / "g.adg"),
        ])
        assert code == EXIT_DATA


class TestTrain:
    def test_missing_dataset_is_config_error(self, workspace):
        cfg = write_config(workspace)
        os.remove(workspace / "train.tsv")
        run_cli(["build-graph", "--config", cfg])
        code, _ = run_cli(["train", "--config", cfg])
        assert code == EXIT_USAGE
        assert not (workspace / "model.ckpt").exists()

    def test_train_writes_checkpoint_and_history(self, workspace):
        cfg = write_config(workspace)
        assert run_cli(["build-graph", "--config", cfg])[0] == EXIT_OK
        code, out = run_cli(["train", "--config", cfg])
        assert code == EXIT_OK
        assert (workspace / "model.ckpt").exists()
        history = (workspace / "model.ckpt.history").read_text().strip().splitlines()
        assert len(history) == 25
        first = json.loads(history[0])
        assert set(first) >= {"step", "loss", "lrate"}

    def test_same_seed_byte_identical_checkpoints(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        assert run_cli(["train", "--config", cfg])[0] == EXIT_OK
        first = (workspace / "model.ckpt").read_bytes()
        assert run_cli(["train", "--config", cfg])[0] == EXIT_OK
        assert (workspace / "model.ckpt").read_bytes() == first

    def test_seed_override_changes_checkpoint(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        run_cli(["train", "--config", cfg])
        baseline = (workspace / "model.ckpt").read_bytes()
        assert run_cli(["train", "--config", cfg, "--seed", "9"])[0] == EXIT_OK
        assert (workspace / "model.ckpt").read_bytes() != baseline

    def test_divergence_exit_code(self, workspace, monkeypatch):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])

        def explode(*args, **kwargs):
            raise TrainingDivergedError(3)

        monkeypatch.setattr(cli, "train", explode)
        code, _ = run_cli(["train", "--config", cfg])
        assert code == EXIT_DIVERGED


class TestGenerateCommand:
    @pytest.fixture
    def trained(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        assert run_cli(["train", "--config", cfg])[0] == EXIT_OK
        return cfg

    def test_empty_description_usage_error(self, trained):
        code, _ = run_cli(["generate", "--config", trained, "   "])
        assert code == EXIT_USAGE

    def test_beam_one_equals_greedy(self, trained, workspace):
        desc_line = (workspace / "train.tsv").read_text().splitlines()[0]
        description = desc_line.split("\t")[0]
        code, out = run_cli(["generate", "--config", trained, "--beam", "1", description])
        assert code == EXIT_OK
        model = load_checkpoint((workspace / "model.ckpt").read_bytes())
        expect = generate_greedy(model, description.split(), max_len=25)
        assert out.strip().split() == expect

    def test_missing_checkpoint_is_config_error(self, workspace):
        cfg = write_config(workspace)
        code, _ = run_cli(["generate", "--config", cfg, "hello"])
        assert code == EXIT_USAGE

    def test_corrupt_checkpoint_is_data_error(self, trained, workspace):
        (workspace / "model.ckpt").write_bytes(b"garbage")
        code, _ = run_cli(["generate", "--config", trained, "hello there"])
        assert code == EXIT_DATA


class TestEvaluateCommand:
    def test_report_format_and_exit(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        run_cli(["train", "--config", cfg])
        code, out = run_cli(["evaluate", "--config", cfg])
        assert code == EXIT_OK
        lines = out.strip().splitlines()
        assert lines[0].split("\t") == [
            "Acc", "Bleu", "F1", "CIDEr", "RougeL", "Rouge1", "Rouge2", "RIBES", "PoV",
        ]
        values = lines[1].split("\t")
        assert len(values) == 9

    def test_workers_flag_matches_serial(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        run_cli(["train", "--config", cfg])
        _, serial = run_cli(["evaluate", "--config", cfg])
        _, parallel = run_cli(["evaluate", "--config", cfg, "--workers", "4"])
        assert serial == parallel


class TestAblateCommand:
    def test_unknown_axis_usage_error(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        code, _ = run_cli(["ablate", "--config", cfg, "--axis", "learning=fast"])
        assert code == EXIT_USAGE

    def test_two_aggregator_variants(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        code, out = run_cli(["ablate", "--config", cfg, "--axis", "aggregator=mean,lstm"])
        assert code == EXIT_OK
        lines = out.strip().splitlines()
        assert lines[0].startswith("variant")
        assert lines[1].startswith("aggregator=mean")
        assert lines[2].startswith("aggregator=lstm")

    def test_hops_axis_labels(self, workspace):
        cfg = write_config(workspace)
        run_cli(["build-graph", "--config", cfg])
        code, out = run_cli(["ablate", "--config", cfg, "--axis", "hops=1,2"])
        assert code == EXIT_OK
        assert "hops=1" in out and "hops=2" in out
