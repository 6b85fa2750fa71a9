import json

import pandas as pd
import pytest

from base.checkpoint import NetworkCheckpoint
from base.command_registry import Command, CommandManager, default_commands
from base.errors import ConfigError
from base.run_config import RESOLVED_CONFIG, load_run_config
from base.store import WindowStore
from main_har import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main

SYNTH = ["synth.n_subjects=3", "synth.days_per_subject=1", "synth.windows_per_day=24"]
TINY = ["net=tiny", "sampler.subjects_per_iter=2", "sampler.windows_per_subject=8", "train.epochs=1", "train.batch_size=16"]


def _run(name, out, *overrides, seed=0):
    cfg = load_run_config(overrides=[*overrides], seed=seed, out=str(out))
    return default_commands().execute(name, cfg)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    store = _run("synth", root / "data", *SYNTH)["store"]
    ckpt = _run("pretrain", root / "ssl", *TINY, f"store={store}", "pretrain.epochs=1")["checkpoint"]
    tuned = _run("finetune", root / "ft", *TINY, f"store={store}", f"checkpoint={ckpt}", "family=finetune-head")
    return {"root": root, "store": store, "pretrain": ckpt, "finetune": tuned}


class TestPipeline:
    def test_synth_outputs(self, pipeline):
        store = WindowStore.load(pipeline["store"])
        assert len(store) == 72
        assert (pipeline["root"] / "data" / RESOLVED_CONFIG).exists()
        assert len(pd.read_csv(pipeline["root"] / "data" / "windows.csv")) == 72

    def test_pretrain_outputs(self, pipeline):
        ssl = pipeline["root"] / "ssl"
        history = pd.read_csv(ssl / "history.csv")
        assert set(history["task"]) == {"aot", "permutation", "time_warp"}
        assert (ssl / "history.svg").read_text().lstrip().startswith("<?xml")
        split = pd.read_csv(ssl / "ssl_split.csv")
        assert sorted(split["split"].unique()) == ["test", "train"]
        resolved = json.loads((ssl / RESOLVED_CONFIG).read_text())
        assert resolved["net"]["width_base"] == 8

    def test_head_only_finetune_keeps_trunk(self, pipeline):
        outputs = pipeline["finetune"]
        report = pd.read_csv(outputs["report"])
        assert report.iloc[-1]["fold"] == "summary"
        assert len(report) == 4
        model = NetworkCheckpoint.load(outputs["model"])
        assert model.trunk_bytes() == NetworkCheckpoint.load(pipeline["pretrain"]).trunk_bytes()
        assert "confusion_0" in outputs

    def test_eval(self, pipeline, tmp_path):
        outputs = _run("eval", tmp_path, f"store={pipeline['store']}", f"checkpoint={pipeline['finetune']['model']}")
        report = pd.read_csv(outputs["report"])
        assert len(report) == 4
        assert report["f1"].between(0, 1).all()
        assert "confusion_all" in outputs

    def test_eval_rejects_pretext_checkpoint(self, pipeline, tmp_path):
        with pytest.raises(ConfigError, match="no activity classifier"):
            _run("eval", tmp_path, f"store={pipeline['store']}", f"checkpoint={pipeline['pretrain']}")

    def test_explain(self, pipeline, tmp_path):
        outputs = _run(
            "explain", tmp_path, f"store={pipeline['store']}", f"checkpoint={pipeline['pretrain']}",
            "explain.method=saliency", "explain.window_index=3", "explain.n_scales=12",
        )
        assert len(pd.read_csv(outputs["relevance"])) == 900
        assert len(pd.read_csv(outputs["scalogram"])) == 12 * 300
        assert "<svg" in outputs["panel"].read_text()

    def test_explain_index_out_of_range(self, pipeline, tmp_path):
        with pytest.raises(ConfigError, match="window_index"):
            _run("explain", tmp_path, f"store={pipeline['store']}", f"checkpoint={pipeline['pretrain']}", "explain.window_index=999")

    def test_export_embeddings(self, pipeline, tmp_path):
        outputs = _run("export-embeddings", tmp_path, f"store={pipeline['store']}", f"checkpoint={pipeline['pretrain']}")
        frame = pd.read_csv(outputs["embeddings"])
        assert frame.shape == (72, 3 + 64)
        assert list(frame.columns[:3]) == ["subject_id", "day_index", "label"]

    def test_forest(self, pipeline, tmp_path):
        outputs = _run("rf", tmp_path, f"store={pipeline['store']}", "forest.n_trees=5")
        assert len(pd.read_csv(outputs["features"])) == 72
        assert "model" not in outputs

    def test_finetune_needs_finetune_family(self, pipeline, tmp_path):
        with pytest.raises(ConfigError, match="family"):
            _run("finetune", tmp_path, f"store={pipeline['store']}", f"checkpoint={pipeline['pretrain']}", "family=scratch")


class TestRegistry:
    def test_every_command_registered(self):
        assert default_commands().names() == [
            "synth", "ingest", "pretrain", "finetune", "scratch", "transfer",
            "rf", "eval", "explain", "mask", "ablate", "export-embeddings",
        ]

    def test_missing_required_input(self):
        with pytest.raises(ConfigError, match="store=<path>"):
            default_commands().execute("pretrain", load_run_config())

    def test_unknown_command(self):
        with pytest.raises(ConfigError, match="Unknown command"):
            CommandManager().execute("nope", load_run_config())

    def test_failures_propagate(self):
        def broken(cfg):
            raise ValueError("boom")

        manager = CommandManager()
        manager.register(Command("broken", "always fails", broken))
        with pytest.raises(ValueError, match="boom"):
            manager.execute("broken", load_run_config())
        assert manager.list_commands() == [{"name": "broken", "description": "always fails", "required": []}]


class TestMain:
    def test_success_prints_outputs(self, tmp_path, capsys):
        code = main(["synth", *SYNTH, "--out", str(tmp_path), "--seed", "2"])
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert f"store\t{tmp_path / 'store.harw'}" in printed
        assert json.loads((tmp_path / RESOLVED_CONFIG).read_text())["synth"]["seed"] == 2

    def test_config_error_exit_code(self, tmp_path):
        assert main(["synth", "synth.n_subjects=0", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert main(["pretrain", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert main(["pretrain", f"store={tmp_path / 'missing.harw'}", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_corrupt_store_exit_code(self, tmp_path):
        bad = tmp_path / "bad.harw"
        bad.write_bytes(b"HARW not really")
        assert main(["pretrain", f"store={bad}", "--out", str(tmp_path / "run")]) == EXIT_INVARIANT

    def test_unknown_command_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            main(["dance"])
