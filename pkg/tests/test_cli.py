import json

import pytest

from src.cli import dispatch
from src.embedding_store import EmbeddingStore
from src.sid_io import read_sids
from utils.helpers import read_json

TRAIN_FLAGS = ["--levels", "2", "--codes", "8", "--epochs", "1", "--batch", "64", "--seed", "2"]


@pytest.fixture
def embeddings_file(tmp_path):
    path = tmp_path / "emb.nuq"
    assert dispatch(["synth", "--items", "200", "--dim", "6", "--seed", "1", "--out", str(path)]) == 0
    return path


class TestSynth:
    def test_writes_outputs(self, embeddings_file):
        loaded = EmbeddingStore.load_embeddings(embeddings_file)
        assert (loaded.count, loaded.dim) == (200, 6)
        manifest = read_json(embeddings_file.with_name("emb.manifest.json"))
        assert manifest["subcommand"] == "synth"
        assert manifest["seed"] == 1
        assert manifest["outputs"]["ids"].endswith("emb.ids.jsonl")

    def test_deterministic(self, embeddings_file, tmp_path):
        again = tmp_path / "again.nuq"
        dispatch(["synth", "--items", "200", "--dim", "6", "--seed", "1", "--out", str(again)])
        assert again.read_bytes() == embeddings_file.read_bytes()

    def test_config_file_precedence(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"n_items": 50, "dim": 4, "seed": 7}), encoding="utf-8")
        out = tmp_path / "cfg.nuq"
        assert dispatch(["--config", str(config), "synth", "--items", "60", "--out", str(out)]) == 0
        loaded = EmbeddingStore.load_embeddings(out)
        assert (loaded.count, loaded.dim) == (60, 4)
        assert read_json(tmp_path / "cfg.manifest.json")["seed"] == 7

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NUQUANT_SEED", "11")
        out = tmp_path / "env.nuq"
        assert dispatch(["synth", "--items", "20", "--dim", "2", "--out", str(out)]) == 0
        assert read_json(tmp_path / "env.manifest.json")["seed"] == 11

    def test_flag_beats_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NUQUANT_SEED", "11")
        out = tmp_path / "flag.nuq"
        dispatch(["synth", "--items", "20", "--dim", "2", "--seed", "4", "--out", str(out)])
        assert read_json(tmp_path / "flag.manifest.json")["seed"] == 4


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert dispatch(["frobnicate"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_missing_required_flag(self, capsys):
        assert dispatch(["train", "--in", "x.nuq"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_version(self, capsys):
        assert dispatch(["--version"]) == 0
        assert "nuquant" in capsys.readouterr().out

    def test_invalid_config_value(self, embeddings_file, tmp_path):
        assert dispatch(["train", "--in", str(embeddings_file), "--out-model", str(tmp_path / "m.json"), "--codes", "1"]) == 1

    def test_truncated_input(self, embeddings_file, tmp_path, capsys):
        embeddings_file.write_bytes(embeddings_file.read_bytes()[:-4])
        code = dispatch(["train", "--in", str(embeddings_file), "--out-model", str(tmp_path / "m.json")] + TRAIN_FLAGS)
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_input(self, tmp_path):
        assert dispatch(["neighbors", "--in", str(tmp_path / "absent.nuq"), "--out", str(tmp_path / "n.jsonl")]) == 2

    def test_numerical_failure(self, embeddings_file, tmp_path, monkeypatch):
        monkeypatch.setattr("src.quantizer.recon_loss", lambda z, z_hat: float("inf"))
        code = dispatch(["train", "--in", str(embeddings_file), "--out-model", str(tmp_path / "m.json")] + TRAIN_FLAGS)
        assert code == 3


class TestPipeline:
    def test_end_to_end(self, embeddings_file, tmp_path, capsys):
        model = tmp_path / "model.json"
        sids = tmp_path / "sids.csv"
        emb = str(embeddings_file)

        assert dispatch(["train", "--in", emb, "--out-model", str(model), "--transform", "ks"] + TRAIN_FLAGS) == 0
        assert dispatch(
            ["quantize", "--in", emb, "--model", str(model), "--out", str(sids), "--dedup", "--recon-out", str(tmp_path / "recon.nuq")]
        ) == 0
        assert "reconstruction MSE" in capsys.readouterr().out
        rows = read_sids(sids)
        assert len(rows) == 200
        assert len({sid.tokens() for _, sid in rows}) == 200

        assert dispatch(["stats", "--sids", str(sids), "--codes", "8", "--out", str(tmp_path / "stats.json"), "--usage-csv", str(tmp_path / "usage.csv")]) == 0
        report = read_json(tmp_path / "stats.json")
        assert [level["level"] for level in report["levels"]] == [0, 1]
        assert report["collisions"]["n_distinct"] <= 200

        assert dispatch(["compare", "--target", str(sids), "--generated", str(sids), "--codes", "8", "--out", str(tmp_path / "bias.json")]) == 0
        assert read_json(tmp_path / "bias.json")["summary"]["max_total_variation"] == 0.0

        assert dispatch(["pca", "--in", emb, "--model", str(model), "--out", str(tmp_path / "pca.csv"), "--bins", "10"]) == 0
        assert dispatch(["neighbors", "--in", emb, "--out", str(tmp_path / "nb.jsonl"), "--k", "2"]) == 0
        lines = (tmp_path / "nb.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 200
        assert len(json.loads(lines[0])["neighbors"]) == 2

        for name in ("model", "sids", "stats", "bias", "pca", "nb"):
            assert (tmp_path / f"{name}.manifest.json").is_file()

    def test_train_deterministic(self, embeddings_file, tmp_path):
        first, second = tmp_path / "first.json", tmp_path / "second.json"
        for out in (first, second):
            assert dispatch(["train", "--in", str(embeddings_file), "--out-model", str(out)] + TRAIN_FLAGS) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_ablate(self, embeddings_file, tmp_path):
        out = tmp_path / "ablation.csv"
        code = dispatch(["ablate", "--in", str(embeddings_file), "--out", str(out), "--variants", "identity", "ks"] + TRAIN_FLAGS)
        assert code == 0
        summary = read_json(tmp_path / "ablation.summary.json")
        assert set(summary["variants"]) == {"identity/r-vq", "ks/r-vq"}
