import json
from types import SimpleNamespace

import pytest

from app.zlik import cli
from app.zlik.cli import RUN_MANIFEST, main
from app.zlik.embed import TableEmbedder
from app.zlik.schemas.dataset import EPISODES_FILE, MANIFEST_FILE
from app.zlik.services.report_service import CONFUSION_JSON, REPORT_JSON, REPORT_TXT
from tests.conftest import tiny_config_dict


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(tiny_config_dict()), encoding="utf-8")
    return str(path)


def _gen(config_file, out, seed="5", splits=("train",)):
    return main(["gen-data", "--config", config_file, "--seed", seed, "--out", str(out), "--splits", *splits])


def test_gen_data_is_deterministic(tmp_path, config_file):
    assert _gen(config_file, tmp_path / "a", splits=("train", "test", "confusion")) == 0
    assert _gen(config_file, tmp_path / "b", splits=("train", "test", "confusion")) == 0
    for split in ("train", "test", "confusion"):
        a = (tmp_path / "a" / split / EPISODES_FILE).read_bytes()
        assert a == (tmp_path / "b" / split / EPISODES_FILE).read_bytes()
    ma = json.loads((tmp_path / "a" / RUN_MANIFEST).read_text())
    mb = json.loads((tmp_path / "b" / RUN_MANIFEST).read_text())
    assert ma["command"] == "gen-data" and ma["seed"] == 5
    assert ma["state_hash"] == mb["state_hash"]
    assert ma["config_hash"] == mb["config_hash"]
    assert set(ma["summary"]["datasets"]) == {"train", "test", "confusion"}
    assert not list(tmp_path.glob(".*.staging"))


def test_seed_accepts_hex(tmp_path, config_file):
    assert _gen(config_file, tmp_path / "dec", seed="255") == 0
    assert _gen(config_file, tmp_path / "hex", seed="0xff") == 0
    dec = (tmp_path / "dec" / "train" / EPISODES_FILE).read_bytes()
    assert dec == (tmp_path / "hex" / "train" / EPISODES_FILE).read_bytes()


def test_rerun_replaces_outputs(tmp_path, config_file):
    out = tmp_path / "run"
    assert _gen(config_file, out, seed="1") == 0
    first = (out / "train" / EPISODES_FILE).read_bytes()
    assert _gen(config_file, out, seed="2") == 0
    assert (out / "train" / EPISODES_FILE).read_bytes() != first


def test_unknown_config_key_exits_2(tmp_path, capsys):
    raw = tiny_config_dict()
    raw["sim"]["bogus"] = 1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    assert "zlik gen-data:" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_dataset_format_error_exits_3(tmp_path, config_file):
    assert _gen(config_file, tmp_path / "gen") == 0
    manifest_path = tmp_path / "gen" / "train" / MANIFEST_FILE
    manifest = json.loads(manifest_path.read_text())
    manifest["format_version"] = "zlik-ds-0"
    manifest_path.write_text(json.dumps(manifest))
    code = main([
        "eval", "--config", config_file, "--checkpoint", str(tmp_path / "nothing"),
        "--dataset", str(tmp_path / "gen" / "train"), "--out", str(tmp_path / "eval"),
    ])
    assert code == 3
    assert not (tmp_path / "eval").exists()
    assert not list(tmp_path.glob(".*.staging"))


def test_missing_checkpoint_exits_4(tmp_path, config_file):
    assert _gen(config_file, tmp_path / "gen") == 0
    code = main([
        "eval", "--config", config_file, "--checkpoint", str(tmp_path / "nothing"),
        "--dataset", str(tmp_path / "gen" / "train"), "--out", str(tmp_path / "eval"),
    ])
    assert code == 4


def test_train_kino_loads_alignment_for_empty_table(tmp_path, config_file, tiny_dataset_dir, tiny_alignment_dir, monkeypatch):
    seen = {}

    def fake_train_kino(dataset, cfg, seed, **kwargs):
        seen.update(kwargs)
        return None, SimpleNamespace(weights_hash="0" * 64), {"best_epoch": 1}

    monkeypatch.setattr(cli, "build_provider", lambda embed_cfg: TableEmbedder({}, dim=embed_cfg.dim))
    monkeypatch.setattr(cli, "train_kino", fake_train_kino)
    code = main([
        "train-kino", "--config", config_file, "--dataset", str(tiny_dataset_dir),
        "--align", str(tiny_alignment_dir), "--out", str(tmp_path / "kino"),
    ])
    assert code == 0
    assert len(seen["provider"]) == 0
    assert seen["align_model"] is not None and seen["align_meta"] is not None


def test_bad_seed_is_usage_error(tmp_path, config_file):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--config", config_file, "--seed", "-1", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2


def test_pipeline(tmp_path, config_file):
    common = ["--config", config_file, "--seed", "3"]
    gen, align, kino = tmp_path / "gen", tmp_path / "align", tmp_path / "kino"
    assert _gen(config_file, gen, splits=("train", "test", "confusion")) == 0
    assert main(["train-align", *common, "--dataset", str(gen / "train"), "--out", str(align)]) == 0
    assert (align / "alignment_eval.json").is_file()
    assert main([
        "train-kino", *common, "--dataset", str(gen / "train"), "--align", str(align), "--out", str(kino),
    ]) == 0
    assert main([
        "eval", *common, "--checkpoint", str(kino), "--dataset", str(gen / "test"),
        "--align", str(align), "--out", str(tmp_path / "eval"),
    ]) == 0
    assert (tmp_path / "eval" / REPORT_JSON).is_file()
    assert main([
        "confusion", *common, "--checkpoint", str(kino), "--dataset", str(gen / "confusion"),
        "--align", str(align), "--out", str(tmp_path / "cm"),
    ]) == 0
    cm = json.loads((tmp_path / "cm" / CONFUSION_JSON).read_text())
    assert cm["classes"] == ["broken_axle", "fall", "no_damage", "mtpsb"]
    assert main(["report", *common, "--input", str(tmp_path / "eval"), "--out", str(tmp_path / "rep")]) == 0
    assert "[overall]" in (tmp_path / "rep" / REPORT_TXT).read_text(encoding="utf-8")
    assert main([
        "finetune", *common, "--checkpoint", str(kino), "--class", "fall", "--seconds", "1",
        "--steps", "1", "--align", str(align), "--out", str(tmp_path / "ft"),
    ]) == 0
    ft = json.loads((tmp_path / "ft" / RUN_MANIFEST).read_text())
    assert ft["summary"]["windows"] == 20
    assert ft["summary"]["base_hash"] == json.loads((kino / "config.json").read_text())["weights_hash"]
