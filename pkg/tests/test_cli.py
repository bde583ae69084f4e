import json

import numpy as np
import pytest

from edgecache import cli, cnn
from edgecache.milp_export import lp_variables
from edgecache.netmodel import load_instance
from edgecache.solver import count_variables


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "d"
    assert cli.main(["gen", "--seed", "1", "--flows", "5", "--count", "6", "--out", str(out)]) == 0
    return out


def test_gen_writes_count_files(data_dir):
    for sub in ("instances", "labels", "images"):
        assert len(list((data_dir / sub).glob("*.json"))) == 6
    assert (data_dir / "topology.json").exists()
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["count"] == 6 and manifest["flows"] == 5


def test_gen_is_byte_deterministic(data_dir, tmp_path):
    again = tmp_path / "again"
    cli.main(["gen", "--seed", "1", "--flows", "5", "--count", "6", "--out", str(again)])
    for f in sorted(data_dir.rglob("*.json")):
        assert (again / f.relative_to(data_dir)).read_bytes() == f.read_bytes()


def test_gen_rejects_zero_flows():
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen", "--flows", "0"])
    assert exc.value.code == 2


def test_unwritable_output_names_the_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = cli.main(["gen", "--count", "1", "--out", str(blocker / "sub")])
    assert code == 1
    assert str(blocker / "sub") in capsys.readouterr().err


def test_seed_falls_back_to_environment(tmp_path):
    args = cli._parser().parse_args(["gen"])
    assert cli.resolve_config(args, {"EDGECACHE_SEED": "17"})["seed"] == 17
    assert cli.resolve_config(args, {})["seed"] == 0
    args = cli._parser().parse_args(["gen", "--seed", "3"])
    assert cli.resolve_config(args, {"EDGECACHE_SEED": "17"})["seed"] == 3


def test_config_file_is_overridden_by_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"count": 9, "flows": 7, "seed": 4}))
    args = cli._parser().parse_args(["gen", "--config", str(path), "--flows", "5"])
    cfg = cli.resolve_config(args, {})
    assert (cfg["count"], cfg["flows"], cfg["seed"]) == (9, 5, 4)


def test_config_is_logged(data_dir, tmp_path, caplog):
    inst = data_dir / "instances" / "00000.json"
    with caplog.at_level("INFO", logger="edgecache"):
        cli.main(["render", str(inst), "--out", str(tmp_path / "x.pgm")])
    assert '"command": "render"' in caplog.text


def test_solve_gca_prints_outcome(data_dir, capsys):
    inst = data_dir / "instances" / "00000.json"
    assert cli.main(["solve", str(inst), "--policy", "gca"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["policy"] == "gca" and len(out["solution"]["x"]) == 5


def test_solve_benchmark_matches_label(data_dir, capsys):
    inst = data_dir / "instances" / "00002.json"
    cli.main(["solve", str(inst), "--policy", "benchmark"])
    out = json.loads(capsys.readouterr().out)
    label = json.loads((data_dir / "labels" / "00002.json").read_text())
    assert out["solution"]["x"] == label["x"]


def test_solve_weights_override(data_dir, capsys):
    inst = data_dir / "instances" / "00000.json"
    cli.main(["solve", str(inst), "--alpha", "0", "--beta", "1"])
    out = json.loads(capsys.readouterr().out)
    # only transmission cost remains
    assert out["solution"]["objective"] < 12 * 5


def test_export_milp_count(data_dir, tmp_path):
    inst = data_dir / "instances" / "00001.json"
    out = tmp_path / "m.lp"
    assert cli.main(["export-milp", str(inst), "--out", str(out)]) == 0
    names, _ = lp_variables(out.read_text())
    assert len(names) == count_variables(load_instance(inst.read_text())) == 376


def test_render_writes_pgm(data_dir, tmp_path):
    out = tmp_path / "img.pgm"
    cli.main(["render", str(data_dir / "instances" / "00000.json"), "--out", str(out)])
    assert out.read_bytes().startswith(b"P5\n33 5\n255\n")
    assert len(out.read_bytes()) == 12 + 5 * 33


def test_train_solve_and_eval(data_dir, tmp_path, capsys):
    models = tmp_path / "m" / "models.json"
    assert cli.main(["train", "--data", str(data_dir), "--epochs", "2", "--validation", "2",
                     "--out", str(models)]) == 0
    assert len(cnn.load_models(models)) == 5
    curve = (tmp_path / "m" / "models.loss.csv").read_text().splitlines()
    assert curve[0] == "flow,epoch,train_loss,val_loss" and len(curve) == 1 + 5 * 2

    inst = str(data_dir / "instances" / "00000.json")
    capsys.readouterr()
    assert cli.main(["solve", inst, "--policy", "cnn-hcls", "--models", str(models)]) == 0
    assert json.loads(capsys.readouterr().out)["policy"] == "cnn_hcls"

    res = tmp_path / "res"
    code = cli.main(["eval", "--flows", "5", "--count", "2", "--models", str(models),
                     "--out", str(res)])
    assert code == 0
    assert (res / "comparison.csv").read_text().count("\n") == 1 + 5
    assert "cnn_rmilp" in (res / "comparison.txt").read_text()


def test_missing_models_is_an_error(data_dir, capsys):
    inst = str(data_dir / "instances" / "00000.json")
    assert cli.main(["solve", inst, "--policy", "pure-cnn"]) == 1
    assert "--models" in capsys.readouterr().err


def test_model_height_mismatch_names_dims(data_dir, tmp_path, capsys):
    model = cnn.CnnModel(4, 33, 6)
    path = tmp_path / "bad.json"
    cnn.save_models([model] * 5, path)
    inst = str(data_dir / "instances" / "00000.json")
    assert cli.main(["solve", inst, "--policy", "pure-cnn", "--models", str(path)]) == 1
    assert "4x33" in capsys.readouterr().err


def test_eval_fails_when_benchmark_is_infeasible(monkeypatch, tmp_path):
    def fake(*args, **kwargs):
        return [cli.evalkit.MetricsReport("benchmark", 5, 1, 1.0, 1.0, 0.0, 0.0, 0.0, 376.0,
                                          {}, {}, 0.0)]

    monkeypatch.setattr(cli.evalkit, "run_comparison", fake)
    assert cli.main(["eval", "--policy", "benchmark", "--out", str(tmp_path)]) == 1
