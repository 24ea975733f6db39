import json

import numpy as np
import pytest

from chartae import cli
from chartae.manifolds import load_pointcloud_csv
from chartae.model import ChartAutoencoder, ChartConfig, save_model
from chartae.simplicial import SimplicialComplex, save_complex_json


def run_cli(*argv) -> int:
    return cli.main(list(argv))


def test_generate_circle_csv(tmp_path):
    out = tmp_path / "circle.csv"
    assert run_cli("generate", "--kind", "circle", "--n", "1000",
                   "--seed", "7", "--out", str(out)) == 0
    cloud = load_pointcloud_csv(out)
    assert cloud.points.shape == (1000, 2)
    assert np.abs(np.linalg.norm(cloud.points, axis=1) - 1.0).max() <= 1e-12


def test_generate_sphere_high_ambient(tmp_path):
    out = tmp_path / "sphere.csv"
    assert run_cli("generate", "--kind", "sphere", "--n", "1000", "--ambient", "50",
                   "--embed-seed", "3", "--seed", "1", "--out", str(out)) == 0
    cloud = load_pointcloud_csv(out)
    assert cloud.points.shape == (1000, 50)
    assert np.abs(np.linalg.norm(cloud.points, axis=1) - 1.0).max() <= 1e-9


def test_generate_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run_cli("generate", "--kind", "torus", "--n", "200",
                       "--seed", "5", "--out", str(out)) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.fixture
def train_config(tmp_path):
    data_csv = tmp_path / "circle.csv"
    run_cli("generate", "--kind", "circle", "--n", "96", "--seed", "3",
            "--out", str(data_csv))
    out_dir = tmp_path / "run"
    config = tmp_path / "exp.ini"
    config.write_text(f"""
[dataset]
csv = {data_csv}

[model]
charts = 2
chart_dim = 1
preset = custom
hidden = 10,10

[train]
epochs = 2
pretrain_steps = 50
batch_size = 32
seed = 0

[output]
dir = {out_dir}
""")
    return config, out_dir, data_csv


def test_train_eval_geodesic_pipeline(train_config, tmp_path):
    config, out_dir, data_csv = train_config
    assert run_cli("train", str(config)) == 0
    assert (out_dir / "model.ckpt").exists()
    assert (out_dir / "report.csv").exists()
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["epochs_run"] == 2

    eval_out = tmp_path / "eval.json"
    assert run_cli("eval", "--checkpoint", str(out_dir / "model.ckpt"),
                   "--data", str(data_csv), "--ell", "20", "--seed", "1",
                   "--out", str(eval_out)) == 0
    payload = json.loads(eval_out.read_text())
    assert payload["ell"] == 20
    eval_out2 = tmp_path / "eval2.json"
    run_cli("eval", "--checkpoint", str(out_dir / "model.ckpt"),
            "--data", str(data_csv), "--ell", "20", "--seed", "1",
            "--out", str(eval_out2))
    assert eval_out.read_bytes() == eval_out2.read_bytes()

    # geodesic with identical endpoints: zero length
    poly_out = tmp_path / "poly.csv"
    rc = run_cli("geodesic", "--checkpoint", str(out_dir / "model.ckpt"),
                 "--a", "1.0,0.0", "--b", "1.0,0.0", "--k", "8",
                 "--out", str(poly_out))
    assert rc == 0
    assert poly_out.exists()

    assert run_cli("prune-report", "--checkpoint", str(out_dir / "model.ckpt")) == 0


def test_train_epochs_override_keeps_pretrained(train_config):
    config, out_dir, _ = train_config
    assert run_cli("train", str(config), "--epochs", "0") == 0
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["epochs_run"] == 0


def test_train_missing_config_key(tmp_path, capsys):
    config = tmp_path / "broken.ini"
    config.write_text("[dataset]\nkind = circle\n\n[model]\ncharts = 2\n")
    with pytest.raises(SystemExit) as exc_info:
        run_cli("train", str(config))
    assert "chart_dim" in str(exc_info.value)


def test_compile_simplex_command(tmp_path, capsys):
    S = SimplicialComplex(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]),
                          [(0, 1, 2), (0, 2, 3)])
    cpath = tmp_path / "complex.json"
    save_complex_json(S, cpath)
    vpath = tmp_path / "values.csv"
    vpath.write_text("v0,v1\n" + "\n".join(
        f"{x},{y}" for x, y in S.vertices))
    out = tmp_path / "net.ckpt"
    rc = run_cli("compile-simplex", "--complex", str(cpath), "--values", str(vpath),
                 "--out", str(out), "--probes", "200")
    captured = capsys.readouterr()
    assert rc == 0
    report = json.loads(captured.out)
    assert report["probe_max_error"] <= 1e-9
    assert report["declared_param_count"] <= report["param_bound"]
    assert out.exists() and (tmp_path / "net.ckpt.json").exists()


def test_sample_bound_command(capsys):
    assert run_cli("sample-bound", "--d", "2", "--tau", "1.0", "--C", "4.0",
                   "--eps", "0.2", "--nu", "0.1") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["n_required"] > 0


def test_sample_bound_rejects_large_epsilon(capsys):
    rc = run_cli("sample-bound", "--d", "2", "--tau", "1.0", "--C", "4.0",
                 "--eps", "0.6", "--nu", "0.1")
    assert rc == 1
    assert "tau/2" in capsys.readouterr().err


def test_eval_bad_checkpoint(tmp_path, capsys):
    bad = tmp_path / "junk.ckpt"
    bad.write_bytes(b"not a checkpoint")
    rc = run_cli("eval", "--checkpoint", str(bad), "--data", str(bad))
    assert rc == 1
