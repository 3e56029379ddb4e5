import json
import subprocess
import sys
from pathlib import Path

import pytest

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def run_cli(*args, **kwargs):
    return subprocess.run([sys.executable, "-m", "roomimp", *map(str, args)],
                          capture_output=True, text=True, **kwargs)


def small_config(tmp_path, **overrides):
    doc = json.loads((CONFIG_DIR / "room2d.json").read_text())
    doc["N"] = 256
    doc["runs"] = 2
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    config = small_config(tmp)
    data = tmp / "y.json"
    r = run_cli("make-data", "--config", config, "--out", data)
    assert r.returncode == 0, r.stderr
    return tmp, config, data


def test_make_data_and_identify_deterministic(workdir):
    tmp, config, data = workdir
    out1, out2 = tmp / "r1.csv", tmp / "r2.csv"
    r1 = run_cli("identify", "--config", config, "--data", data,
                 "--seed", 42, "--out", out1)
    r2 = run_cli("identify", "--config", config, "--data", data,
                 "--seed", 42, "--out", out2)
    assert r1.returncode == 0, r1.stderr
    assert r2.returncode == 0
    assert out1.read_bytes() == out2.read_bytes()
    head = out1.read_text().splitlines()
    assert head[0].startswith("# tool=roomimp version=")
    assert any(line.startswith("# config_sha256=") for line in head)
    assert any(line.startswith("# seed=42") for line in head)


def test_identify_threads_byte_identical(workdir):
    tmp, config, data = workdir
    out1, out8 = tmp / "t1.csv", tmp / "t8.csv"
    r1 = run_cli("identify", "--config", config, "--data", data,
                 "--threads", 1, "--out", out1)
    r8 = run_cli("identify", "--config", config, "--data", data,
                 "--threads", 8, "--out", out8)
    assert r1.returncode == 0 and r8.returncode == 0
    assert out1.read_bytes() == out8.read_bytes()


def test_samples_override_changes_result(workdir):
    tmp, config, data = workdir
    out1, out2 = tmp / "n1.csv", tmp / "n2.csv"
    assert run_cli("identify", "--config", config, "--data", data,
                   "--samples", 128, "--out", out1).returncode == 0
    assert run_cli("identify", "--config", config, "--data", data,
                   "--samples", 64, "--out", out2).returncode == 0
    assert out1.read_bytes() != out2.read_bytes()


def test_missing_config_flag_exits_2(tmp_path):
    r = run_cli("identify", "--data", "x.json", "--out", tmp_path / "r.csv")
    assert r.returncode == 2
    assert not (tmp_path / "r.csv").exists()


def test_unknown_flag_rejected(workdir):
    tmp, config, data = workdir
    r = run_cli("identify", "--config", config, "--data", data,
                "--out", tmp / "x.csv", "--frobnicate", 1)
    assert r.returncode == 2


def test_nonexistent_config_exits_2(tmp_path):
    r = run_cli("make-data", "--config", tmp_path / "missing.json",
                "--out", tmp_path / "y.json")
    assert r.returncode == 2
    assert "error=config" in r.stderr


def test_invalid_json_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    r = run_cli("make-data", "--config", bad, "--out", tmp_path / "y.json")
    assert r.returncode == 2
    assert "error=config" in r.stderr


def test_out_parent_must_exist(workdir):
    tmp, config, data = workdir
    r = run_cli("identify", "--config", config, "--data", data,
                "--out", tmp / "no_such_dir" / "r.csv")
    assert r.returncode == 2


def test_degenerate_weights_exits_3(workdir, tmp_path):
    tmp, config, data = workdir
    doc = json.loads(data.read_text())
    doc["readings"] = [[re + 1000.0, im] for re, im in doc["readings"]]
    bad = tmp_path / "misfit.json"
    bad.write_text(json.dumps(doc))
    r = run_cli("identify", "--config", config, "--data", bad,
                "--out", tmp_path / "r.csv")
    assert r.returncode == 3
    assert r.stderr.startswith("error=degenerate-weights max_loglik=")
    assert not (tmp_path / "r.csv").exists()


def test_mesh_info(workdir, tmp_path):
    _, config, _ = workdir
    out = tmp_path / "mesh.txt"
    r = run_cli("mesh-info", "--config", config, "--out", out)
    assert r.returncode == 0
    assert "vertices=120" in r.stdout
    text = out.read_text()
    assert "# patch R1" in text and "# patch R2" in text


def test_study_n_cli(tmp_path):
    config = small_config(tmp_path, **{
        "N": 64, "runs": 2,
        "study_n": {"n_values": [32, 64], "n_ref": 128},
    })
    out = tmp_path / "study_n.csv"
    r = run_cli("study-n", "--config", config, "--out", out)
    assert r.returncode == 0, r.stderr
    lines = out.read_text().splitlines()
    header = [line for line in lines if not line.startswith("#")][0]
    assert header.split(",") == list(
        ("study", "f_hz", "h", "N", "run", "status", "param",
         "value", "error", "max_loglik", "seed"))
    rows = [line for line in lines if line.startswith("n,")]
    assert len(rows) == 2 * 2 * 2 * 10


def test_study_h_cli(tmp_path):
    config = small_config(tmp_path, **{
        "N": 64, "runs": 1, "study_h": {"levels": 1, "ref_level": 1},
    })
    out = tmp_path / "study_h.csv"
    r = run_cli("study-h", "--config", config, "--out", out)
    assert r.returncode == 0, r.stderr
    assert out.read_text().count("\nh,") == 20


def test_sweep_cli(tmp_path):
    config = small_config(tmp_path)
    doc = json.loads(config.read_text())
    del doc["frequency"], doc["h"]
    doc["sweep"] = {"lo": 45.0, "hi": 55.0, "step": 10.0}
    doc["h_rule"] = {"per_wavelength": 20, "cap": 0.5}
    doc["N"] = 128
    doc["runs"] = 1
    config.write_text(json.dumps(doc))
    out = tmp_path / "sweep.csv"
    r = run_cli("sweep", "--config", config, "--out", out)
    assert r.returncode == 0, r.stderr
    text = out.read_text()
    assert text.count(",ok,") == 2 * 2 * 10
