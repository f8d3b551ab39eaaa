import json
import subprocess
import sys

import pytest

from cubes import planted_cube
from fgextract.cli import main
from fgextract.io import read_bag, write_bag, write_cube
from fgextract.datagen import SynthConfig, generate_bag
from fgextract.metrics import angular_difference

TINY = {"synth": {"K": 3, "N": 6, "M": 5}, "iterations": {"minvolfit": 200, "epfit": 200, "minvolnmf": 100}}


def config(tmp_path, **kw):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({**TINY, **kw}))
    return str(p)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "fgextract", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "fgextract", "fit"], capture_output=True, text=True)
    assert bad.returncode == 2


def test_gen_is_byte_identical(tmp_path):
    cfg = config(tmp_path, grids={"epfit": [0]}, snr=[1e2, 1e3], n_bags=2)
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 2 * 2 * 2
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["gen", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c/bag000_snr00.bin").read_bytes() != (tmp_path / "a/bag000_snr00.bin").read_bytes()


def test_fit_epfit_noiseless(tmp_path, capsys):
    bag, truth = generate_bag(SynthConfig(K=4, N=12, M=8, p=1.0, seed=3))
    write_bag(tmp_path / "bag", bag, truth.params)
    assert main(["fit", str(tmp_path / "bag"), "--algorithm", "epfit", "--out", str(tmp_path / "o")]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["algorithm"] == "epfit" and rec["hyperparams"] == {"alpha": 0}
    assert rec["signature_error"] <= 1e-4
    assert json.loads((tmp_path / "o/fit.json").read_text()) == rec


def test_fit_lambda_list(tmp_path, capsys):
    bag, truth = generate_bag(SynthConfig(K=3, N=6, M=5, snr=1e3, seed=4))
    write_bag(tmp_path / "bag", bag)
    argv = ["fit", str(tmp_path / "bag"), "--algorithm", "minvolfit", "--lambda", "1e-3,1e-2", "--iters", "50"]
    assert main(argv) == 0
    recs = json.loads(capsys.readouterr().out)
    assert [r["hyperparams"]["lambda"] for r in recs] == [1e-3, 1e-2]
    assert all("signature_error" not in r for r in recs)


def test_sweep_counts_and_parallel(tmp_path):
    cfg = config(tmp_path, grids={"epfit": [0, 1], "minvolnmf": [0.1]}, snr=[1e2, 1e3], n_bags=2)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s1")]) == 0
    assert main(["sweep", "--config", cfg, "--jobs", "2", "--out", str(tmp_path / "s2")]) == 0
    a = (tmp_path / "s1/records.csv").read_text()
    assert a == (tmp_path / "s2/records.csv").read_text()
    assert len(a.splitlines()) == 1 + 3 * 2 * 2
    assert (tmp_path / "s1/curves/minvolnmf_0.1.csv").exists()


def test_sweep_single_algorithm_flags(tmp_path):
    argv = ["sweep", "--config", config(tmp_path, grids={"epfit": [0]}, snr=[1e2], n_bags=1),
            "--algorithm", "minvolfit", "--lambda", "1e-3", "--lambda", "1e-2", "--snr", "1e3", "--out", str(tmp_path / "s")]
    assert main(argv) == 0
    rows = (tmp_path / "s/records.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 and all(r.startswith("minvolfit,") and ",1000.0," in r for r in rows)


def test_eval_reproduces_summary(tmp_path, capsys):
    cfg = config(tmp_path, grids={"epfit": [0]}, snr=[1e2, 1e3], n_bags=3)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert main(["eval", str(tmp_path / "s"), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e/summary.csv").read_text() == (tmp_path / "s/summary.csv").read_text()
    assert "median=" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["fit"],
        ["sweep"],
        ["sweep", "--algorithm", "minvolfit"],
        ["gen", "--seed", "-1"],
        ["sweep", "--algorithm", "epfit", "--jobs", "0"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as e:
        code = main(argv)
        raise SystemExit(code)
    assert e.value.code == 2


def test_config_error_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"grids": {"epfit": [0]}, "snr": [1], "n_bags": -3}))
    assert main(["sweep", "--config", str(p)]) == 2
    assert "$.n_bags" in capsys.readouterr().err


def test_missing_file_exit_1(tmp_path):
    assert main(["fit", str(tmp_path / "nothing"), "--algorithm", "epfit"]) == 1


def test_empty_oracle_exit_3(tmp_path):
    cube, _ = planted_cube(seed=0)
    cube.foreground[:] = False
    write_cube(tmp_path / "c", cube)
    assert main(["oracle", str(tmp_path / "c")]) == 3


def test_oracle_and_patches(tmp_path, capsys):
    cube, f = planted_cube(seed=5)
    write_cube(tmp_path / "c", cube)
    assert main(["oracle", str(tmp_path / "c"), "--normalize", "max"]) == 0
    ref = json.loads(capsys.readouterr().out)
    # the cube is stored as float32, so agreement is at single precision
    assert angular_difference(ref["f_ref"], f) < 1e-3
    assert main(["patches", str(tmp_path / "c"), "--window", "4", "--stride", "2", "--out", str(tmp_path)]) == 0
    msg = capsys.readouterr().out
    bag = read_bag(tmp_path / "patches").bag
    assert f"kept {bag.K} windows" in msg
    assert main(["patches", str(tmp_path / "c"), "--window", "99"]) == 2
