import json

import pytest

from ramanchd.cli import main
from ramanchd.tables import read_table

FAST = """
scenario = "noise-sweep"
params.omega_pump = 0.05
chd.phi_pi = [0.0, 0.5]
truncation.n_cavity = 4
truncation.n_vib = 4
truncation.converge = false
"""


def config(tmp_path, extra="", name="run.toml"):
    path = tmp_path / name
    path.write_text(FAST + extra)
    return path


def run(tmp_path, *args, extra=""):
    out = tmp_path / "out"
    code = main(["noise-sweep", "--config", str(config(tmp_path, extra)), "--out", str(out), *args])
    return code, out


def test_single_point_run_writes_table_and_manifest(tmp_path, capsys):
    code, out = run(tmp_path)
    assert code == 0
    table = read_table(out / "noise_sweep.csv")
    assert table.columns[:2] == ["delta_eV", "n_ss"]
    assert len(table.rows) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["truncation"] == {"n_cavity": 4, "n_vib": 4, "displaced": True}
    assert set(manifest["outputs"]) == {"noise_sweep.csv"}
    assert "wrote 1 table" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    _, out = run(tmp_path)
    first = json.loads((out / "manifest.json").read_text())["outputs"]
    _, out = run(tmp_path)
    assert json.loads((out / "manifest.json").read_text())["outputs"] == first


def test_single_point_sweep_matches_plain_run(tmp_path):
    _, out = run(tmp_path)
    plain = read_table(out / "noise_sweep.csv")
    sweep = 'sweep.parameter = "delta"\nsweep.start = 0.0\nsweep.stop = 0.0\nsweep.count = 1\n'
    _, out = run(tmp_path, extra=sweep)
    swept = read_table(out / "noise_sweep.csv")
    assert swept.rows[0][1:] == plain.rows[0][1:]


def test_threads_do_not_change_output(tmp_path):
    sweep = 'sweep.parameter = "delta"\nsweep.start = -0.05\nsweep.stop = 0.05\nsweep.count = 3\n'
    _, out = run(tmp_path, extra=sweep)
    serial = (out / "noise_sweep.csv").read_bytes()
    _, out = run(tmp_path, "--threads", "2", extra=sweep)
    assert (out / "noise_sweep.csv").read_bytes() == serial


def test_json_format_and_env_out_dir(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("RAMANCHD_OUT_DIR", str(target))
    code = main(["noise-sweep", "--config", str(config(tmp_path)), "--format", "json"])
    assert code == 0
    assert (target / "noise_sweep.json").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(tmp_path, extra="params.kappa = -1.0\n")[0] == 2
    assert "params.kappa" in capsys.readouterr().err
    assert run(tmp_path, "--threads", "0")[0] == 2
    assert run(tmp_path, "--tolerance", "-1")[0] == 2
    assert main(["noise-sweep", "--config", str(tmp_path / "missing.toml")]) == 2
    # a rejected sensor coupling is a configuration problem
    bad = 'scenario = "filtered-sweep"\nsensors.epsilon = 1e-2\ntruncation.converge = false\n'
    (tmp_path / "f.toml").write_text(bad)
    assert main(["filtered-sweep", "--config", str(tmp_path / "f.toml"),
                 "--out", str(tmp_path / "f")]) == 2


def test_unconverged_truncation_exits_3(tmp_path, capsys):
    extra = ("truncation.converge = true\ntruncation.displaced = false\n"
             "truncation.max_cavity = 6\ntruncation.max_vib = 6\n")
    path = tmp_path / "c.toml"
    path.write_text(FAST.replace("truncation.converge = false\n", "") + extra)
    code = main(["noise-sweep", "--config", str(path), "--out", str(tmp_path / "c")])
    assert code == 3
    assert "did not converge" in capsys.readouterr().err


def test_numerical_failure_exits_4(tmp_path, capsys):
    # a step this coarse ends the grid before the correlation has decayed
    extra = 'grids.spectral_dtau = 1000.0\ngrids.tau_max = 1.0\n'
    path = tmp_path / "e.toml"
    path.write_text(FAST.replace('"noise-sweep"', '"emission-spectrum"') + extra)
    code = main(["emission-spectrum", "--config", str(path), "--out", str(tmp_path / "e")])
    assert code == 4
    assert "numerical error" in capsys.readouterr().err


def test_unknown_scenario_is_argparse_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["raman", "--config", str(config(tmp_path))])
    assert exc.value.code == 2
