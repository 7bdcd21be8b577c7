import json

import numpy as np
import pytest

from ramanchd.config import build_config, load_config
from ramanchd.errors import ConfigError
from ramanchd.tables import Table, csv_to_table, read_table, table_to_csv, table_to_json, write_table


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_dotted_and_section_forms_agree(tmp_path):
    dotted = write(tmp_path, 'scenario = "noise-sweep"\nparams.g = 4e-3\nchd.phi_pi = [0.5]\n'
                             'sweep.parameter = "delta"\nsweep.start = -1\nsweep.stop = 1\n'
                             'sweep.count = 5\nsweep.unit = "omega_m"\n', "a.toml")
    sections = write(tmp_path, 'scenario = "noise-sweep"\n[params]\ng = 4e-3\n[chd]\nphi_pi = [0.5]\n'
                               '[sweep]\nparameter = "delta"\nstart = -1\nstop = 1\ncount = 5\n'
                               'unit = "omega_m"\n', "b.toml")
    a, b = load_config(dotted), load_config(sections)
    assert a == b
    assert a.params.g == 4e-3
    assert a.phis == pytest.approx((np.pi / 2,))
    np.testing.assert_allclose(a.sweep.values(a.params.omega_m), np.linspace(-0.1, 0.1, 5))


def test_json_mirror(tmp_path):
    raw = {"scenario": "chd-time", "params": {"omega_pump_squared": 1e-2}, "output": {"format": "json"}}
    cfg = load_config(write(tmp_path, json.dumps(raw), "run.json"))
    assert cfg.params.omega_pump == pytest.approx(0.1)
    assert cfg.output_format == "json"


def test_quality_factor_sets_kappa():
    cfg = build_config({"params": {"quality": 8.0, "omega_c": 2.0}}, scenario="chd-time")
    assert cfg.params.kappa == pytest.approx(0.25)


@pytest.mark.parametrize("raw, field", [
    ({"params": {"kapa": 0.2}}, "params.kapa"),
    ({"params": {"kappa": 0.0}}, "params.kappa"),
    ({"params": {"kappa": -0.1}}, "params.kappa"),
    ({"params": {"g": "big"}}, "params.g"),
    ({"params": {"omega_pump": 0.1, "omega_pump_squared": 0.01}}, "params.omega_pump_squared"),
    ({"sweep": {"parameter": "delta", "start": 1, "stop": 0, "count": 3}}, "sweep.stop"),
    ({"sweep": {"parameter": "phi", "start": 0, "stop": 1, "count": 3}}, "sweep.parameter"),
    ({"truncation": {"n_cavity": 1}}, "truncation.n_cavity"),
    ({"output": {"format": "xml"}}, "output.format"),
    ({"solver": {"propagator": "euler"}}, "solver.propagator"),
    ({"sensors": {"epsilon": 0}}, "sensors.epsilon"),
])
def test_invalid_values_name_the_field(raw, field):
    with pytest.raises(ConfigError) as exc:
        build_config(raw, scenario="noise-sweep")
    assert exc.value.field == field
    assert field in str(exc.value)


def test_scenario_mismatch_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        build_config({"scenario": "chd-time"}, scenario="noise-sweep")
    with pytest.raises(ConfigError):
        build_config({}, scenario="raman")
    with pytest.raises(ConfigError) as exc:
        load_config(tmp_path / "absent.toml")
    assert exc.value.field == "config"
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "params = [", "broken.toml"))


def test_shipped_configs_parse():
    from pathlib import Path
    paths = sorted(Path(__file__).resolve().parents[1].glob("configs/*.toml"))
    assert len(paths) >= 6
    for path in paths:
        load_config(path)


def test_csv_round_trip_is_byte_identical(tmp_path):
    table = Table("demo", ["x", "y", "label"], [[0.1, 1e-300, "a"], [2, -0.0, "b"]], ["units: eV"])
    path = write_table(table, tmp_path)
    text = path.read_text()
    back = read_table(path)
    assert back == table
    assert table_to_csv(back) == text
    json_path = write_table(table, tmp_path, "json")
    assert table_to_json(read_table(json_path)) == json_path.read_text()


def test_table_rejects_bad_rows():
    with pytest.raises(ValueError):
        table_to_csv(Table("t", ["a", "b"], [[1.0]]))
    with pytest.raises(ValueError):
        table_to_csv(Table("t", ["a"], [["x,y"]]))
    with pytest.raises(ValueError):
        csv_to_table("# table: t\n")
