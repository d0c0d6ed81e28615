import csv
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from parisian_bailout.cli import main
from parisian_bailout.config import ConfigError, dump_config, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL_AUX = {
    "problem": "aux",
    "aux": {"model": {"drift": 0.1, "volatility": 1.0}, "q": 0.1, "r": 2.0, "beta": 1.5},
}

SMALL_REGIME = {
    "problem": "regime",
    "regime": {
        "generator": [[-0.5, 0.5], [0.4, -0.4]],
        "states": [
            {"model": {"drift": 0.1, "volatility": 1.0}, "q": 0.1},
            {"model": {"drift": 1.5, "jump_rate": 1.0, "jump_weights": [1.0], "jump_rates": [1.0]}, "q": 0.15},
        ],
        "r": 1.5,
        "beta": 1.4,
        "switch_jumps": [{"source": 0, "target": 1, "kind": "exponential", "rate": 2.0}],
    },
    "solver": {"grid_points": 400, "tol": 1e-7},
}


def with_changes(base, path, value):
    data = yaml.safe_load(yaml.safe_dump(base))
    node = data
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    return data


def write(tmp_path, data, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


# parsing -----------------------------------------------------------------------

def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL_AUX)
    assert cfg.aux.lam == 0.0
    assert cfg.oracle.n_paths == 200_000
    p = cfg.build()
    assert p.w.terminal_slope == 0.0 and float(p.w(3.0)) == 0.0


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    cfg.build()


def test_beta_at_most_one_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_config(with_changes(MINIMAL_AUX, ["aux", "beta"], 0.9))
    assert any("aux.beta" in e and "β must exceed 1" in e for e in exc.value.errors)


def test_bad_generator_row_is_named():
    bad = with_changes(SMALL_REGIME, ["regime", "generator"], [[-0.5, 0.4], [0.4, -0.4]])
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert any(e.startswith("regime.generator[0]") and "row sums" in e for e in exc.value.errors)


def test_several_errors_reported_together():
    bad = with_changes(SMALL_REGIME, ["regime", "beta"], 0.5)
    bad["regime"]["states"][1]["q"] = -1.0
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert len(exc.value.errors) >= 2


def test_unknown_field_rejected():
    bad = with_changes(MINIMAL_AUX, ["aux", "discount"], 0.3)
    with pytest.raises(ConfigError, match="discount"):
        parse_config(bad)


def test_missing_section_rejected():
    with pytest.raises(ConfigError, match="needs an 'aux' section"):
        parse_config({"problem": "aux"})


def test_nonconcave_payoff_rejected():
    bad = with_changes(MINIMAL_AUX, ["aux", "payoff"], {"knots": [0, 1, 2], "values": [0, 0.2, 1.0]})
    with pytest.raises(ConfigError, match="concave"):
        parse_config(bad)


@pytest.mark.parametrize("data", [MINIMAL_AUX, SMALL_REGIME])
def test_round_trip(data):
    cfg = parse_config(data)
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert again == cfg


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    (tmp_path / "bad.yaml").write_text("problem: [unclosed")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(tmp_path / "list.yaml")


# command line --------------------------------------------------------------------

def test_solve_aux_outputs(tmp_path, capsys):
    cfg = with_changes(MINIMAL_AUX, ["solver"], {"table_points": 51})
    out = tmp_path / "out"
    assert main(["solve-aux", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "values.csv")))
    assert len(rows) == 51
    assert list(rows[0]) == ["x", "state", "V", "dV", "above_barrier"]
    assert "b* =" in capsys.readouterr().out


def test_solve_regime_outputs_and_determinism(tmp_path):
    path = write(tmp_path, SMALL_REGIME)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve-regime", "--config", str(path), "--out", str(a)]) == 0
    assert main(["solve-regime", "--config", str(path), "--out", str(b)]) == 0
    rows = list(csv.DictReader(open(a / "values.csv")))
    assert len(rows) == 400 * 2
    assert {r["state"] for r in rows} == {"0", "1"}
    assert (a / "values.csv").read_bytes() == (b / "values.csv").read_bytes()
    summary = (a / "summary.txt").read_text()
    assert "K = " in summary and "error bound" in summary


def test_simulate_writes_csv(tmp_path):
    cfg = with_changes(MINIMAL_AUX, ["oracle"], {"n_paths": 4000, "points": [0.0, 1.0]})
    out = tmp_path / "out"
    assert main(["simulate", "--quantity", "fpt_laplace", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "simulate_fpt_laplace.csv")))
    assert len(rows) == 2 and float(rows[1]["x0"]) == 1.0


def test_simulate_byte_identical(tmp_path):
    cfg = with_changes(MINIMAL_AUX, ["oracle"], {"n_paths": 4000, "points": [0.5]})
    path = write(tmp_path, cfg)
    for d in ("a", "b"):
        main(["simulate", "--quantity", "npv", "--config", str(path), "--out", str(tmp_path / d)])
    assert (tmp_path / "a" / "simulate_npv.csv").read_bytes() == (tmp_path / "b" / "simulate_npv.csv").read_bytes()


def test_exit_code_config_error(tmp_path, capsys):
    path = write(tmp_path, with_changes(MINIMAL_AUX, ["aux", "beta"], 0.9))
    assert main(["solve-aux", "--config", str(path)]) == 2
    assert "β must exceed 1" in capsys.readouterr().err
    assert main(["solve-aux", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_exit_code_wrong_problem_kind(tmp_path):
    assert main(["solve-regime", "--config", str(write(tmp_path, MINIMAL_AUX))]) == 2
    cfg = with_changes(MINIMAL_AUX, ["oracle"], {"n_paths": 100})
    assert main(["simulate", "--quantity", "dpp", "--config", str(write(tmp_path, cfg))]) == 2


def test_exit_code_convergence(tmp_path, capsys):
    cfg = with_changes(SMALL_REGIME, ["solver"], {"grid_points": 200, "tol": 1e-14, "max_iter": 2})
    assert main(["solve-regime", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 3
    assert "error bound" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "parisian_bailout", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout
