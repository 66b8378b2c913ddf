import json
from pathlib import Path

import numpy as np
import pytest

from qfilter.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main
from qfilter.errors import ConfigError
from qfilter.outputs import svg_line_plot, write_table
from qfilter.scenario import (
    RunManifest, load_config, parse_config, run_convergence, run_scenario, run_sweep,
)

ROOT = Path(__file__).resolve().parents[1]


def _qubit(**over):
    raw = {"kind": "qubit_homodyne", "seed": 3, "n_trajectories": 2,
           "time": {"T": 0.2, "dt": 1e-2},
           "output": {"selectors": ["bloch_z", "purity", "record"], "svg": True}}
    raw.update(over)
    return raw


def test_bundled_scenarios_parse():
    for path in sorted((ROOT / "scenarios").glob("*.toml")):
        assert load_config(path).kind in path.read_text()


def test_all_errors_reported_together():
    raw = _qubit(seed=-1, time={"T": 1.0, "dt": 0.3}, model={"kappa": -2.0, "bogus": 1},
                 output={"selectors": ["nope"]})
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    msg = str(info.value)
    for needle in ("seed", "multiple", "kappa", "bogus", "nope"):
        assert needle in msg


def test_unknown_kind_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({"kind": "laser"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = \n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_custom_model_validation():
    raw = {"kind": "custom", "model": {"H": [[0, 1], [0, 0]], "L": [[1, 0], [0, -1]],
                                       "psi0": [1, 0]}}
    with pytest.raises(ConfigError, match="Hermitian"):
        parse_config(raw)
    with pytest.raises(ConfigError, match="required"):
        parse_config({"kind": "custom", "model": {"H": [[0, 1], [1, 0]]}})


def test_digest_tracks_content():
    a = parse_config(_qubit())
    assert a.digest == parse_config(_qubit()).digest
    assert a.digest != a.with_param("seed", 4).digest
    assert a.with_param("kappa", 2.0).params["kappa"] == 2.0


def test_run_is_deterministic_and_parallel_safe(tmp_path, monkeypatch):
    cfg = parse_config(_qubit())
    m1 = run_scenario(cfg, tmp_path / "a")
    m2 = run_scenario(cfg, tmp_path / "b")
    m3 = run_scenario(cfg, tmp_path / "c", workers=2)
    assert m1.output_digests() == m2.output_digests() == m3.output_digests()
    names = set(m1.output_digests())
    assert {"trajectory_0000.csv", "trajectory_0001.csv", "summary.json"} <= names
    assert any(n.endswith(".svg") for n in names)
    back = RunManifest.read(tmp_path / "a" / "manifest.json")
    assert back.config_digest == cfg.digest and back.seed == 3
    assert [t["stream_id"] for t in back.trajectories] == [0, 1]


def test_selected_columns_only(tmp_path):
    run_scenario(parse_config(_qubit(output={"selectors": ["purity"]})), tmp_path)
    header = (tmp_path / "trajectory_0000.csv").read_text().splitlines()[0]
    assert header.split(",") == ["time", "purity"]


def test_zero_trajectories(tmp_path):
    m = run_scenario(parse_config(_qubit(n_trajectories=0)), tmp_path)
    assert m.outputs == []
    assert (tmp_path / "manifest.json").exists()


def test_custom_populations(tmp_path):
    cfg = load_config(ROOT / "scenarios" / "custom_qutrit.toml").with_param("T", 0.05)
    run_scenario(cfg, tmp_path)
    header = (tmp_path / "trajectory_0000.csv").read_text().splitlines()[0].split(",")
    assert {"population_0", "population_1", "population_2", "purity"} <= set(header)


def test_free_particle_summary(tmp_path):
    raw = {"kind": "free_particle", "n_trajectories": 1, "time": {"T": 20.0, "dt": 1e-2},
           "model": {"m": 1.0, "lam": 2.0}, "output": {"selectors": ["q_hat"]}}
    run_scenario(parse_config(raw), tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["omega_error"] < 1e-6
    assert s["dispersion_product"] == pytest.approx(2.0, abs=1e-6)
    assert s["correlation"] == pytest.approx(-1.0, abs=1e-6)


def test_classical_summary(tmp_path):
    raw = {"kind": "classical_ou", "n_trajectories": 1, "time": {"T": 1.0, "dt": 1e-2},
           "model": {"n_cells": 200, "n_particles": 500},
           "output": {"selectors": ["kb_mean", "zakai_mean", "pf_mean"]}}
    run_scenario(parse_config(raw), tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["zakai_kb_mean_rmse"][0] < 0.01
    assert abs(s["zakai_final_mass"][0]) > 0


def test_convergence_and_sweep(tmp_path):
    cfg = parse_config(_qubit(n_trajectories=4))
    res = run_convergence(cfg, [0.04, 0.02, 0.01, 0.005])
    assert len(res["errors"]) == 3 and res["errors"][0] > res["errors"][-1]
    with pytest.raises(ConfigError):
        run_convergence(cfg, [0.04, 0.03, 0.01])
    runs = run_sweep(cfg, "kappa", [0.5, 1.0], tmp_path)
    assert len({r["config_digest"] for r in runs}) == 2
    assert (tmp_path / "kappa=0.5" / "manifest.json").exists()
    assert json.loads((tmp_path / "sweep.json").read_text())["param"] == "kappa"


def test_svg_is_deterministic():
    x = np.linspace(0, 1, 5000)
    series = [(x, np.sin(x)), (x, np.cos(x))]
    a = svg_line_plot(series)
    assert a == svg_line_plot(series)
    assert a.startswith("<svg") and a.count("<polyline") == 2


def test_table_roundtrip(tmp_path):
    path = write_table(tmp_path / "t.csv", {"x": np.array([0.1, 1 / 3]), "y": np.array([1.0, 2.0])})
    rows = Path(path).read_text().splitlines()
    assert rows[0] == "x,y"
    assert float(rows[2].split(",")[0]) == 1 / 3


def _write(tmp_path, text):
    p = tmp_path / "s.toml"
    p.write_text(text)
    return p


def test_cli_run_and_exit_codes(tmp_path, capsys):
    ok = _write(tmp_path, 'kind = "qubit_homodyne"\n[time]\nT = 0.1\ndt = 0.01\n'
                          '[output]\nselectors = ["purity"]\n')
    assert main(["run", "--scenario", str(ok), "--out", str(tmp_path / "o"), "--seed", "9"]) == EXIT_OK
    cfg = json.loads((tmp_path / "o" / "config.json").read_text())
    assert cfg["seed"] == 9
    bad = _write(tmp_path, 'kind = "qubit_homodyne"\nseed = "x"\n')
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert "seed" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["verify", "--suite", "nonexistent"])
    assert info.value.code == EXIT_CONFIG


def test_cli_numeric_failure(tmp_path, capsys):
    p = _write(tmp_path, 'kind = "qubit_homodyne"\n[time]\nT = 0.1\ndt = 0.01\n'
                         '[model]\nkappa = 1000.0\nscheme = "explicit"\n')
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "trajectory" in err and "step" in err


def test_cli_verify_json(tmp_path, monkeypatch):
    out = tmp_path / "r.json"
    assert main(["verify", "--suite", "ito_table", "--json", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["passed"] and rep["suite"] == "ito_table"
    import qfilter.suites as suites
    from qfilter.suites import Check
    monkeypatch.setitem(suites.SUITES, "ito_table",
                        (lambda seed=0: ([Check("forced", 1.0, 0.0, "<")], {}), 1.0, 2))
    assert main(["verify", "--suite", "ito_table"]) == EXIT_VERIFY


def test_cli_convergence(tmp_path, capsys):
    p = _write(tmp_path, 'kind = "qubit_homodyne"\n[time]\nT = 0.2\ndt = 0.01\n')
    assert main(["convergence", "--scenario", str(p), "--dt-list", "0.04,0.02,0.01,0.005",
                 "--paths", "3", "--json", str(tmp_path / "c.json")]) == EXIT_OK
    assert json.loads((tmp_path / "c.json").read_text())["n_paths"] == 3
