import json

import numpy as np
import pytest

from predmeta.cli import main


@pytest.fixture
def covid_csv(tmp_path, covid):
    from predmeta.data import write_csv

    p = tmp_path / "covid.csv"
    write_csv(covid, p)
    return p


def test_analyze_parametric_only(covid_csv, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["analyze", str(covid_csv), "--variants", "hts,skipka", "-o", str(out)]) == 0
    rep = json.loads(out.read_text())
    hts = rep["predictive"]["HTS"]["intervals"][0]["equi_tailed"]
    assert hts["lower"] == pytest.approx(-0.955, abs=0.002)
    assert hts["skewness"] == 0.0
    assert "edgington_cd_marginal" not in rep


def test_analyze_requires_seed_for_mc(covid_csv, capsys):
    assert main(["analyze", str(covid_csv), "--variants", "full"]) == 1
    assert "--seed" in capsys.readouterr().err


def test_usage_errors(covid_csv):
    assert main([]) == 1
    assert main(["analyze", str(covid_csv), "--variants", "nope"]) == 1
    assert main(["analyze", str(covid_csv), "--tau2", "dl"]) == 1
    assert main(["analyze", str(covid_csv), "--level", "1.5", "--variants", "hts"]) == 1


def test_data_errors(tmp_path, capsys):
    one = tmp_path / "one.csv"
    one.write_text("label,effect,se\na,0.1,0.2\n")
    assert main(["analyze", str(one), "--variants", "hts"]) == 2
    assert "k < 2" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("label,effect,se\na,0.1,0.2\nb,x,0.1\n")
    assert main(["analyze", str(bad), "--variants", "hts"]) == 2
    assert "line 3" in capsys.readouterr().err
    assert main(["analyze", str(tmp_path / "missing.csv"), "--variants", "hts"]) == 2


def test_analyze_deterministic_csv_and_grids(covid_csv, tmp_path):
    args = ["analyze", str(covid_csv), "--seed", "3", "--B", "3000", "--format", "csv", "--delta", "0.1"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["-o", str(a), "--grid-dir", str(tmp_path / "g")]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert a.read_text() == b.read_text()
    assert "predictive.PCD-full.conf_ge_delta" in a.read_text()
    assert (tmp_path / "g" / "cd_grid.csv").exists()
    assert (tmp_path / "g" / "PCD-full_hist.csv").exists()


def test_builtin_dataset(capsys):
    assert main(["analyze", "builtin:covid", "--variants", "skipka"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["heterogeneity"]["I2"] == pytest.approx(14.0074, abs=1e-3)


def test_crps_command(tmp_path, capsys):
    x = np.random.default_rng(0).normal(size=20_000)
    s = tmp_path / "s.csv"
    s.write_text("draw\n" + "\n".join(map(repr, x.tolist())) + "\n")
    y = tmp_path / "y.csv"
    y.write_text("y\n0.0\n2.0\n")
    assert main(["crps", str(s), str(y)]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["n_outcomes"] == 2
    assert body["crps"][0] == pytest.approx(0.2337, abs=0.01)


def test_simulate_rejects_before_work(tmp_path, capsys):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"k": [3], "i2": [30], "k_large": [4], "n_iter": 1}))
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    cfg.write_text("{bad json")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_simulate_deterministic(tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"seed": 5, "k": [3], "i2": [60], "n_iter": 2, "n_future": 100, "B": 1000, "methods": ["PCD-full", "HTS"]}))
    for d in ("a", "b"):
        assert main(["simulate", str(cfg), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 5 and "numpy" in man["versions"]
