import csv
import json
from pathlib import Path

import pytest

from storagerel import __version__
from storagerel.cli import fmt, main
from storagerel.config import ConfigError, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "system": {"n": 3, "k": 2},
    "distributions": {
        "ttop": {"family": "weibull", "shape": 1.12, "scale": 30000},
        "ttld": {"family": "exponential", "scale": 3000},
        "ttr": {"family": "weibull", "shape": 2, "scale": 300, "offset": 60},
        "ttscr": {"family": "weibull", "shape": 3, "scale": 400, "offset": 20},
    },
    "analysis": {"grid_years": [0, 1, 2], "epsilon": 1e-9, "group_multiplier": 1000},
    "simulation": {"reps": 400, "seed": 11},
}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    meta = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    return meta, rows


@pytest.mark.parametrize("value,text", [(0.0192282353, "0.0192282"), (7.2021534, "7.20215"), (4093, "4093"), ("a;b", "a;b")])
def test_six_significant_digits(value, text):
    assert fmt(value) == text


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.json"):
        parse_config(json.loads(path.read_text()))


@pytest.mark.parametrize(
    "mutate,key",
    [
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d["system"].update(m=1), "m"),
        (lambda d: d["distributions"]["ttop"].update(mean=1), "mean"),
        (lambda d: d["analysis"].update(grid=[1]), "grid"),
        (lambda d: d["distributions"].pop("ttop"), "ttop"),
    ],
)
def test_config_errors_name_the_key(mutate, key):
    doc = json.loads(json.dumps(SMALL))
    mutate(doc)
    with pytest.raises(ConfigError, match=key):
        parse_config(doc)


def test_empty_file_is_usage_error(tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text("")
    assert main(["fit", "--config", str(path)]) == 2
    assert "empty" in capsys.readouterr().err


def test_fit_prints_both_branches(tmp_path, capsys):
    out = tmp_path / "fit.json"
    assert main(["fit", "--config", str(CONFIGS / "table1_raid5.json"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "alpha = 1.72179e-06" in text
    assert "branch 0" in text and "branch 1" in text
    report = json.loads(out.read_text())["clocks"]["ttop"]
    assert len(report["branches"]) == 2
    assert report["max_cdf_excess"] <= 0.008


def test_fit_infeasible_exit_code_and_repair(tmp_path, capsys):
    doc = json.loads(json.dumps(SMALL))
    doc["fit_plan"] = {"ttr": "three-state"}
    path = write(tmp_path, doc)
    assert main(["fit", "--config", path]) == 3
    assert main(["fit", "--config", path, "--allow-repair"]) == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err and "repaired" in captured.out


def test_analyze_csv(tmp_path):
    out = tmp_path / "a.csv"
    assert main(["analyze", "--config", write(tmp_path, SMALL), "--out", str(out), "--epsilon", "1e-10"]) == 0
    meta, rows = read_csv(out)
    assert meta[0] == f"# storagerel {__version__}"
    assert "# epsilon 1e-10" in meta and "# seed 11" in meta
    assert list(rows[0]) == ["t_years", "ddf_analytic", "states", "epsilon", "flags"]
    assert rows[0]["ddf_analytic"] == "0"
    values = [float(r["ddf_analytic"]) for r in rows]
    assert values == sorted(values) and values[-1] > 0


def test_analyze_is_deterministic(tmp_path):
    path = write(tmp_path, SMALL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["analyze", "--config", path, "--out", str(a)])
    main(["analyze", "--config", path, "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_state_cap_exit_code(tmp_path):
    doc = json.loads(json.dumps(SMALL))
    doc["analysis"]["state_cap"] = 5
    assert main(["analyze", "--config", write(tmp_path, doc)]) == 4


def test_simulate_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["simulate", "--config", write(tmp_path, SMALL), "--out", str(out), "--reps", "300", "--seed", "7"]) == 0
    meta, rows = read_csv(out)
    assert "# seed 7" in meta
    assert list(rows[0]) == ["t_years", "ddf_sim", "ci_low", "ci_high", "reps", "seed", "flags"]
    assert rows[0]["ddf_sim"] == "0" and rows[0]["reps"] == "300"
    for r in rows:
        assert float(r["ci_low"]) <= float(r["ddf_sim"]) <= float(r["ci_high"])


def test_small_counts_are_flagged(tmp_path, capsys):
    out = tmp_path / "s.csv"
    main(["simulate", "--config", write(tmp_path, SMALL), "--out", str(out), "--reps", "100"])
    _, rows = read_csv(out)
    assert "clopper-pearson-ci" in rows[0]["flags"]
    assert "Clopper-Pearson" in capsys.readouterr().err


def test_compare_csv(tmp_path):
    doc = json.loads(json.dumps(SMALL))
    doc["simulation"]["clocks"] = "phase-type"
    out = tmp_path / "c.csv"
    assert main(["compare", "--config", write(tmp_path, doc), "--out", str(out), "--reps", "2000"]) == 0
    _, rows = read_csv(out)
    assert list(rows[0]) == ["t_years", "ddf_analytic", "ddf_sim", "ci_low", "ci_high", "sdev_pct", "flags"]
    last = rows[-1]
    sdev = 100 * (float(last["ddf_analytic"]) - float(last["ddf_sim"])) / float(last["ddf_sim"])
    assert float(last["sdev_pct"]) == pytest.approx(sdev, rel=1e-4)


def test_sweep_csv(tmp_path):
    doc = json.loads(json.dumps(SMALL))
    del doc["distributions"]["ttld"], doc["distributions"]["ttscr"]
    doc["fit_plan"] = {"ttr": "erlang-8"}
    doc["sweep"] = {"values": [1.0, 2.0], "systems": [{"n": 4, "k": 3}, {"n": 5, "k": 3}]}
    out = tmp_path / "w.csv"
    assert main(["sweep", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert [r["shape"] for r in rows] == ["1", "2", "1", "2"]
    assert rows[1]["flags"] == "repaired-fit:ttop"
    assert float(rows[2]["dataloss_probability"]) < float(rows[0]["dataloss_probability"])


def test_overrides_change_the_plan(tmp_path, capsys):
    path = write(tmp_path, SMALL)
    assert main(["fit", "--config", path, "--erlang-stages", "5"]) == 0
    assert "erlang-5" in capsys.readouterr().out


def test_triplet_export(tmp_path):
    trip = tmp_path / "q.txt"
    assert main(["analyze", "--config", write(tmp_path, SMALL), "--export-triplets", str(trip)]) == 0
    assert trip.read_text().startswith("# states")
