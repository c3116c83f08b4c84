import csv
import json

import pytest

from vminalign.cli import main


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"n_wafers": 8, "dies_per_zone": 20, "sigma_probe_noise": 0.001}))
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out), "--seed", "3"]) == 0
    return out


def test_simulate_outputs(sim):
    for f in ("dies.csv", "probes.csv", "truth.json"):
        assert (sim / f).exists()
    truth = json.loads((sim / "truth.json").read_text())
    assert truth["config"]["seed"] == 3 and truth["config"]["n_wafers"] == 8


def test_fit_predict_evaluate(sim, tmp_path, capsys):
    dies, probes = str(sim / "dies.csv"), str(sim / "probes.csv")
    for m in ("ols", "ba", "rba"):
        assert main(["fit", "--method", m, "--train", dies, "--probes", probes,
                     "--model-out", str(tmp_path / f"{m}.json")]) == 0
    out = capsys.readouterr().out
    assert "inter-wafer shift (mV) from wafer W01" in out
    assert main(["predict", "--model", str(tmp_path / "rba.json"), "--in", dies, "--probes", probes,
                 "--use-probe", "--out", str(tmp_path / "pred.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "pred.csv").open()))
    assert len(rows) == 8 * 4 * 20
    assert all(float(r["vmin_pred"]) > 0 for r in rows)
    models = [str(tmp_path / f"{m}.json") for m in ("ols", "ba", "rba")]
    assert main(["evaluate", "--models", *models, "--test", dies, "--report", str(tmp_path / "r.csv")]) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "wafer_id,zone,n_dies,rmse_mv_ols,rmse_mv_ba,rmse_mv_rba"
    assert len(lines) == 8 * 4 + 2


def test_zones_and_select_features(sim, tmp_path, capsys):
    assert main(["zones", "--in", str(sim / "dies.csv"), "--zones", "2", "--out", str(tmp_path / "z.csv")]) == 0
    zones = [int(r["zone"]) for r in csv.DictReader((tmp_path / "z.csv").open())]
    assert sorted(set(zones)) == [0, 1] and zones.count(0) == zones.count(1)
    assert main(["select-features", "--in", str(sim / "dies.csv"), "--max-k", "3",
                 "--out", str(tmp_path / "f.csv")]) == 0
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "rank,index,feature" and lines[-1].startswith("merit,")


@pytest.mark.parametrize("mode", ["new-wafer", "correlation", "data-efficiency"])
def test_study_modes(sim, tmp_path, mode):
    code = main(["study", "--mode", mode, "--data", str(sim / "dies.csv"), "--probes", str(sim / "probes.csv"),
                 "--train-wafers", "5", "--fractions", "0.75", "0.1", "--report", str(tmp_path / "s.csv")])
    assert code == 0
    assert (tmp_path / "s.csv").read_text().strip()


def test_too_small_fraction_is_input_error(sim, tmp_path):
    # 5% of 20 dies leaves one training die per group
    assert main(["study", "--mode", "data-efficiency", "--data", str(sim / "dies.csv"),
                 "--fractions", "0.05", "--report", str(tmp_path / "s.csv")]) == 2


def test_exit_code_input_errors(sim, tmp_path):
    assert main(["fit", "--method", "ols", "--train", str(tmp_path / "missing.csv"),
                 "--model-out", str(tmp_path / "m.json")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("wafer_id,die_x,die_y,f_1,vmin\nA,0,0,1.0\n")
    assert main(["fit", "--method", "ols", "--train", str(bad), "--model-out", str(tmp_path / "m.json")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"etaa": 0.1}))
    assert main(["fit", "--method", "rba", "--train", str(sim / "dies.csv"), "--config", str(cfg),
                 "--model-out", str(tmp_path / "m.json")]) == 2
    assert main(["study", "--mode", "correlation", "--data", str(sim / "dies.csv"),
                 "--report", str(tmp_path / "s.csv")]) == 2


def test_exit_code_numerical(tmp_path):
    dup = tmp_path / "dup.csv"
    rows = ["wafer_id,die_x,die_y,f_1,f_2,vmin"]
    rows += [f"A,{i},0,{i}.0,{2 * i}.0,{0.5 + 0.01 * i}" for i in range(1, 9)]
    dup.write_text("\n".join(rows) + "\n")
    assert main(["fit", "--method", "ols", "--train", str(dup), "--model-out", str(tmp_path / "m.json")]) == 3
    assert main(["fit", "--method", "rba", "--train", str(dup), "--eta", "0.99",
                 "--model-out", str(tmp_path / "m.json")]) == 3


def test_strict_non_convergence(sim, tmp_path):
    args = ["fit", "--method", "rba", "--train", str(sim / "dies.csv"), "--max-iter", "1",
            "--rel-tol", "1e-12", "--model-out", str(tmp_path / "m.json")]
    assert main(args) == 0
    assert main(["--strict", *args]) == 4


def test_config_overrides(sim, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eta": 0.2, "bias_step": "exact"}))
    assert main(["fit", "--method", "rba", "--train", str(sim / "dies.csv"), "--config", str(cfg),
                 "--eta", "0.3", "--model-out", str(tmp_path / "m.json")]) == 0
    opts = json.loads((tmp_path / "m.json").read_text())["options_used"]
    assert opts["eta"] == 0.3 and opts["bias_step"] == "exact"
