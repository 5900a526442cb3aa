import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from voxelfit.cli import main, read_config
from voxelfit.simulate import keyed_rng, simulate_table
from voxelfit.voxel import VoxelTable, concat_tables, write_table


def two_strata(seed=0, J=600):
    parts = []
    for label, b1 in (("summer", -0.3), ("winter", -1.2)):
        t = simulate_table(J, np.array([b1, 1.0, 0.5]), keyed_rng(seed, len(label)))
        parts.append(VoxelTable(
            cell_ids=[f"{label}-{j}" for j in range(J)],
            strata=[label] * J,
            volumes=t.volumes,
            covariates=t.covariates,
            counts=t.counts,
            covariate_names=("intercept", "cape", "hum"),
        ))
    return concat_tables(parts)


@pytest.fixture
def learn_file(tmp_path):
    p = tmp_path / "learn.csv"
    write_table(two_strata(), p)
    return p


def run(*args):
    return main([str(a) for a in args])


def test_fit_two_strata_and_rerun_identical(tmp_path, learn_file):
    for out in ("a", "b"):
        assert run("fit", "--learn", learn_file, "--method", "wclrl", "--pi0", "0.5",
                   "--bags", "3", "--seed", "4", "--out", tmp_path / out) == 0
    a = (tmp_path / "a" / "model.json").read_bytes()
    assert a == (tmp_path / "b" / "model.json").read_bytes()
    doc = json.loads(a)
    assert set(doc["strata"]) == {"summer", "winter"}
    assert doc["method"] == "WCLRL" and doc["version"]
    for block in doc["strata"].values():
        assert len(block["coefficients"]) == 3
        assert len(block["bags"]) == 3
        assert all(b["converged"] for b in block["bags"])


def test_threads_do_not_change_model(tmp_path, learn_file):
    run("fit", "--learn", learn_file, "--pi0", "0.3", "--bags", "4", "--out", tmp_path / "a")
    run("fit", "--learn", learn_file, "--pi0", "0.3", "--bags", "4", "--threads", "4",
        "--out", tmp_path / "b")
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


def test_pi1_zero_rejected(tmp_path, learn_file, capsys):
    with pytest.raises(SystemExit) as exc:
        run("fit", "--learn", learn_file, "--pi1", "0", "--out", tmp_path)
    assert exc.value.code == 2
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[fit]\nlearn = {learn_file}\npi1 = 0\n")
    assert run("fit", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "pi1" in capsys.readouterr().err
    assert not (tmp_path / "o" / "model.json").exists()


def test_config_and_flag_override(tmp_path, learn_file):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[common]\nseed = 8\n[fit]\n"
                   f"learn = {learn_file}\nmethod = pl\npi0 = 0.25\nbags = 2\n")
    c = read_config(cfg, "fit")
    assert (c.method, c.pi0, c.bags, c.seed) == ("pl", 0.25, 2, 8)
    assert run("fit", "--config", cfg, "--method", "brl-cloglog", "--out", tmp_path / "m") == 0
    doc = json.loads((tmp_path / "m" / "model.json").read_text())
    assert doc["method"] == "BRL_cloglog" and doc["spec"]["pi0"] == 0.25
    bad = tmp_path / "bad.ini"
    bad.write_text("[fit]\nfrobnicate = 1\n")
    assert run("fit", "--config", bad) == 2


def test_evaluate_in_sample(tmp_path, learn_file):
    run("fit", "--learn", learn_file, "--method", "pl", "--out", tmp_path)
    assert run("evaluate", "--model", tmp_path / "model.json", "--test", learn_file,
               "--out", tmp_path) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    for rep in list(m["strata"].values()) + [m["pooled"]]:
        assert rep["auc"] > 0.75
        assert rep["ww"] < 0.1
    # PL reproduces the in-sample total exactly when an intercept is fitted
    s = m["strata"]["summer"]
    assert s["n_pred_total"] == pytest.approx(s["n_obs_total"], rel=1e-8)
    rows = list(csv.reader(open(tmp_path / "predictions.tsv"), delimiter="\t"))
    assert rows[0] == ["cell_id", "stratum", "volume", "observed", "predicted"]
    assert len(rows) == 1 + 1200
    assert (tmp_path / "curves.tsv").exists()


def test_constant_score_model_gives_half_auc(tmp_path, learn_file):
    run("fit", "--learn", learn_file, "--method", "pl", "--out", tmp_path)
    doc = json.loads((tmp_path / "model.json").read_text())
    for block in doc["strata"].values():
        block["coefficients"] = [0.1, 0.0, 0.0]
    (tmp_path / "model.json").write_text(json.dumps(doc))
    assert run("evaluate", "--model", tmp_path / "model.json", "--test", learn_file,
               "--out", tmp_path) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["strata"]["summer"]["auc"] == 0.5


def test_predict_writes_table(tmp_path, learn_file):
    run("fit", "--learn", learn_file, "--out", tmp_path)
    assert run("predict", "--model", tmp_path / "model.json", "--test", learn_file,
               "--out", tmp_path / "p") == 0
    assert (tmp_path / "p" / "predictions.tsv").read_text().count("\n") == 1201


def test_missing_covariate_is_schema_error(tmp_path, learn_file, capsys):
    run("fit", "--learn", learn_file, "--out", tmp_path)
    t = two_strata()
    test = VoxelTable(t.cell_ids, t.strata, t.volumes, t.covariates[:, :2], t.counts,
                      covariate_names=("intercept", "cape"))
    write_table(test, tmp_path / "test.csv")
    assert run("evaluate", "--model", tmp_path / "model.json", "--test", tmp_path / "test.csv",
               "--out", tmp_path) == 2
    assert "missing ['hum']" in capsys.readouterr().err


def test_unknown_test_stratum(tmp_path, learn_file, capsys):
    run("fit", "--learn", learn_file, "--out", tmp_path)
    t = two_strata()
    test = VoxelTable(t.cell_ids, ["autumn"] * len(t), t.volumes, t.covariates, t.counts,
                      covariate_names=t.covariate_names)
    write_table(test, tmp_path / "test.csv")
    assert run("evaluate", "--model", tmp_path / "model.json", "--test", tmp_path / "test.csv",
               "--out", tmp_path) == 2
    assert "'autumn'" in capsys.readouterr().err


def test_bad_row_reports_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("cell_id,stratum,volume,count,c\na,s,1,0,1\nb,s,-1,0,1\n")
    assert run("fit", "--learn", p, "--out", tmp_path) == 2
    assert "row 2" in capsys.readouterr().err


def test_simulate_small_deterministic(tmp_path):
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[simulate]\nk_values = 8 9\ntargets = 0.5 0.9\nreplications = 4\n"
                   "methods = pl clrl wclrl\nseed = 2\n")
    for out in ("a", "b"):
        assert run("simulate", "--config", cfg, "--out", tmp_path / out) == 0
    a = (tmp_path / "a" / "sweep.tsv").read_text()
    assert a == (tmp_path / "b" / "sweep.tsv").read_text()
    rows = list(csv.DictReader(a.splitlines(), delimiter="\t"))
    assert len(rows) == 3 * 2 * 2 * 3
    key = lambda r: (r["J"], r["target_empty"], r["coef_index"])
    clrl = {key(r): r for r in rows if r["method"] == "CLRL"}
    wclrl = {key(r): r for r in rows if r["method"] == "WCLRL"}
    assert clrl.keys() == wclrl.keys()
    for k in clrl:
        for col in ("abs_bias", "sd", "rmse"):
            assert abs(float(clrl[k][col]) - float(wclrl[k][col])) <= 1e-6


def test_bench_small(tmp_path):
    cfg = tmp_path / "bench.ini"
    cfg.write_text("[bench]\nbench_cells = 20000\nbench_nonempty = 0.02\n"
                   "bench_pi0 = 1 0.1\nmethods = pl brl-cloglog\nbags = 2\n")
    assert run("bench", "--config", cfg, "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.tsv"), delimiter="\t"))
    assert [(r["method"], float(r["pi0"])) for r in rows] == [
        ("PL", 1.0), ("PL", 0.1), ("BRL_cloglog", 1.0), ("BRL_cloglog", 0.1)]
    assert all(int(r["converged_bags"]) == 2 for r in rows)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "voxelfit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("fit", "predict", "evaluate", "simulate", "bench"):
        assert cmd in out.stdout
