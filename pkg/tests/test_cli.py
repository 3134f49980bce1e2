import csv
import json

import pytest

from arctime.cli import main
from arctime.config import ConfigError, RunConfig, load_config


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--grid", "4x4", "--trips", "120", "--seed", "3", "--out-dir", str(d)]) == 0
    return d


def data_args(d):
    return ["--nodes", str(d / "nodes.csv"), "--arcs", str(d / "arcs.csv"),
            "--trips-file", str(d / "trips.csv"), "--gps", str(d / "gps.csv")]


FAST = ["--iterations", "120", "--burn-in", "20", "--thin", "1"]


def test_simulate_outputs(sim_dir):
    for f in ("nodes.csv", "arcs.csv", "trips.csv", "gps.csv", "true_times.csv", "true_params.csv", "manifest.json"):
        assert (sim_dir / f).exists()
    man = json.loads((sim_dir / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 3
    assert "timestamp" not in json.dumps(man)


@pytest.mark.parametrize("method", ["bayes", "harmonic", "mle", "budge"])
def test_fit_predict_coverage(sim_dir, tmp_path, method):
    extra = FAST if method == "bayes" else []
    assert main(["fit", "--method", method, "--out-dir", str(tmp_path), *data_args(sim_dir), *extra]) == 0
    out = tmp_path / "pred"
    rc = main(["predict", "--method", method, "--model-dir", str(tmp_path), "--od", "0", "15", "--od", "3", "12",
               "--out-dir", str(out), "--nodes", str(sim_dir / "nodes.csv"), "--arcs", str(sim_dir / "arcs.csv")])
    assert rc == 0
    rows = list(csv.DictReader(open(out / f"predictions_{method}.csv")))
    assert len(rows) == 2 and all(float(r["lo_s"]) <= float(r["hi_s"]) for r in rows)
    cov = tmp_path / "cov"
    rc = main(["coverage-map", "--method", method, "--model-dir", str(tmp_path), "--start", "0", "--threshold", "120",
               "--draws", "500", "--out-dir", str(cov), "--nodes", str(sim_dir / "nodes.csv"),
               "--arcs", str(sim_dir / "arcs.csv")])
    assert rc == 0
    probs = [float(r["probability"]) for r in csv.DictReader(open(cov / f"coverage_{method}.csv"))]
    assert len(probs) == 16 and probs[0] == 1.0


def test_map_match(sim_dir, tmp_path):
    assert main(["fit", "--method", "bayes", "--chains", "1", "--out-dir", str(tmp_path), *data_args(sim_dir),
                 *FAST]) == 0
    assert main(["map-match", "--model-dir", str(tmp_path), "--trip-ids", "0", "1", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "marginals.csv")))
    assert {r["trip_id"] for r in rows} == {"0", "1"}
    assert main(["map-match", "--model-dir", str(tmp_path), "--trip-ids", "99999", "--out-dir", str(tmp_path)]) == 1


def test_evaluate_byte_identical(sim_dir, tmp_path):
    args = ["evaluate", "--methods", "bayes,mle,budge", "--chains", "1", *FAST, *data_args(sim_dir),
            "--true-times", str(sim_dir / "true_times.csv"), "--true-params", str(sim_dir / "true_params.csv")]
    for run in ("a", "b"):
        assert main([*args, "--out-dir", str(tmp_path / run)]) == 0
    for f in ("metrics.csv", "estimates_bayes.csv", "estimates_oracle.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    text = (tmp_path / "a" / "metrics.txt").read_text()
    assert "oracle" in text and "budge" in text


def test_config_file_and_flags(sim_dir, tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text(f"[data]\nnodes = {sim_dir / 'nodes.csv'}\narcs = {sim_dir / 'arcs.csv'}\n"
                   f"trips = {sim_dir / 'trips.csv'}\ngps = {sim_dir / 'gps.csv'}\n"
                   "[sampler]\niterations = 60\nburn_in = 10\nthin = 1\nchains = 1\n")
    assert main(["fit", "--method", "bayes", "--config", str(ini), "--iterations", "40", "--out-dir", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["sampler"]["iterations"] == 40 and man["config"]["sampler"]["burn_in"] == 10
    assert main(["config", "--print-defaults"]) == 0
    assert "[sampler]" in capsys.readouterr().out


def test_config_defaults_roundtrip(tmp_path):
    cfg = RunConfig()
    (tmp_path / "d.ini").write_text(cfg.to_ini())
    assert load_config(tmp_path / "d.ini") == cfg
    assert load_config(tmp_path / "d.ini").digest() == cfg.digest()
    (tmp_path / "bad.ini").write_text("[sampler]\nwarp = 9\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(tmp_path / "bad.ini")
    (tmp_path / "bad2.ini").write_text("[sampler]\niterations = many\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad2.ini")


def test_exit_codes(sim_dir, tmp_path):
    assert main(["fit", "--method", "mle", "--nodes", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)]) == 1
    assert main(["simulate", "--grid", "1x9", "--out-dir", str(tmp_path)]) == 1
    assert main(["predict", "--method", "mle", "--model-dir", str(tmp_path), "--out-dir", str(tmp_path),
                 "--nodes", str(sim_dir / "nodes.csv"), "--arcs", str(sim_dir / "arcs.csv")]) == 1
    assert main(["coverage-map", "--method", "budge", "--model-dir", str(tmp_path), "--start", "999",
                 "--threshold", "60", "--nodes", str(sim_dir / "nodes.csv"), "--arcs", str(sim_dir / "arcs.csv"),
                 "--out-dir", str(tmp_path)]) == 1
    assert main(["--threads", "0", "config"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--method", "nope"])
    assert exc.value.code == 1
    # a fit that cannot run (too few trips for the fold plan) is a runtime failure
    (tmp_path / "t.csv").write_text("trip_id,start_node,end_node,t_start_s,t_end_s\n0,0,5,0,60\n")
    (tmp_path / "g.csv").write_text("trip_id,seq,t_s,x_m,y_m,speed_mps\n")
    assert main(["fit", "--method", "bayes", "--training-only", "--nodes", str(sim_dir / "nodes.csv"),
                 "--arcs", str(sim_dir / "arcs.csv"), "--trips-file", str(tmp_path / "t.csv"),
                 "--gps", str(tmp_path / "g.csv"), "--out-dir", str(tmp_path)]) == 2
