import csv
import json
from importlib import resources

import jsonschema
import pytest

from ddelab import cli
from ddelab.dde_solver import ProbeReport, Verdict
from ddelab.stability_regions import local_boundary_delay, to_mu_nu
from oracles import lambert_sigma


def schema(name):
    text = resources.files("ddelab").joinpath("schemas", f"{name}.v1.json").read_text()
    return json.loads(text)


def validate(path, name):
    doc = json.loads(path.read_text())
    jsonschema.Draft202012Validator(schema(name)).validate(doc)
    return doc


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def error_report(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    doc = json.loads(err)
    jsonschema.Draft202012Validator(schema("error")).validate(doc)
    return doc


# ---------------------------------------------------------------- artifacts

def test_chart_rows(tmp_path):
    out = tmp_path / "chart.csv"
    assert run("chart", "--mu-grid", "0:0.99:100", "-o", out) == 0
    r = rows(out)
    assert r[0] == ["mu", "nu1", "nu2", "nu3"] and len(r) == 102
    cfg = validate(tmp_path / "chart.csv.config.json", "config")
    assert cfg["subcommand"] == "chart" and cfg["seed"] == 7 and cfg["precision"] == 15


def test_spectrum_roots(tmp_path):
    out = tmp_path / "spec.json"
    assert run("spectrum", "--h", 10, "--zeta", 1, "--kmax", 2, "-o", out) == 0
    doc = validate(out, "spectrum")
    assert len(doc["roots"]) == 6
    assert doc["dominant"]["re"] == pytest.approx(lambert_sigma(10, 1), abs=1e-12)
    assert max(r["residual"] for r in doc["roots"]) < 1e-10


def test_fundsol_methods(tmp_path):
    vals = {}
    for m in ("exact", "numeric", "contour"):
        out = tmp_path / f"{m}.csv"
        assert run("fundsol", "--h", 1, "--t-max", 2, "--n-points", 5, "--method", m, "-o", out) == 0
        vals[m] = {float(t): float(v) for t, v in rows(out)[1:]}
    assert vals["exact"][2.0] == pytest.approx(-0.232544157934830, abs=1e-14)
    assert vals["numeric"][2.0] == pytest.approx(vals["exact"][2.0], abs=1e-8)
    assert vals["contour"][2.0] == pytest.approx(vals["exact"][2.0], abs=1e-3)
    assert 0.0 not in vals["contour"]


def test_envelope_artifact(tmp_path):
    out = tmp_path / "env.json"
    assert run("envelope", "--h", 5, "--t-max", 300, "-o", out) == 0
    assert validate(out, "envelope")["c_hat"] > 0


def test_simulate_stride(tmp_path):
    out = tmp_path / "sim.csv"
    assert run("simulate", "--zeta", 1.5, "--h", 1, "--t-end", 10, "--stride", 10,
               "--history", "sinusoid:0.5,1", "-o", out) == 0
    r = rows(out)
    assert r[0] == ["t", "x"] and float(r[1][0]) == 0.0 and float(r[-1][0]) == pytest.approx(10)


def test_probe_verdict(tmp_path):
    out = tmp_path / "probe.json"
    assert run("probe", "--zeta", 1.02, "--h", 3, "--seed", 7, "-o", out) == 0
    doc = validate(out, "probe")
    assert doc["verdict"] == "AllConverged" and doc["label"] == "ProvedGlobal_Nu2"
    assert doc["flag"] == ""


def test_attractor_and_hypotheses(tmp_path):
    a = tmp_path / "a.json"
    assert run("attractor", "--zeta", 1.2, "-o", a) == 0
    assert validate(a, "attractor")["b"] == pytest.approx(0.790283592486905, abs=1e-12)
    hy = tmp_path / "h.json"
    assert run("hypotheses", "--nonlinearity", "lasota-wazewska:2", "-o", hy) == 0
    assert validate(hy, "hypotheses")["h1_ok"]


def test_named_model_nonlinearity(tmp_path):
    out = tmp_path / "a.json"
    assert run("attractor", "--nonlinearity", "lasota-wazewska-model:2,1", "--zeta", 1.2, "-o", out) == 0
    doc = validate(out, "attractor")
    assert doc["equilibrium"] == pytest.approx(0.852605502013725, abs=1e-12)
    assert doc["zeta_eff"] == pytest.approx(0.852605502013725, abs=1e-12)


def test_hc_artifact(tmp_path):
    out = tmp_path / "hc.json"
    assert run("hc", "--zeta", 3, "--h-lo", 0.1, "--h-hi", 2, "--n-bisect", 4, "-o", out) == 0
    doc = validate(out, "hc")
    assert doc["estimate"] <= doc["local_boundary"] + 2 / 16


# ---------------------------------------------------------------- errors

def test_empty_grid_is_config_error(tmp_path, capsys):
    assert run("chart", "--mu-grid", "", "-o", tmp_path / "c.csv") == 2
    assert error_report(capsys)["error"] == "ConfigInvalid"


def test_missing_parameter_and_unknown_flag(tmp_path, capsys):
    assert run("spectrum", "-o", tmp_path / "s.json") == 2
    assert "--h" in error_report(capsys)["message"]
    assert run("spectrum", "--h", 1, "--bogus", 2, "-o", tmp_path / "s.json") == 2
    assert run("fundsol", "--h", 1, "--t-max", 1, "--method", "magic", "-o", tmp_path / "f.csv") == 2
    capsys.readouterr()


def test_domain_error_exit_code(tmp_path, capsys):
    assert run("probe", "--nonlinearity", "nicholson:1,1", "--zeta", 1, "--h", 1,
               "-o", tmp_path / "p.json") == 3
    assert error_report(capsys)["error"] == "NoPositiveEquilibrium"
    assert run("fundsol", "--h", 1, "--t-max", 200, "--method", "exact",
               "-o", tmp_path / "f.csv") == 3
    assert error_report(capsys)["exit_code"] == 3


def test_no_artifact_on_error(tmp_path, capsys):
    run("chart", "--mu-grid", "1:2", "-o", tmp_path / "c.csv")
    assert not (tmp_path / "c.csv.config.json").exists()
    capsys.readouterr()


# ---------------------------------------------------------------- reproducibility

@pytest.mark.parametrize("argv", [
    ["chart", "--mu-grid", "0:0.99:50"],
    ["spectrum", "--h", "7", "--zeta", "1.3", "--kmax", "2"],
    ["probe", "--zeta", "2", "--h", "1"],
    ["fundsol", "--h", "2", "--t-max", "10", "--method", "numeric"],
])
def test_byte_identical_reruns(tmp_path, monkeypatch, argv):
    outs = []
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        monkeypatch.chdir(tmp_path / d)
        assert cli.main(argv + ["-o", "out"]) == 0
        outs.append(((tmp_path / d / "out").read_bytes(),
                     (tmp_path / d / "out.config.json").read_bytes()))
    assert outs[0] == outs[1]


def test_number_format_is_fixed(tmp_path):
    out = tmp_path / "f.csv"
    run("fundsol", "--h", 1, "--t-max", 40, "--n-points", 3, "-o", out)
    last = rows(out)[-1][1]
    assert "e-" in last and "E" not in last
    assert len(last.split("e")[0].replace("-", "").replace(".", "")) <= 15


def test_precision_flag(tmp_path):
    out = tmp_path / "c.csv"
    run("chart", "--mu-grid", "0.5", "--precision", 6, "-o", out)
    assert rows(out)[1][1] == "0.149218"


def test_config_round_trip(tmp_path):
    first = tmp_path / "s1.json"
    assert run("spectrum", "--h", 4, "--zeta", 1.7, "--kmax", 1, "-o", first) == 0
    second = tmp_path / "s2.json"
    assert run("spectrum", "--config", tmp_path / "s1.json.config.json", "-o", second) == 0
    assert first.read_bytes() == second.read_bytes()
    p1 = json.loads((tmp_path / "s1.json.config.json").read_text())["parameters"]
    p2 = json.loads((tmp_path / "s2.json.config.json").read_text())["parameters"]
    assert p1 == p2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"h": 4, "zeta": 1.7, "kmax": 0}))
    out = tmp_path / "s.json"
    assert run("spectrum", "--config", cfg, "--kmax", 1, "-o", out) == 0
    assert json.loads(out.read_text())["k_max"] == 1


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"h": 4, "colour": "red"}))
    assert run("spectrum", "--config", cfg, "-o", tmp_path / "s.json") == 2
    capsys.readouterr()


# ---------------------------------------------------------------- sweep

def test_sweep_small_grid(tmp_path, monkeypatch):
    monkeypatch.setenv("DDE_LAB_THREADS", "2")
    run_dir = tmp_path / "run"
    assert run("sweep", "--zeta-grid", "1.05,1.5", "--h-grid", "0.5:1:1", "-o", run_dir) == 0
    r = rows(run_dir / "summary.csv")
    assert r[0] == ["zeta", "h", "mu", "nu", "label", "verdict", "flag"]
    assert [(float(a), float(b)) for a, b, *_ in r[1:]] == [(1.05, 0.5), (1.05, 1.0), (1.5, 0.5), (1.5, 1.0)]
    summ = validate(run_dir / "summary.json", "sweep_summary")
    assert summ["cells"] == 4 and summ["fatal"] == 0
    for i in range(4):
        validate(run_dir / "cells" / f"cell_{i:05d}.json", "sweep_cell")
    assert not (run_dir / "RUNNING").exists()


def test_sweep_thread_count_does_not_change_output(tmp_path, monkeypatch):
    blobs = []
    for n in ("1", "3"):
        monkeypatch.setenv("DDE_LAB_THREADS", n)
        d = tmp_path / f"t{n}"
        assert run("sweep", "--zeta-grid", "0.8,2", "--h-grid", "0.3,1", "-o", d) == 0
        blobs.append((d / "summary.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_sweep_cell_limit(tmp_path, capsys):
    assert run("sweep", "--zeta-grid", "1:2:100", "--h-grid", "1:2:100", "-o", tmp_path / "r") == 2
    assert "force" in error_report(capsys)["message"]


def test_sweep_resume(tmp_path, capsys):
    run_dir = tmp_path / "run"
    (run_dir / "cells").mkdir(parents=True)
    (run_dir / "RUNNING").write_text("in progress\n")
    args = ["sweep", "--zeta-grid", "0.8", "--h-grid", "1,2", "-o", run_dir]
    assert run(*args) == 2
    capsys.readouterr()
    stale = {"index": 0, "zeta": 0.8, "h": 1.0, "mu": 1.25, "nu": 0.459849301464303,
             "ensemble_size": 16, "n_converged": 16, "max_final_amplitude": 0.0,
             "verdict": "AllConverged", "label": "AbsolutelyStable", "flag": "", "resumed": True}
    (run_dir / "cells" / "cell_00000.json").write_text(json.dumps(stale))
    assert run(*args, "--resume") == 0
    assert json.loads((run_dir / "cells" / "cell_00000.json").read_text())["resumed"] is True
    assert (run_dir / "cells" / "cell_00001.json").exists()
    assert not (run_dir / "RUNNING").exists()


def test_sweep_flags_contradiction_as_fatal(tmp_path, monkeypatch):
    def fake_probe(nl, zeta, h, *a, **k):
        return ProbeReport(to_mu_nu(zeta, h), 16, 3, 0.4, Verdict.SomeDiverged,
                           -0.4, 0.4, 100.0, 20.0, [0.4] * 16)
    monkeypatch.setattr(cli, "probe_global_stability", fake_probe)
    run_dir = tmp_path / "run"
    assert run("sweep", "--points", "x", "-o", run_dir) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"points": [[0.8, 1.0], [3.0, 2.0]]}))
    assert run("sweep", "--config", cfg, "-o", run_dir) == 0
    r = rows(run_dir / "summary.csv")
    assert r[1][-1] == "FATAL" and r[2][-1] == ""
    assert json.loads((run_dir / "summary.json").read_text())["fatal"] == 1


def test_sweep_across_local_boundary(tmp_path):
    run_dir = tmp_path / "run"
    assert run("sweep", "--zeta-grid", "2", "--h-grid", "1.0,1.15,1.27,1.4", "-o", run_dir) == 0
    hstar = local_boundary_delay(2.0)
    for _, h, *_, verdict, _ in rows(run_dir / "summary.csv")[1:]:
        assert (verdict == "AllConverged") == (float(h) < hstar)
