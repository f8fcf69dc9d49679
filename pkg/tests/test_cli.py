import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from photoperceptron import cli
from photoperceptron.config import EXPERIMENTS, ConfigError, load_template, parse_yaml, resolve

SMALL = {
    "classical-train": {"epochs": 30, "trials_per_epoch": 500, "restarts": 3},
    "quantum-not": {"epochs": 20, "trials_per_epoch": 500, "restarts": 3},
    "mode-learn": {"epochs": 10, "trials_per_epoch": 500, "restarts": 3, "target": None},
    "jarzynski": {"n_trajectories": 3000, "dt": 1.0e-3,
                  "protocols": [{"name": "cyclic", "kind": "cyclic", "start": 0.0, "stop": 1.0,
                                 "duration": 0.5}]},
    "kramers": {"n_trajectories": 100, "betas": [1.0, 2.0], "dt": 2.0e-3},
    "absorption-scan": {"n_points": 21},
}


def write_config(tmp_path, experiment, block=None, **top):
    body = {"experiment": experiment, **top, experiment: block or SMALL[experiment]}
    p = tmp_path / f"{experiment}.yaml"
    p.write_text(yaml.safe_dump(body, sort_keys=False))
    return p


def csv_bytes(out: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_templates_validate(experiment):
    cfg = resolve(experiment)
    assert cfg["experiment"] == experiment
    assert load_template(experiment).data["experiment"] == experiment


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_rerun_and_worker_determinism(tmp_path, experiment):
    cfg = write_config(tmp_path, experiment)
    outs = []
    for i, workers in enumerate((1, 1, 2)):
        out = tmp_path / f"run{i}"
        assert cli.main([experiment, "--config", str(cfg), "--out-dir", str(out),
                         "--workers", str(workers)]) == 0
        outs.append(out)
    a, b, c = (csv_bytes(o) for o in outs)
    assert a and a == b == c
    digests = [{x["path"]: x["sha256"] for x in json.loads((o / "manifest.json").read_text())
                ["artifacts"]} for o in outs]
    assert digests[0] == digests[1] == digests[2]
    assert (outs[0] / "summary.json").read_bytes() == (outs[2] / "summary.json").read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, "quantum-not")
    cli.main(["quantum-not", "--config", str(cfg), "--out-dir", str(tmp_path / "a")])
    cli.main(["quantum-not", "--config", str(cfg), "--out-dir", str(tmp_path / "b"), "--seed", "7"])
    assert csv_bytes(tmp_path / "a") != csv_bytes(tmp_path / "b")
    m = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert m["config"]["seed"] == 7


def test_manifest_contents(tmp_path):
    cfg = write_config(tmp_path, "absorption-scan")
    m = cli.run("absorption-scan", cfg, out_dir=tmp_path / "o")
    assert m["status"] == "completed" and m["partial"] is False
    assert {a["path"] for a in m["artifacts"]} == {"absorption_scan.csv", "summary.json"}
    assert m["config"]["absorption-scan"]["n_points"] == 21
    assert m["version"] and m["wall_time_s"] >= 0


def test_schemas_verbatim(tmp_path):
    heads = {}
    for exp in ("classical-train", "quantum-not", "jarzynski", "absorption-scan"):
        out = tmp_path / exp
        cli.run(exp, write_config(tmp_path, exp), out_dir=out)
        heads[exp] = {p.name: p.read_text().splitlines()[0] for p in out.glob("*.csv")}
    assert heads["classical-train"]["trace_000.csv"] == \
        "epoch,w,eps_exact,eps_sampled,n_exact,n_sampled,delta_w,heat"
    assert heads["quantum-not"]["records_000.csv"] == \
        "epoch,param_summary,eps_sampled,eps_exact,photons_lost,energy_per_trial_quanta"
    assert heads["quantum-not"]["read_field_x+1.csv"].startswith("# grid t_min=")
    assert heads["jarzynski"]["ensemble_cyclic.csv"] == \
        "traj_id,W,Q,dE,final_side,first_passage_time"
    assert heads["absorption-scan"]["absorption_scan.csv"] == "g,p_matched"


def test_default_classical_trace_monotone(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["classical-train", "--out-dir", str(out)]) == 0
    rows = (out / "trace_000.csv").read_text().splitlines()[1:]
    eps = [float(r.split(",")[2]) for r in rows]
    assert all(b <= a for a, b in zip(eps, eps[1:]))


def test_jarzynski_cyclic_summary(tmp_path):
    block = dict(SMALL["jarzynski"], n_trajectories=4000)
    m = cli.run("jarzynski", write_config(tmp_path, "jarzynski", block), out_dir=tmp_path / "o")
    s = json.loads((tmp_path / "o" / "summary.json").read_text())["protocols"]["cyclic"]
    assert abs(s["jarzynski_estimate"] - 1.0) <= 3 * s["jarzynski_se"]
    assert s["delta_f"] == 0.0
    assert m["status"] == "completed"


def test_absorption_scan_summary(tmp_path):
    cli.run("absorption-scan", write_config(tmp_path, "absorption-scan", {"n_points": 81}),
            out_dir=tmp_path / "o")
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["p_at_g1"] == pytest.approx(0.61927, abs=1e-3)
    assert s["g2_at_max"] == pytest.approx(2.5128, abs=0.01)
    assert s["p_max"] == pytest.approx(0.8146, abs=1e-3)
    rows = (tmp_path / "o" / "absorption_scan.csv").read_text().splitlines()
    assert rows[1] == "0.0,0.0"


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PHOTOPERCEPTRON_OUT_DIR", str(tmp_path / "env"))
    cfg = write_config(tmp_path, "absorption-scan", out_dir=str(tmp_path / "cfg"))
    cli.main(["absorption-scan", "--config", str(cfg)])
    assert (tmp_path / "env" / "manifest.json").exists()
    cli.main(["absorption-scan", "--config", str(cfg), "--out-dir", str(tmp_path / "flag")])
    assert (tmp_path / "flag" / "manifest.json").exists()
    assert not (tmp_path / "cfg").exists()


def config_error(tmp_path, capsys, text, experiment="quantum-not"):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    code = cli.main([experiment, "--config", str(p), "--out-dir", str(tmp_path / "o")])
    return code, capsys.readouterr().err


def test_bad_value_is_line_anchored(tmp_path, capsys):
    code, err = config_error(tmp_path, capsys,
                             "experiment: quantum-not\nquantum-not:\n  epochs: 5\n"
                             "  learning_rate: -1\n")
    assert code == 2
    assert "bad.yaml:4:" in err and "quantum-not.learning_rate" in err
    assert not (tmp_path / "o").exists()


def test_unknown_key_and_type(tmp_path, capsys):
    code, err = config_error(tmp_path, capsys, "quantum-not:\n  epoch: 5\n")
    assert code == 2 and "bad.yaml:2:" in err and "unknown key" in err
    code, err = config_error(tmp_path, capsys, "seed: 1\nquantum-not:\n  epochs: many\n")
    assert code == 2 and "bad.yaml:3:" in err and "integer" in err


def test_wrong_experiment_and_foreign_block(tmp_path, capsys):
    code, err = config_error(tmp_path, capsys, "experiment: kramers\n")
    assert code == 2 and "bad.yaml:1:" in err
    code, err = config_error(tmp_path, capsys, "seed: 0\nkramers:\n  betas: [1, 2]\n")
    assert code == 2 and "bad.yaml:2:" in err and "another experiment" in err


def test_yaml_syntax_error(tmp_path, capsys):
    code, err = config_error(tmp_path, capsys, "seed: 0\nquantum-not: [\n  1,\n")
    assert code == 2 and "invalid YAML" in err


def test_cross_field_checks(tmp_path, capsys):
    code, err = config_error(tmp_path, capsys,
                             "absorption-scan:\n  g_min: 2.0\n  g_max: 1.0\n", "absorption-scan")
    assert code == 2 and "bad.yaml:3:" in err
    code, err = config_error(tmp_path, capsys, "mode-learn:\n  n_modes: 3\n", "mode-learn")
    assert code == 2 and "mode-learn.target" in err and "<template" in err
    code, err = config_error(tmp_path, capsys,
                             "jarzynski:\n  well: {barrier: 1, x0: 1, gamma: 1, beta: 1}\n"
                             "  dt: 0.5\n", "jarzynski")
    assert code == 2 and "stability" in err


def test_numeric_strings_accepted():
    doc = parse_yaml("quantum-not:\n  fd_delta: 1e-2\n", "x.yaml")
    assert resolve("quantum-not", doc)["quantum-not"]["fd_delta"] == 0.01


def test_bad_workers_and_seed(tmp_path, capsys):
    assert cli.main(["absorption-scan", "--workers", "0", "--out-dir", str(tmp_path)]) == 2
    assert cli.main(["absorption-scan", "--seed", "-1", "--out-dir", str(tmp_path)]) == 2


def test_runtime_failure_flagged(tmp_path, capsys):
    block = {"n_trajectories": 10, "betas": [1.0, 2.0], "max_steps": 1}
    cfg = write_config(tmp_path, "kramers", block)
    code = cli.main(["kramers", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    assert code == 3
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["status"] == "failed" and m["partial"] is True and "RuntimeError" in m["error"]
    assert not (tmp_path / "o" / "summary.json").exists()


def test_resolve_missing_experiment():
    with pytest.raises(ConfigError):
        resolve("nope")


def test_print_template(capsys):
    assert cli.main(["kramers", "--print-template"]) == 0
    assert "betas" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "photoperceptron", "absorption-scan", "--out-dir",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "absorption_scan.csv").exists()
