import json

import pytest

from fracbismut.cli import ExperimentConfig, main, parse_config
from fracbismut.errors import ConfigError


def test_defaults():
    cfg = parse_config(["gradient"])
    assert (cfg.steps, cfg.paths, cfg.hurst, cfg.T) == (256, 50000, 0.75, 1.0)
    assert parse_config(["harnack"]).paths == 20000
    assert parse_config(["check-ops"]).steps == 2048


def test_flags_override_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("command: gradient\nsteps: 64\npaths: 100\nhurst: 0.6\n")
    cfg = parse_config(["gradient", "--config", str(p), "--paths", "50"])
    assert (cfg.steps, cfg.paths, cfg.hurst) == (64, 50, 0.6)


def test_config_round_trip():
    cfg = parse_config(["gradient", "--v", "0,1", "--steps", "32"])
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_unknown_config_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"command": "gradient", "hurts": 0.7}))
    assert main(["gradient", "--config", str(p)]) == 2


@pytest.mark.parametrize("argv", [["gradient", "--hurst", "0.4"],
                                  ["gradient", "--hurst", "0.5"],
                                  ["gradient", "--steps", "1"],
                                  ["harnack", "--C", "1.0"],
                                  ["harnack", "--C", "1.0", "--gamma", "1.0"],
                                  ["sample-fbm", "--hurst", "1.0"]])
def test_invalid_configs_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_harnack_gamma_below_one_accepted():
    cfg = parse_config(["harnack", "--C", "1.0", "--gamma", "0.9"])
    assert cfg.gamma == 0.9


def test_check_ops(tmp_path):
    out = tmp_path / "ops.json"
    assert main(["check-ops", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["command"] == "check-ops"
    assert json.loads(out.with_suffix(".manifest.json").read_text())["status"] == "ok"


def test_check_ops_coarse_grid_fails_hard_checks(tmp_path):
    out = tmp_path / "ops.json"
    assert main(["check-ops", "--steps", "256", "--out", str(out)]) == 1
    m = json.loads(out.with_suffix(".manifest.json").read_text())
    assert m["status"] == "failed" and "covariance_identity" in m["error"]


def test_gradient_all_methods(tmp_path):
    out = tmp_path / "g.json"
    rc = main(["gradient", "--model", "kinetic_sin", "--steps", "32", "--paths", "400",
               "--f", "tanh", "--v", "1,0", "--out", str(out)])
    assert rc == 0
    r = json.loads(out.read_text())
    assert {e["method"] for e in r["estimates"]} == {"bismut", "pathwise", "fd"}
    assert len(r["pairwise_z"]) == 3


def test_fixed_order_is_byte_identical(tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / f"g{i}.json"
        main(["gradient", "--model", "kinetic_sin", "--steps", "32", "--paths", "300",
              "--seed", "5", "--v", "1,0", "--fixed-order", "--out", str(out)])
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_manifest_written_on_failure(tmp_path):
    out = tmp_path / "g.json"
    man = tmp_path / "m.json"
    rc = main(["gradient", "--steps", "16", "--paths", "10", "--f-index", "7",
               "--out", str(out), "--manifest", str(man)])
    assert rc == 2
    m = json.loads(man.read_text())
    assert m["status"] == "error" and m["exit_code"] == 2 and "ConfigError" in m["error"]
    assert not out.exists()


@pytest.mark.parametrize("cmd,extra", [("sample-fbm", []), ("bridge", ["--v", "1,0"]),
                                       ("simulate", ["--z", "0.1,0"])])
def test_csv_outputs(tmp_path, cmd, extra):
    out = tmp_path / "t.csv"
    rc = main([cmd, "--steps", "64", "--paths", "3", "--format", "csv", "--out", str(out)]
              + extra)
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) > 2 and "," in lines[0]
    assert json.loads(out.with_suffix(".summary.json").read_text())["command"] == cmd


def test_csv_refused_for_gradient():
    with pytest.raises(ConfigError):
        parse_config(["gradient", "--format", "csv"])


def test_harnack_sweep(tmp_path):
    out = tmp_path / "h.json"
    rc = main(["harnack", "--model", "kinetic_sin", "--steps", "32", "--paths", "500",
               "--ztilde=-1,0", "--sweep", "0.4,0.1", "--C", "1", "--gamma", "0.9",
               "--out", str(out)])
    assert rc == 0
    r = json.loads(out.read_text())
    assert [row["scale"] for row in r["sweep"]] == [0.0, 0.4, 0.1]
    assert r["constants"]["gamma"] == 0.9


def test_gradient_reference_forms_and_girsanov(tmp_path):
    out = tmp_path / "g.json"
    rc = main(["gradient", "--model", "kinetic", "--f", "x", "--v", "1,0", "--steps", "64",
               "--paths", "400", "--method", "bismut", "--reference", "1.0",
               "--girsanov", "0.05,0.01", "--out", str(out)])
    assert rc == 0
    r = json.loads(out.read_text())
    assert r["integrand_forms_error"] <= 1e-6
    assert set(r["reference_z"]) == {"bismut"}
    assert [row["eps"] for row in r["girsanov"]["rows"]] == [0.05, 0.01]
    checks = {c["name"] for c in json.loads(out.with_suffix(".manifest.json").read_text())["checks"]}
    assert {"integrand_forms_1e-6", "girsanov_R_0.05", "reference_within_4se"} <= checks
