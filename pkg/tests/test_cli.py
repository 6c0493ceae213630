import csv
import json

import pytest

from predictive_enforcement.cli import load_config, main


def write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_reference(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["case"] == "Intermediate"
    assert summary["lambda_bar"] == "inf"
    rows = read_csv(out / "value_curve.csv")
    assert rows[0] == ["p", "value", "slope", "loss", "delta"]
    assert len(rows) == 402


def test_solve_high_crime(tmp_path):
    cfg = write(tmp_path, {"params": {"lam": 1.0, "c": 0.3}})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["case"] == "HighCrime"
    assert summary["p_hat"] == pytest.approx(0.3, abs=1e-15)


@pytest.mark.parametrize("cfg", [
    {"params": {"lam": 4.0}, "typo": 1},
    {"params": {"lambda": 4.0}},
    {"simulate": {"n_path": 10}},
    {"params": {"lam": 1.0}},
    {"params": {"lam": "4"}},
    "{broken",
])
def test_malformed_config_leaves_nothing(tmp_path, cfg):
    out = tmp_path / "never"
    assert main(["solve", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == 1
    assert not out.exists()


def test_bad_seed_and_threads(tmp_path):
    assert main(["solve", "--seed", "-1", "--out", str(tmp_path / "a")]) == 1
    assert main(["solve", "--seed", str(2 ** 64), "--out", str(tmp_path / "b")]) == 1
    assert main(["solve", "--threads", "0", "--out", str(tmp_path / "c")]) == 1


def test_simulate_is_bit_stable(tmp_path):
    cfg = write(tmp_path, {"simulate": {"n_paths": 500}})
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "77"]) == 0
    for f in ("path.csv", "loss_estimate.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = read_csv(tmp_path / "a" / "path.csv")
    assert rows[0] == ["time", "state", "belief", "action", "detection_flag", "instantaneous_loss"]
    assert {r[1] for r in rows[1:]} <= {"H", "L"}


def test_simulate_passive(tmp_path):
    cfg = write(tmp_path, {"params": {"w": 0.3, "c": 2.5},
                           "simulate": {"policy": "myopic", "n_paths": 500, "dump_path": False,
                                        "compare_passive": True}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "passive.csv")
    assert rows[1][3] == "true"
    assert not (tmp_path / "o" / "path.csv").exists()


def test_equilibrium_command(tmp_path):
    cfg = write(tmp_path, {"equilibrium": {"lam_values": [2.0, 4.0]}})
    assert main(["equilibrium", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "equilibrium.csv")
    assert len(rows) == 1 + 2 * 4
    th = json.loads((tmp_path / "o" / "thresholds.json").read_text())
    assert th["lambda_low"] < th["lambda_star"] < th["lambda_M"]


def test_figures(tmp_path):
    cfg = write(tmp_path, {"figures": {"x_points": 25, "policy_points": 51, "cdf_points": 101}})
    out = tmp_path / "figs"
    assert main(["figures", "--config", str(cfg), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"policy_low_crime.csv", "policy_high_crime.csv", "policy_intermediate.csv", "stationary_two_cutoffs.csv",
            "stationary_conditional.csv", "cutoffs_vs_crime.csv", "cutoff_intersections.csv"} <= names
    curves = read_csv(out / "cutoffs_vs_crime.csv")[1:]
    pairs = [(float(r[1]), float(r[2])) for r in curves if r[2] != "nan"]
    assert pairs and all(ph < pm for pm, ph in pairs)
    inter = {r[0]: float(r[1]) for r in read_csv(out / "cutoff_intersections.csv")[1:]}
    assert inter["OP"] < inter["GP"]
    cdf = read_csv(out / "stationary_two_cutoffs.csv")[1:]
    above = [(float(r[1]), float(r[2])) for r in cdf if float(r[0]) >= 0.35]
    assert all(a <= b + 1e-12 for a, b in above)
    summary = json.loads((out / "figures_summary.json").read_text())
    assert summary["policy_low_crime"]["case"] == "LowCrime"
    assert summary["policy_high_crime"]["case"] == "HighCrime"
    assert summary["policy_intermediate"]["case"] == "Intermediate"


def test_csv_round_trip(tmp_path):
    out = tmp_path / "o"
    main(["solve", "--out", str(out)])
    rows = read_csv(out / "policy.csv")
    again = "p,action\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in rows[1:])
    assert again == (out / "policy.csv").read_text()


def test_sweep(tmp_path):
    cfg = write(tmp_path, {"sweep": {"parameter": "c", "values": [1.0, 1.5]}})
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert rows[0][0] == "c" and len(rows) == 3
    assert float(rows[1][2]) < float(rows[2][2])
    bad = write(tmp_path, {"sweep": {"parameter": "c", "values": [5.0]}}, "bad.json")
    assert main(["sweep", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1


def test_validate_subset_and_tightened(tmp_path):
    ok = write(tmp_path, {"validate": {"criteria": [1, 6, 7]}})
    out = tmp_path / "missing" / "nested"
    assert main(["validate", "--config", str(ok), "--out", str(out)]) == 0
    report = json.loads((out / "validation_report.json").read_text())
    assert [r["passed"] for r in report] == [True, True, True]

    tight = write(tmp_path, {"validate": {"criteria": [1, 6], "settings": {"linear_slope_tol": 1e-14,
                                                                            "mps_mean_tol": 1e-16}}},
                  "tight.json")
    assert main(["validate", "--config", str(tight), "--out", str(tmp_path / "t")]) == 1
    rows = read_csv(tmp_path / "t" / "validation_report.csv")
    assert [r[2] for r in rows[1:]] == ["false", "false"]
    assert all(r[6] == "" for r in rows[1:])      # failures, not crashes


def test_unknown_validation_setting(tmp_path):
    cfg = write(tmp_path, {"validate": {"settings": {"ks": 0.1}}})
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_defaults_without_config():
    cfg = load_config(None)
    assert cfg["model"].lam == 4.0 and cfg["seed"] == 0
