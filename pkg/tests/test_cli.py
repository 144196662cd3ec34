import json

import pytest

from wfdual.cli import EXIT_CONSTRUCTION, EXIT_INADMISSIBLE, EXIT_NUMERICAL, EXIT_OK, main
from wfdual.numeric import RATIONAL, read_csv


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def run(tmp_path, cmd, cfg, *extra):
    out = tmp_path / f"run_{cmd}"
    code = main([cmd, write(tmp_path, f"{cmd}.json", cfg), "--out", str(out), *extra])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_check_fails_for_negative_selection(tmp_path, capsys):
    code, out = run(tmp_path, "check", {"mechanism": {"kind": "selection", "s": "-1/2"}, "n": [4, 8, 16]})
    assert code == EXIT_INADMISSIBLE
    report = json.loads((out / "check.json").read_text())
    assert report["symbolic"] == "not-admissible"
    assert all(row["grid"] == "fail" for row in report["checks"])


def test_check_passes(tmp_path):
    code, out = run(tmp_path, "check", {"mechanism": {"kind": "selection", "s": "1"}, "n": [4, 8, 16]})
    assert code == EXIT_OK
    assert manifest(out)["exit_code"] == 0


def test_dual_mutation_matches_closed_form(tmp_path):
    code, out = run(tmp_path, "dual", {"mechanism": {"kind": "mutation", "mu1": "1/10", "mu2": "1/5"}, "n": 6})
    assert code == EXIT_OK
    m = manifest(out)
    assert m["residuals"]["closed_form"] == "0" and m["residuals"]["duality_phi2"] == "0"
    assert {"forward.csv", "dual.csv", "dual.json"} <= set(m["outputs"])
    dual = read_csv(out / "dual.csv", RATIONAL)
    assert dual.shape == (7, 7) and dual[0, 0] == 1


def test_dual_rejects_inadmissible(tmp_path, capsys):
    code, _ = run(tmp_path, "dual", {"mechanism": {"kind": "selection", "s": "-1/2"}, "n": 6})
    assert code == EXIT_CONSTRUCTION
    assert "negative" in capsys.readouterr().err


def test_dual_float_mode_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("WFDUAL_PRECISION", "100")
    code, out = run(tmp_path, "dual", {"mechanism": {"kind": "selection", "s": "1"}, "n": 8}, "--mode", "float")
    assert code == EXIT_OK
    m = manifest(out)
    assert m["config"]["bits"] == 100 and float(m["residuals"]["duality_phi2"]) < 1e-25


def test_limits_stationary(tmp_path):
    code, out = run(tmp_path, "limits", {"mechanism": {"kind": "mutation", "mu1": "1/10", "mu2": "1/5"},
                                         "n": [10, 25]})
    assert code == EXIT_OK
    lines = (out / "ladder.csv").read_text().splitlines()
    header = lines[0].split(",")
    row = dict(zip(header, lines[1].split(",")))
    assert row["rho_1"] == "2/3" and row["mean"] == "10/3" and row["bridge_residual"] == "0"


def test_limits_neutral_mrca(tmp_path):
    code, out = run(tmp_path, "limits", {"mechanism": {"kind": "neutral"}, "n": [10]})
    assert code == EXIT_OK
    law = read_csv(out / "ancestral_law_n10.csv", RATIONAL)[0]
    assert law[1] == 1 and sum(law) == 1


def test_limits_gw_table(tmp_path):
    code, out = run(tmp_path, "limits", {"mechanism": {"kind": "quadratic", "c": "1"}, "n": [30, 60]})
    assert code == EXIT_OK
    assert (out / "gw_correction.csv").exists() and (out / "ainfty_moments.csv").exists()


def test_limits_mixed_warns(tmp_path, caplog):
    code, out = run(tmp_path, "limits", {"mechanism": {"kind": "mutation", "mu1": "0", "mu2": "1/5"}, "n": [6]})
    assert code == EXIT_OK
    assert manifest(out)["residuals"]["regime"] == "mixed"
    assert "mixed boundary" in caplog.text


def test_simulate(tmp_path):
    cfg = {"mechanism": {"kind": "neutral"}, "n": 10, "m": 4, "k": 3, "horizon": 5, "replicates": 3000, "seed": 5}
    code, out = run(tmp_path, "simulate", cfg)
    assert code == EXIT_OK
    report = json.loads((out / "simulation.json").read_text())
    assert report["duality"]["exact_lhs"] == report["duality"]["exact_rhs"]
    assert manifest(out)["seeds"] == [5]
    assert (out / "trace_forward.csv").read_text().startswith("replicate,terminal,coffin")


def test_simulate_seed_override(tmp_path):
    cfg = {"mechanism": {"kind": "neutral"}, "n": 6, "m": 3, "k": 2, "replicates": 200, "seed": 5}
    code, out = run(tmp_path, "simulate", cfg, "--seed", "11")
    assert code == EXIT_OK and manifest(out)["config"]["seed"] == 11


def test_coalescent(tmp_path):
    code, out = run(tmp_path, "coalescent", {"law": {"kind": "wright-fisher"}, "n": 3, "b_max": 3})
    assert code == EXIT_OK
    mat = read_csv(out / "ancestral_compositions.csv", RATIONAL)
    assert [str(v) for v in mat[3]] == ["0", "1/9", "2/3", "2/9"]
    assert manifest(out)["residuals"]["formula_agreement"] == "0"
    assert "pattern" in (out / "mergers.csv").read_text()


def test_coalescent_bmax_limit(tmp_path):
    code, _ = run(tmp_path, "coalescent", {"law": {"kind": "moran"}, "n": 30, "b_max": 21})
    assert code == EXIT_CONSTRUCTION


@pytest.mark.parametrize("text", ['{"mechanism": {"kind": "selection", "s": 1,}', "[1, 2]"])
def test_parse_errors(tmp_path, capsys, text):
    code = main(["check", write(tmp_path, "bad.json", text)])
    assert code == EXIT_CONSTRUCTION
    err = capsys.readouterr().err
    assert "error" in err


def test_json_error_reports_position(tmp_path, capsys):
    main(["check", write(tmp_path, "bad.json", '{\n  "n": [4,\n}')])
    assert "line 3 column 1" in capsys.readouterr().err


def test_config_path_in_error(tmp_path, capsys):
    code, _ = run(tmp_path, "dual", {"mechanism": {"kind": "joint", "left": {"kind": "neutral"},
                                                   "right": {"kind": "selection"}}, "n": 4})
    assert code == EXIT_CONSTRUCTION
    assert "$.mechanism.right.s" in capsys.readouterr().err


def test_domain_error_exit(tmp_path):
    code, _ = run(tmp_path, "dual", {"mechanism": {"kind": "quadratic", "c": "3"}, "n": 4})
    assert code == EXIT_CONSTRUCTION


def test_numerical_failure_exit(tmp_path, monkeypatch):
    import wfdual.cli as cli

    def boom(cfg, run):
        raise ArithmeticError("synthetic")

    monkeypatch.setitem(cli.COMMANDS, "dual", boom)
    code, _ = run(tmp_path, "dual", {"n": 3})
    assert code == EXIT_NUMERICAL


@pytest.mark.parametrize("cmd,cfg,name", [
    ("dual", {"mechanism": {"kind": "selection", "s": "3"}, "n": 7}, "dual.csv"),
    ("limits", {"mechanism": {"kind": "mutation", "mu1": "1/10", "mu2": "1/5"}, "n": [6]}, "stationary_n6.csv"),
    ("coalescent", {"law": {"kind": "dirichlet", "theta": "1/2"}, "n": 6, "b_max": 5}, "mergers.csv"),
])
def test_rerun_is_byte_identical(tmp_path, cmd, cfg, name):
    code, out = run(tmp_path, cmd, cfg)
    assert code == EXIT_OK
    again = tmp_path / "again"
    assert main(["rerun", str(out / "manifest.json"), "--out", str(again)]) == EXIT_OK
    for f in manifest(out)["outputs"]:
        if f.endswith(".csv"):
            assert (out / f).read_bytes() == (again / f).read_bytes()
    assert (again / name).exists()


def test_rerun_float_mode(tmp_path):
    code, out = run(tmp_path, "dual", {"mechanism": {"kind": "power", "gamma": "1/2"}, "n": 6})
    assert code == EXIT_OK and manifest(out)["config"]["mode"] == "float"
    again = tmp_path / "again"
    assert main(["rerun", str(out / "manifest.json"), "--out", str(again)]) == EXIT_OK
    assert (out / "dual.csv").read_text() == (again / "dual.csv").read_text()
