"""End-to-end tests for the command-line interface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from shaplab import EXPERIMENT_NAMES, load_manifold
from shaplab.cli import main


def write_csv(path, rows, header="x1,x2"):
    np.savetxt(path, rows, delimiter=",", header=header, comments="")
    return str(path)


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    rng = np.random.default_rng(7)
    path = tmp_path_factory.mktemp("data") / "small.csv"
    return write_csv(path, rng.standard_normal((40, 2)))


@pytest.fixture(scope="module")
def probe_csv(tmp_path_factory):
    rng = np.random.default_rng(8)
    path = tmp_path_factory.mktemp("data") / "probes.csv"
    return write_csv(path, rng.standard_normal((2000, 2)))


@pytest.fixture(scope="module")
def gate_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "gate.json"
    path.write_text(json.dumps({"kind": "gate", "column": 0, "threshold": 0.5}))
    return str(path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# experiment subcommand


def test_experiment_list(capsys):
    code, out, err = run_cli(capsys, "experiment", "list")
    assert code == 0
    assert out == "experiments: " + " ".join(EXPERIMENT_NAMES) + "\n"
    assert err == ""


def test_module_entrypoint_smoke():
    proc = subprocess.run(
        [sys.executable, "-m", "shaplab.cli", "experiment", "list"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("experiments: ")


def test_experiment_run_requires_known_name(capsys):
    code, _, err = run_cli(capsys, "experiment", "run", "nosuch")
    assert code == 2
    assert "unknown experiment" in err
    code, _, err = run_cli(capsys, "experiment", "run")
    assert code == 2
    assert "requires a name" in err


def test_experiment_config_name_mismatch(capsys, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"name": "synthetic_dag"}))
    code, _, err = run_cli(
        capsys, "experiment", "run", "rjb_counterexample", "--config", str(config)
    )
    assert code == 2
    assert "config names" in err


def test_experiment_run_bytes_stable_across_reruns_and_threads(capsys, tmp_path):
    config = tmp_path / "tiny.json"
    config.write_text(json.dumps({
        "name": "rjb_counterexample", "n_points": 4, "m_samples": 40,
        "n_reference": 300, "n_calibration": 1500,
    }))
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run_cli(
        capsys, "experiment", "run", "rjb_counterexample",
        "--config", str(config), "--out", str(dir_a),
    )
    assert code == 0
    assert out.startswith("experiment name=rjb_counterexample ")
    code, _, _ = run_cli(
        capsys, "experiment", "run", "rjb_counterexample",
        "--config", str(config), "--out", str(dir_b), "--threads", "3",
    )
    assert code == 0
    for name in ("summary.csv", "attributions.csv", "errors.csv", "config.json"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name


# ---------------------------------------------------------------------------
# attribute subcommand


def test_attribute_happy_path(capsys, tmp_path, small_csv, gate_model):
    out_csv = tmp_path / "attr.csv"
    code, out, err = run_cli(
        capsys, "attribute", "--data", small_csv, "--model", gate_model,
        "--method", "ms", "--samples", "40", "--limit", "3",
        "--out", str(out_csv), "--seed", "0",
    )
    assert code == 0
    assert err == ""
    lines = out.splitlines()
    assert len(lines) == 1
    assert lines[0] == f"attribute method=ms engine=exact rows=3 skipped=0 out={out_csv}"
    rows = out_csv.read_text().splitlines()
    assert rows[0] == "row,feature,phi,std_err"
    assert len(rows) == 1 + 3 * 2  # three explained rows, two features each
    for line in rows[1:]:
        idx, feature, phi, std_err = line.split(",")
        assert feature in ("x1", "x2")
        float(phi)
        assert std_err == ""  # the exact engine reports no sampling error


def test_attribute_permutation_engine_reports_errors(capsys, tmp_path, small_csv,
                                                     gate_model):
    out_csv = tmp_path / "perm.csv"
    code, out, _ = run_cli(
        capsys, "attribute", "--data", small_csv, "--model", gate_model,
        "--method", "ms", "--engine", "permutation", "--samples", "30",
        "--permutations", "20", "--limit", "2", "--out", str(out_csv),
    )
    assert code == 0
    assert "engine=permutation" in out
    for line in out_csv.read_text().splitlines()[1:]:
        float(line.split(",")[3])  # every feature carries a standard error


def test_attribute_interventional_with_builtin_scm(capsys, tmp_path, small_csv):
    spec = tmp_path / "scm.json"
    spec.write_text(json.dumps({"kind": "scm", "name": "dag_rho",
                                "params": {"rho": 0.85}}))
    code, out, _ = run_cli(
        capsys, "attribute", "--data", small_csv, "--model", str(spec),
        "--method", "is", "--samples", "40", "--limit", "2",
    )
    assert code == 0
    assert "method=is" in out and "rows=2" in out


def test_attribute_unknown_method(capsys, small_csv, gate_model):
    code, _, err = run_cli(
        capsys, "attribute", "--data", small_csv, "--model", gate_model,
        "--method", "nosuch",
    )
    assert code == 2
    assert "unknown method" in err


def test_attribute_missing_required_flag(capsys, gate_model):
    code, _, err = run_cli(capsys, "attribute", "--model", gate_model)
    assert code == 2
    assert "requires --data" in err


def test_attribute_missing_data_file(capsys, tmp_path, gate_model):
    code, _, err = run_cli(
        capsys, "attribute", "--data", str(tmp_path / "nope.csv"),
        "--model", gate_model,
    )
    assert code == 1
    assert "cannot open" in err


def test_attribute_malformed_csv(capsys, tmp_path, gate_model):
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2\n1.0,2.0\n3.0\n")
    code, _, err = run_cli(
        capsys, "attribute", "--data", str(bad), "--model", gate_model
    )
    assert code == 1
    assert "expected 2" in err


def test_attribute_model_spec_errors(capsys, tmp_path, small_csv):
    bad_kind = tmp_path / "bad_kind.json"
    bad_kind.write_text(json.dumps({"kind": "wizard"}))
    code, _, err = run_cli(
        capsys, "attribute", "--data", small_csv, "--model", str(bad_kind)
    )
    assert code == 2
    assert "unknown model kind" in err

    wrong_d = tmp_path / "wrong_d.json"
    wrong_d.write_text(json.dumps({"kind": "scm", "name": "equicorrelated",
                                   "params": {"d": 4}}))
    code, _, err = run_cli(
        capsys, "attribute", "--data", small_csv, "--model", str(wrong_d)
    )
    assert code == 2
    assert "4 features" in err


def test_attribute_config_file_merge(capsys, tmp_path, small_csv, gate_model):
    config = tmp_path / "attr.json"
    config.write_text(json.dumps({"method": "ms", "samples": 30, "limit": 2}))
    code, out, _ = run_cli(
        capsys, "attribute", "--config", str(config),
        "--data", small_csv, "--model", gate_model,
    )
    assert code == 0
    assert "method=ms" in out and "rows=2" in out
    # An explicit flag overrides the config file.
    code, out, _ = run_cli(
        capsys, "attribute", "--config", str(config),
        "--data", small_csv, "--model", gate_model, "--limit", "1",
    )
    assert code == 0
    assert "rows=1" in out


def test_attribute_config_file_errors(capsys, tmp_path, small_csv, gate_model):
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"bogus": 1}))
    code, _, err = run_cli(
        capsys, "attribute", "--config", str(unknown),
        "--data", small_csv, "--model", gate_model,
    )
    assert code == 2
    assert "unknown config keys: bogus" in err

    invalid = tmp_path / "invalid.json"
    invalid.write_text("{not json")
    code, _, err = run_cli(
        capsys, "attribute", "--config", str(invalid),
        "--data", small_csv, "--model", gate_model,
    )
    assert code == 2
    assert "invalid JSON" in err


def test_attribute_skips_rows_outside_manifold(capsys, tmp_path, gate_model):
    rng = np.random.default_rng(11)
    rows = np.vstack([[10.0, 10.0], rng.standard_normal((200, 2))])
    data = write_csv(tmp_path / "outlier.csv", rows)
    code, out, err = run_cli(
        capsys, "attribute", "--data", data, "--model", gate_model,
        "--samples", "40", "--limit", "4",
    )
    assert code == 0
    assert "row 0: outside manifold, skipped" in err
    assert "rows=3 skipped=1" in out


# ---------------------------------------------------------------------------
# manifold subcommand


def test_manifold_kde_fit_save_load(capsys, tmp_path, small_csv):
    prefix = tmp_path / "region"
    code, out, _ = run_cli(
        capsys, "manifold", "--data", small_csv, "--out", str(prefix),
        "--alpha", "0.95",
    )
    assert code == 0
    assert (tmp_path / "region.params.json").is_file()
    assert (tmp_path / "region.points.csv").is_file()
    loaded = load_manifold(str(prefix))
    assert f"eps={loaded.eps!r}" in out
    rows = np.loadtxt(small_csv, delimiter=",", skiprows=1)
    # The threshold keeps roughly the requested share of the fit data.
    inside = np.asarray(loaded.contains_batch(rows), dtype=bool)
    assert inside.mean() >= 0.9


def test_manifold_ood_fit_save_load(capsys, tmp_path, small_csv):
    prefix = tmp_path / "votes"
    code, out, _ = run_cli(
        capsys, "manifold", "--data", small_csv, "--kind", "ood",
        "--out", str(prefix),
    )
    assert code == 0
    assert "kind=ood k=5" in out
    loaded = load_manifold(str(prefix))
    rows = np.loadtxt(small_csv, delimiter=",", skiprows=1)
    assert len(loaded.contains_batch(rows)) == len(rows)


def test_manifold_rejects_bad_inputs(capsys, tmp_path, small_csv):
    code, _, err = run_cli(
        capsys, "manifold", "--data", small_csv,
        "--out", str(tmp_path / "m"), "--alpha", "1.5",
    )
    assert code == 2
    assert "alpha" in err
    code, _, err = run_cli(
        capsys, "manifold", "--data", small_csv,
        "--out", str(tmp_path / "m"), "--kind", "nosuch",
    )
    assert code == 2
    assert "unknown manifold kind" in err


# ---------------------------------------------------------------------------
# robustness subcommand


def test_robustness_offset_family_invariance(capsys, tmp_path, probe_csv, gate_model):
    report_csv = tmp_path / "report.csv"
    code, out, _ = run_cli(
        capsys, "robustness", "--data", probe_csv, "--model", gate_model,
        "--family", "offset", "--method", "mshap", "--samples", "50",
        "--out", str(report_csv),
    )
    assert code == 0
    # The restricted method never evaluates the model off the manifold, so
    # an off-manifold offset cannot move any coalition value.
    assert "passed=true" in out and "max_absdiff=0.0" in out
    lines = report_csv.read_text().splitlines()
    assert lines[0] == "coalition,v1,v2,absdiff,bound,pass"
    assert len(lines) == 1 + 4  # all coalitions of two features
    assert all(line.endswith("true") for line in lines[1:])


def test_robustness_density_family_schema(capsys, tmp_path, probe_csv, gate_model):
    report_csv = tmp_path / "density.csv"
    code, out, _ = run_cli(
        capsys, "robustness", "--data", probe_csv, "--model", gate_model,
        "--family", "density", "--method", "is", "--samples", "40",
        "--out", str(report_csv),
    )
    assert code == 0
    assert "family=density" in out and "passed=" in out
    assert report_csv.read_text().splitlines()[0] == "coalition,v1,v2,absdiff,bound,pass"


def test_robustness_needs_enough_probe_rows(capsys, small_csv, gate_model):
    code, _, err = run_cli(
        capsys, "robustness", "--data", small_csv, "--model", gate_model,
        "--family", "offset",
    )
    assert code == 2
    assert "1000" in err


def test_robustness_rejects_unknown_family(capsys, probe_csv, gate_model):
    code, _, err = run_cli(
        capsys, "robustness", "--data", probe_csv, "--model", gate_model,
        "--family", "nosuch",
    )
    assert code == 2
    assert "unknown family" in err
