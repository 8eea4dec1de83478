import json
import math

import numpy as np
import pytest

from detector_forge.aggregate import subgaussian_fast_path_deltas
from detector_forge.cli import ConfigError, main, validate_config


def _gaussian(mean, cov=None):
    return {
        "kind": "gaussian",
        "mean": {"type": "singleton", "point": list(mean)},
        "cov": cov if cov is not None else np.eye(len(mean)).tolist(),
    }


def pair_config(m1=(1.0, 0.0), m2=(-1.0, 0.0), **extra):
    cfg = {
        "schema_version": "1",
        "task": "pair",
        "seed": 5,
        "families": [_gaussian(m1), _gaussian(m2)],
    }
    cfg.update(extra)
    return cfg


def run_cli(tmp_path, cfg, *flags):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return main(["--config", str(path), *flags])


def read_report(tmp_path, name="report"):
    return json.loads((tmp_path / f"{name}.json").read_text(encoding="utf-8"))


def test_schema_accepts_pair_and_rejects_garbage():
    validate_config(pair_config())
    with pytest.raises(ConfigError) as err:
        validate_config({"schema_version": "1", "task": "everything"})
    assert "task" in str(err.value)
    with pytest.raises(ConfigError) as err:
        validate_config({"schema_version": "1", "task": "pair",
                         "families": [_gaussian((0.0,))]})
    assert "families" in str(err.value)


def test_validate_flag_only_checks(tmp_path, capsys):
    assert run_cli(tmp_path, pair_config(), "--validate") == 0
    assert "valid" in capsys.readouterr().out


def test_pair_symmetric_gaussian_risk(tmp_path):
    code = run_cli(tmp_path, pair_config(), "--out", str(tmp_path / "report"))
    assert code == 0
    rep = read_report(tmp_path)
    assert rep["results"]["risk"] == pytest.approx(math.exp(-0.5), rel=1e-6)
    assert rep["results"]["certified"] is True
    assert "gap" in rep["results"]
    assert (tmp_path / "report.txt").exists()


def test_pair_identical_families_warns(tmp_path):
    cfg = pair_config(m1=(0.5, 0.5), m2=(0.5, 0.5))
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "report")) == 0
    rep = read_report(tmp_path)
    assert rep["results"]["risk"] == pytest.approx(1.0, abs=1e-9)
    assert "hypotheses indistinguishable" in rep["warnings"]


def test_bad_covariance_names_the_field(tmp_path, capsys):
    cfg = pair_config()
    cfg["families"][0]["cov"] = [[1.0, 2.0], [2.0, 1.0]]
    assert run_cli(tmp_path, cfg) == 2
    err = capsys.readouterr().err
    assert "families[0].cov" in err
    assert "positive definite" in err


def test_invalid_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["--config", str(bad)]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "absent.json")]) == 2


def test_pair_mc_csv_format(tmp_path):
    cfg = pair_config(pair={"mc": {"n": 2000}})
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "report")) == 0
    text = (tmp_path / "report.csv").read_bytes().decode("utf-8")
    lines = text.split("\n")
    assert lines[0] == "label,estimate,std_error,n,bound,passed"
    assert len(lines) == 4 and lines[3] == ""
    assert "\r" not in text
    assert "," in lines[1] and "." in lines[1]
    rep = read_report(tmp_path)
    assert len(rep["results"]["mc"]) == 2
    for row in rep["results"]["mc"]:
        assert row["passed"] is True


def test_multitest_row_residual(tmp_path):
    cfg = {
        "schema_version": "1",
        "task": "multitest",
        "families": [_gaussian((t, 0.0)) for t in (-2.0, 0.0, 2.0)],
        "multitest": {"repetitions": 3, "observations": [[2.2, 0.0]] * 3},
    }
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "report")) == 0
    rep = read_report(tmp_path)
    res = rep["results"]
    assert res["row_residual"] < 1e-8
    assert 0.0 < res["eps_hat"] < 1.0
    assert np.asarray(res["alpha"]).shape == (3, 3)
    assert res["accepted"] == [2]


def test_multitest_infeasible_target_exits_4(tmp_path, capsys):
    cfg = {
        "schema_version": "1",
        "task": "multitest",
        "families": [_gaussian((0.0,)), _gaussian((0.0,))],
        "multitest": {"target_risk": 0.1},
    }
    assert run_cli(tmp_path, cfg) == 4
    assert "infeasible" in capsys.readouterr().err


def test_color_task_inference(tmp_path):
    cfg = {
        "schema_version": "1",
        "task": "color",
        "families": [_gaussian((t,)) for t in (-3.0, 2.5, 3.5)],
        "color": {"repetitions": 2, "partition": [0, 1, 1],
                  "observations": [[3.1], [2.9]]},
    }
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "report")) == 0
    rep = read_report(tmp_path)
    assert rep["results"]["color"] == 1
    assert rep["results"]["partition"] == [0, 1, 1]


def test_aggregate_fast_deltas_and_pick(tmp_path):
    estimates = [[-1.0], [1.0]]
    cfg = {
        "schema_version": "1",
        "task": "aggregate",
        "aggregate": {
            "estimates": estimates,
            "parameter_sets": [{"type": "box", "lo": [-4.0], "hi": [4.0]}],
            "G": [[1.0]],
            "Theta": [[1.0]],
            "repetitions": 6,
            "eps": 0.2,
            "observations": [[0.9], [1.1], [1.0], [0.8], [1.2], [1.0]],
        },
    }
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "report")) == 0
    rep = read_report(tmp_path)
    want = subgaussian_fast_path_deltas(np.asarray(estimates), np.eye(1),
                                        0.2, 6)
    assert np.allclose(rep["results"]["fast_deltas"], want, atol=1e-12)
    assert rep["results"]["index"] == 1
    assert rep["results"]["fast_index"] == 1


def test_aggregate_needs_margin_source(tmp_path, capsys):
    cfg = {
        "schema_version": "1",
        "task": "aggregate",
        "aggregate": {
            "estimates": [[-1.0], [1.0]],
            "parameter_sets": [{"type": "box", "lo": [-4.0], "hi": [4.0]}],
            "G": [[1.0]],
            "Theta": [[1.0]],
            "repetitions": 2,
        },
    }
    assert run_cli(tmp_path, cfg) == 2
    assert "eps or deltas" in capsys.readouterr().err


def test_quadlift_task_and_roundtrip(tmp_path):
    cfg = {
        "schema_version": "1",
        "task": "quadlift",
        "quadlift": {
            "A1": [[0.0, 1.0]],
            "U1": {"type": "singleton", "point": [0.0]},
            "cov1": [[1.0]],
            "Theta1": [[1.0]],
            "A2": [[0.0, -1.0]],
            "U2": {"type": "singleton", "point": [0.0]},
            "cov2": [[1.0]],
            "Theta2": [[1.0]],
            "compare_affine": True,
        },
    }
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "report")) == 0
    rep = read_report(tmp_path)
    risk = rep["results"]["risk"]
    assert risk == pytest.approx(math.exp(-0.5), abs=2e-4)
    assert rep["results"]["affine_risk"] == pytest.approx(risk, abs=2e-4)

    # echoed config reruns to the same certified value
    echo = tmp_path / "echo.json"
    echo.write_text(json.dumps(rep["config"]), encoding="utf-8")
    assert main(["--config", str(echo), "--out",
                 str(tmp_path / "second")]) == 0
    again = read_report(tmp_path, "second")
    assert again["results"]["risk"] == risk


def simulate_config(seed=9):
    return {
        "schema_version": "1",
        "task": "simulate",
        "seed": seed,
        "simulate": {
            "detector": {"h": [1.0, 0.0], "a": -1.0,
                         "risk": math.exp(-0.5)},
            "sampler": {"kind": "gaussian", "mean": [2.0, 0.0],
                        "cov": [[1.0, 0.0], [0.0, 1.0]]},
            "side": 1,
            "n": 4096,
        },
    }


def test_simulate_reports_are_byte_identical(tmp_path):
    for name, threads in (("a", "1"), ("b", "4"), ("c", "1")):
        assert run_cli(tmp_path, simulate_config(), "--out",
                       str(tmp_path / name), "--threads", threads) == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    assert a == (tmp_path / "c.json").read_bytes()
    rep = read_report(tmp_path, "a")
    assert rep["results"]["mc"][0]["passed"] is True


def test_simulate_seed_flag_overrides_config(tmp_path):
    assert run_cli(tmp_path, simulate_config(seed=9), "--out",
                   str(tmp_path / "a")) == 0
    assert run_cli(tmp_path, simulate_config(seed=11), "--out",
                   str(tmp_path / "b"), "--seed", "9") == 0
    a = read_report(tmp_path, "a")["results"]["mc"][0]
    b = read_report(tmp_path, "b")["results"]["mc"][0]
    assert a["estimate"] == b["estimate"]


def test_text_summary_to_stdout_without_out(tmp_path, capsys):
    assert run_cli(tmp_path, simulate_config()) == 0
    out = capsys.readouterr().out
    assert "simulate report" in out
    assert "estimate" in out


def test_unknown_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["--config", "x", "--frobnicate"])
    assert exc.value.code == 2
