import json
import math

import pytest

from cli.app import EXPERIMENTS, UnknownExperimentError, get_experiment_instance, list_experiments, main
from core.report import ExperimentReport


def test_every_experiment_is_registered():
    for name in EXPERIMENTS:
        experiment = get_experiment_instance(name)
        assert experiment.name == name
        assert experiment.statement
        experiment.make_config()
    with pytest.raises(UnknownExperimentError):
        get_experiment_instance("nope")


def test_list_is_sorted(capsys):
    assert main(["list"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == sorted(EXPERIMENTS)
    catalog = list_experiments()
    assert [entry["name"] for entry in catalog] == names
    for entry in catalog:
        assert entry["anchor"]
        assert entry["module"].startswith("engine.")


def test_run_writes_report(tmp_path, capsys):
    out = tmp_path / "reports"
    assert main(["run", "--experiment", "logsob", "--seed", "4", "--out", str(out)]) == 0
    report = ExperimentReport.load(str(out / "logsob_seed4.json"))
    assert report.passed
    assert report.config["seed"] == 4

    assert main(["report", "--in", str(out / "logsob_seed4.json"), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("name,value,stderr,oracle,tol,pass")

    assert main(["history"]) == 0
    assert "logsob" in capsys.readouterr().out


def test_same_seed_gives_same_report_body(tmp_path):
    config = tmp_path / "g.json"
    config.write_text(json.dumps({"experiment": "girsanov", "paths": 2000, "steps": 20, "seed": 1}),
                      encoding="utf-8")
    bodies = []
    for folder in ("a", "b"):
        main(["run", "--config", str(config), "--out", str(tmp_path / folder)])
        bodies.append(ExperimentReport.load(str(tmp_path / folder / "girsanov_seed1.json")).body())
    assert bodies[0] == bodies[1]


def test_run_rejects_unknown_experiment(tmp_path):
    assert main(["run", "--experiment", "nope", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("flag", ["--paths", "--steps", "--workers"])
def test_run_rejects_non_positive_sizes(tmp_path, flag):
    assert main(["run", "--experiment", "girsanov", flag, "0", "--out", str(tmp_path)]) == 2


def test_run_rejects_bad_config_file(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"experiment": "logsob", "dimension": 3}), encoding="utf-8")
    assert main(["run", "--config", str(config), "--out", str(tmp_path)]) == 2


def test_run_needs_an_experiment(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 2


def test_report_of_missing_file(tmp_path):
    assert main(["report", "--in", str(tmp_path / "missing.json")]) == 2


SMALL_PARAMS = {
    "brascamp-lieb": {"instances": 5, "finite_paths": 2000},
    "convergence": {"jacobi_paths": 2000},
    "frame-lemma": {"samples": 5000},
    "jacobi-stationary": {"long_horizon": 2.0, "long_steps": 100},
    "marginal-nu": {"sample_points": 5000},
}


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_experiment_runs_at_small_size(name):
    experiment = get_experiment_instance(name)
    config = experiment.make_config(paths=2000, steps=20, params=SMALL_PARAMS.get(name, {}))
    rows = experiment.run(config)
    assert rows
    for row in rows:
        assert math.isfinite(row.value), row.name
        assert math.isfinite(row.oracle), row.name
