# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# pylint: disable=W0621
import copy
import json
import os

import allure
import pytest

from srld.cli import main

SHORT_CHAIN = ["--total-steps", "300", "--window-size", "5", "--thinning", "10"]


def _sample(tmp_path, *flags):
    out = tmp_path / "out"
    code = main(["sample", "--target", "banana", "--out", str(out), "--seed", "7", *flags])
    return code, out


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    assert main(["--version"]) == 0
    assert "srld" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["sample", "--colour", "blue"],
        ["sample", "--alpha", "lots"],
        ["stein-check", "--sizes", "ten"],
        ["diagnose", "--trace", "a.csv"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == 2


def test_sample_writes_trace(tmp_path, capsys):
    code, out = _sample(tmp_path, "--method", "srld", "--step-size", "0.01", *SHORT_CHAIN)
    assert code == 0
    path = out / "traces" / "srld_7.csv"
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "iter,x0,x1,phase"
    assert len(lines) == 301
    assert "alpha used: 10" in capsys.readouterr().out


def test_zero_alpha_srld_matches_langevin(tmp_path):
    with allure.step("Run SRLD with alpha 0 and Langevin on the same seed"):
        code, out = _sample(
            tmp_path, "--method", "srld", "--alpha", "0", "--step-size", "0.01", *SHORT_CHAIN
        )
        assert code == 0
        code, out = _sample(tmp_path, "--method", "langevin", "--step-size", "0.01", *SHORT_CHAIN)
        assert code == 0
    srld = (out / "traces" / "srld_7.csv").read_bytes()
    langevin = (out / "traces" / "langevin_7.csv").read_bytes()
    assert srld == langevin


def test_sample_entry_from_config(tmp_path, experiment_file):
    out = tmp_path / "out"
    argv = ["sample", "--config", str(experiment_file), "--name", "langevin", "--out", str(out)]
    code = main(argv + ["--total-steps", "200"])
    assert code == 0
    assert (out / "traces" / "langevin_0.csv").exists()
    assert main(["sample", "--config", str(experiment_file), "--name", "hmc"]) == 1


def test_sample_rejects_bad_values(tmp_path):
    assert _sample(tmp_path, "--step-size", "-1")[0] == 1
    assert _sample(tmp_path, "--method", "srld", "--total-steps", "10")[0] == 1
    assert main(["sample", "--target", "unicorn"]) == 1


def test_compare(tmp_path, experiment_file, capsys):
    out = tmp_path / "report"
    code = main(["compare", "--config", str(experiment_file), "--out", str(out)])
    assert code == 0
    data = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    assert data["seeds"] == [0, 1]
    assert sorted(os.listdir(out / "traces")) == [
        "langevin_0.csv",
        "langevin_1.csv",
        "srld_0.csv",
        "srld_1.csv",
    ]
    assert "srld-langevin" in capsys.readouterr().out


def test_compare_seed_override(tmp_path, experiment_file):
    out = tmp_path / "report"
    argv = ["compare", "--config", str(experiment_file), "--out", str(out), "--seed", "4"]
    assert main(argv) == 0
    data = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    assert data["seeds"] == [4]


def test_compare_reports_basin_visits(tmp_path, experiment_document, capsys):
    document = copy.deepcopy(experiment_document)
    document["init"] = {"theta0": [1.0, 1.0]}
    document["basin"] = {"center": [1.0, 1.0], "radius": 100.0}
    path = tmp_path / "basin.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    out = tmp_path / "report"
    argv = ["compare", "--config", str(path), "--out", str(out), "--workers", "1"]
    assert main(argv) == 0
    data = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    assert data["aggregate"]["basin"]["srld"]["visits"] == 2
    assert "srld: basin visits 2/2, median first visit 50.0" in capsys.readouterr().out


def test_compare_errors(tmp_path, experiment_document, capsys):
    assert main(["compare"]) == 2
    path = tmp_path / "bad.json"
    document = copy.deepcopy(experiment_document)
    document["methods"][0]["alpha"] = "lots"
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    assert main(["compare", "--config", str(path), "--out", str(tmp_path / "x")]) == 1
    assert "methods.0.alpha" in capsys.readouterr().err
    assert main(["compare", "--config", str(tmp_path / "missing.json")]) == 1


def test_compare_all_failed(tmp_path, experiment_document):
    document = copy.deepcopy(experiment_document)
    for entry in document["methods"]:
        entry["step_size"] = 5.0
    path = tmp_path / "diverge.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    out = tmp_path / "report"
    assert main(["compare", "--config", str(path), "--out", str(out)]) == 1
    assert (out / "metrics.json").exists()


def test_diagnose_identical_traces(tmp_path, capsys):
    code, out = _sample(tmp_path, "--method", "langevin", "--step-size", "0.01", *SHORT_CHAIN)
    assert code == 0
    trace = str(out / "traces" / "langevin_7.csv")
    code = main(
        ["diagnose", "--trace", trace, "--reference", trace, "--max-lag", "5"]
        + ["--out", str(tmp_path / "diag")]
    )
    assert code == 0
    assert "mmd2=0.0 w1=0.0" in capsys.readouterr().out
    data = json.loads((tmp_path / "diag" / "metrics.json").read_text(encoding="utf-8"))
    assert data["sample_count"] == 250


def test_diagnose_missing_file(tmp_path):
    missing = str(tmp_path / "none.csv")
    assert main(["diagnose", "--trace", missing, "--reference", missing]) == 1


def test_stein_check(tmp_path, capsys):
    code = main(
        ["stein-check", "--sizes", "100,400", "--grid-per-axis", "3", "--out", str(tmp_path)]
    )
    assert code == 0
    rows = json.loads((tmp_path / "stein_check.json").read_text(encoding="utf-8"))["rows"]
    assert [row["n"] for row in rows] == [100, 400]
    assert rows[0]["shrink"] is None
    assert rows[1]["max"] > 0
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_stein_check_needs_exact_sampler():
    assert main(["stein-check", "--target", "banana", "--sizes", "10"]) == 1
