"""
Scenario parsing, the runner, report exports, goldens and the command line
"""

import json
from pathlib import Path

import pytest

from app.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, EXIT_RUNTIME, main
from app.lab import runner
from app.lab.errors import ConfigError, ExponentOutOfRange, MissingArtifact
from app.models.scenario import load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"


def test_parse_rejects_fast_diffusion(small_baseline):
    small_baseline["solver"]["p"] = 0.9
    with pytest.raises(ConfigError) as excinfo:
        parse_scenario(small_baseline)
    assert excinfo.value.rule == "slow-diffusion"


def test_parse_rejects_unknown_fields(small_baseline):
    small_baseline["solver"]["dt"] = 0.1
    with pytest.raises(ConfigError):
        parse_scenario(small_baseline)


@pytest.mark.parametrize(
    "section, entry",
    [
        ("lemmas", {"name": "x", "kind": "pressure-evolution", "case": "no-such-case"}),
        ("lemmas", {"name": "x", "kind": "convergence", "case": "decay-sine"}),
        ("lemmas", {"name": "x", "kind": "H-identity", "zeta": "no-such-weight"}),
        ("lemmas", {"name": "x", "kind": "H-inequality", "gamma": "cubic"}),
        ("lemmas", {"name": "x", "kind": "convergence", "operator": "no-such-op"}),
        ("lemmas", {"name": "x", "kind": "cutoff", "R": 1.0, "T": 1.0, "profile": "no-such-profile"}),
        ("corollaries", {"name": "x", "tag": "C10-general", "gamma": "cubic"}),
        ("liouville", {"name": "x", "theorem": "T6-ancient", "p": 1.3, "m": 2.0, "nonlinearity": "cubic"}),
    ],
)
def test_parse_rejects_unknown_catalog_tags(small_baseline, section, entry):
    small_baseline.setdefault(section, []).append(entry)
    with pytest.raises(ConfigError) as excinfo:
        parse_scenario(small_baseline)
    assert excinfo.value.rule == "catalog-tag"


def test_parse_rejects_unknown_stepper(small_baseline):
    small_baseline["solver"]["stepper"] = "euler"
    with pytest.raises(ConfigError) as excinfo:
        parse_scenario(small_baseline)
    assert excinfo.value.rule == "catalog-tag"


def test_shipped_scenarios_validate():
    paths = sorted(SCENARIOS.glob("*.json"))
    assert paths
    for path in paths:
        scenario, _ = load_scenario(path)
        assert scenario.name == path.stem


def test_parse_rejects_duplicate_names(small_baseline):
    small_baseline["lemmas"].append({"name": "mass", "kind": "mass"})
    with pytest.raises(ConfigError) as excinfo:
        parse_scenario(small_baseline)
    assert "unique-names" in str(excinfo.value)


def test_exponent_range_checked_before_compute(small_baseline):
    small_baseline["solver"]["p"] = 1.4
    with pytest.raises(ExponentOutOfRange) as excinfo:
        parse_scenario(small_baseline)
    assert excinfo.value.rule == "t2-exponent-range"


def test_bad_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"name": "broken",', encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_scenario(path)
    assert excinfo.value.rule == "json"


def test_empty_scenario_runs_no_checks(lab_dirs, write_scenario):
    manifest = runner.run(write_scenario({"name": "empty"}))
    assert manifest.verdicts == {}
    assert manifest.passed
    assert (lab_dirs / "runs" / "empty" / "report.json").exists()


def test_baseline_run_passes(lab_dirs, write_scenario, small_baseline):
    manifest = runner.run(write_scenario(small_baseline))
    assert manifest.passed, manifest.verdicts
    assert set(manifest.verdicts) == {"t2-static", "mass", "curvature"}
    assert len(manifest.scenario_hash) == 64
    assert "total" in manifest.timings


def test_reports_are_byte_identical(lab_dirs, write_scenario, small_baseline):
    path = write_scenario(small_baseline)
    runner.run(path, out=lab_dirs / "first", jobs=1)
    runner.run(path, out=lab_dirs / "second", jobs=2)
    first = (lab_dirs / "first" / "report.json").read_bytes()
    second = (lab_dirs / "second" / "report.json").read_bytes()
    assert first == second


def test_report_exports(lab_dirs, write_scenario, small_baseline):
    runner.run(write_scenario(small_baseline), out=lab_dirs / "run")
    manifest_path = lab_dirs / "run" / "manifest.json"

    verdicts = runner.report(manifest_path, "json")[0]
    data = json.loads(verdicts.read_text(encoding="utf-8"))
    assert data["passed"]
    assert data["checks"]["t2-static"]["kind"] == "estimate"

    tables = runner.report(manifest_path, "csv")
    names = {p.name for p in tables}
    assert "t2-static.samples.csv" in names
    header = (lab_dirs / "run" / "csv" / "t2-static.samples.csv").read_text(encoding="utf-8").splitlines()[0]
    assert set(header.split(",")) == {"x1", "t", "lhs", "rhs", "ratio"}

    plotdata = runner.report(manifest_path, "plotdata")[0]
    assert "t2-static/ratio-vs-t" in json.loads(plotdata.read_text(encoding="utf-8"))

    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    assert "verdicts.json" in manifest["artifacts"]
    assert "plotdata.json" in manifest["artifacts"]


def test_report_needs_a_manifest(tmp_path):
    with pytest.raises(MissingArtifact):
        runner.report(tmp_path / "nowhere" / "manifest.json")


def test_report_format_must_be_known(lab_dirs, write_scenario):
    runner.run(write_scenario({"name": "empty"}), out=lab_dirs / "run")
    with pytest.raises(ConfigError):
        runner.report(lab_dirs / "run", "xml")


def test_golden_update_and_fixed_mode(lab_dirs, write_scenario, small_baseline):
    small_baseline["estimates"][0]["golden"] = True
    path = write_scenario(small_baseline)
    target = runner.golden_update(path)
    goldens = json.loads(target.read_text(encoding="utf-8"))
    assert set(goldens) == {"t2-static"}

    with pytest.raises(ConfigError) as excinfo:
        runner.golden_update(path)
    assert excinfo.value.rule == "golden-overwrite"
    runner.golden_update(path, force=True)

    small_baseline["estimates"][0].update({"mode": "fixed", "golden": True})
    manifest = runner.run(write_scenario(small_baseline, "fixed.json"))
    assert manifest.verdicts["t2-static"]


def test_golden_update_needs_a_golden_check(lab_dirs, write_scenario, small_baseline):
    with pytest.raises(ConfigError) as excinfo:
        runner.golden_update(write_scenario(small_baseline))
    assert excinfo.value.rule == "golden"


def test_first_verified_run_freezes_goldens(lab_dirs, write_scenario, small_baseline):
    small_baseline["estimates"][0]["golden"] = True
    path = write_scenario(small_baseline)
    runner.run(path, out=lab_dirs / "first")
    golden_file = lab_dirs / "goldens" / "small-baseline.json"
    frozen = golden_file.read_bytes()
    report = json.loads((lab_dirs / "first" / "report.json").read_text(encoding="utf-8"))
    assert json.loads(frozen) == {"t2-static": report["checks"]["t2-static"]["summary"]["c_star"]}

    runner.run(path, out=lab_dirs / "second")
    assert golden_file.read_bytes() == frozen

    regression = dict(small_baseline, name="small-regression", golden_set="small-baseline")
    regression["estimates"] = [dict(small_baseline["estimates"][0], mode="fixed")]
    manifest = runner.run(write_scenario(regression, "regression.json"))
    assert manifest.verdicts["t2-static"]
    assert manifest.passed


def test_failed_verdict_does_not_freeze(lab_dirs, write_scenario, small_baseline):
    small_baseline["estimates"][0]["golden"] = True
    small_baseline["lemmas"].append({"name": "impossible-mass", "kind": "mass", "tolerance": -1.0})
    runner.run(write_scenario(small_baseline))
    assert not (lab_dirs / "goldens" / "small-baseline.json").exists()


def test_raising_check_is_recorded_as_failed(lab_dirs, write_scenario, small_baseline):
    small_baseline["lemmas"].append({"name": "product", "kind": "product-rule", "case": "static-sine"})
    manifest = runner.run(write_scenario(small_baseline), out=lab_dirs / "run")
    assert manifest.verdicts["product"] is False
    assert manifest.verdicts["mass"] and manifest.verdicts["t2-static"]
    report = json.loads((lab_dirs / "run" / "report.json").read_text(encoding="utf-8"))
    assert report["checks"]["product"]["summary"]["error_type"] == "ConfigError"


def test_fixed_mode_without_golden(lab_dirs, write_scenario, small_baseline):
    small_baseline["estimates"][0].update({"mode": "fixed", "golden": True})
    with pytest.raises(MissingArtifact):
        runner.run(write_scenario(small_baseline))


def test_liouville_expectations(lab_dirs, write_scenario):
    scenario = {
        "name": "liouville",
        "liouville": [
            {"name": "constant", "theorem": "T6-ancient", "p": 1.3, "m": 2.0, "nonlinearity_params": {"a": 1.0}},
            {
                "name": "linear",
                "theorem": "T6-ancient",
                "p": 1.3,
                "m": 2.0,
                "nonlinearity": "linear",
                "expect": "hypotheses-not-met",
            },
        ],
    }
    manifest = runner.run(write_scenario(scenario))
    assert manifest.verdicts == {"constant": True, "linear": True}


def test_cli_exit_codes(lab_dirs, write_scenario, small_baseline, capsys):
    path = write_scenario(small_baseline)
    assert main(["validate", str(path)]) == EXIT_PASS
    assert "valid (3 checks)" in capsys.readouterr().out
    assert main(["run", str(path), "--out", str(lab_dirs / "cli")]) == EXIT_PASS
    assert main(["report", str(lab_dirs / "cli"), "--format", "csv"]) == EXIT_PASS
    assert main(["list-catalog"]) == EXIT_PASS
    assert "metrics:" in capsys.readouterr().out

    small_baseline["solver"]["p"] = 1.4
    assert main(["validate", str(write_scenario(small_baseline, "bad.json"))]) == EXIT_CONFIG


def test_cli_reports_failed_verdicts(lab_dirs, write_scenario, small_baseline):
    small_baseline["estimates"][0].update({"mode": "fixed", "C": 1e-9})
    assert main(["run", str(write_scenario(small_baseline))]) == EXIT_FAIL


def test_cli_unknown_case_is_a_config_error(lab_dirs, write_scenario):
    scenario = {"name": "bad-case", "lemmas": [{"name": "identity", "kind": "pressure-evolution", "case": "no-such-case"}]}
    assert main(["validate", str(write_scenario(scenario))]) == EXIT_CONFIG
    assert main(["run", str(write_scenario(scenario))]) == EXIT_CONFIG


def test_cli_runtime_error(tmp_path):
    assert main(["report", str(tmp_path / "nowhere" / "manifest.json")]) == EXIT_RUNTIME
