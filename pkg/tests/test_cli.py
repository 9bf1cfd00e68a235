import json
import shutil

import pytest

from stabaudit.cli import main
from stabaudit.errors import UnknownScenario
from stabaudit.pipeline import SCENARIOS, demo

HEADER = "subject_id,Dominance,Influence,Steadiness,Calculativeness\n"
CONFIG = """\
system_name: toy
schema:
  traits:
    - {name: Dominance, min: 0, max: 10}
    - {name: Influence, min: 0, max: 10}
    - {name: Steadiness, min: 0, max: 10}
    - {name: Calculativeness, min: 0, max: 10}
facets:
  - {name: file_format, control: control.csv, treatment: treatment.csv}
demographics: demo.csv
subgroups:
  - {attribute: gender, min_group_size: 3}
output_dir: out
"""


@pytest.fixture
def workdir(tmp_path):
    rows = "".join(f"s{i:02d},{i % 10},{(i * 3) % 10},{(i * 7) % 10},4\n" for i in range(20))
    (tmp_path / "control.csv").write_text(HEADER + rows)
    (tmp_path / "treatment.csv").write_text(HEADER + rows)
    genders = ["female", "male", "male", "female", "nonbinary"] * 4
    (tmp_path / "demo.csv").write_text(
        "subject_id,gender\n" + "".join(f"s{i:02d},{g}\n" for i, g in enumerate(genders)) + "ghost,male\n"
    )
    (tmp_path / "audit.yaml").write_text(CONFIG)
    return tmp_path


def test_self_comparison(workdir, capsys):
    assert main(["audit", "--config", str(workdir / "audit.yaml")]) == 0
    out = workdir / "out"
    report = json.loads((out / "report.json").read_text())
    overall = [v for v in report["verdicts"] if v["subgroup"] == "overall"]
    assert len(overall) == 4
    by_trait = {v["trait"]: v for v in overall}
    for t in ("Dominance", "Influence", "Steadiness"):
        assert by_trait[t]["correlation"]["statistic"] == 1.0
        assert by_trait[t]["rank_order_class"] == "MeetsDesirable"
    assert by_trait["Calculativeness"]["rank_order_class"] == "Undefined"
    assert all(v["total_variation"]["max"] == 0.0 for v in report["verdicts"])
    assert not any(v["locational_significant_bonferroni"] or v["locational_significant_bh"] for v in report["verdicts"])
    assert any("appear in no run" in w for w in report["warnings"])
    assert (out / "plots" / "scatter_file_format_Dominance.svg").is_file()
    for entry in report["plots"]:
        assert (out / entry["file"]).is_file()
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == len(report["verdicts"]) + 1
    assert not (out / "error.json").exists()


def test_rerun_is_byte_identical(workdir):
    assert main(["audit", "--config", str(workdir / "audit.yaml"), "--out", str(workdir / "a")]) == 0
    assert main(["audit", "--config", str(workdir / "audit.yaml"), "--out", str(workdir / "b")]) == 0
    files = sorted(p.relative_to(workdir / "a") for p in (workdir / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (workdir / "a" / rel).read_bytes() == (workdir / "b" / rel).read_bytes()


def test_zero_facets_is_config_error(workdir):
    (workdir / "audit.yaml").write_text(CONFIG.split("facets:")[0] + "facets: []\noutput_dir: out\n")
    assert main(["audit", "--config", str(workdir / "audit.yaml"), "--out", str(workdir / "z")]) == 2
    assert [p.name for p in (workdir / "z").iterdir()] == ["error.json"]
    assert json.loads((workdir / "z" / "error.json").read_text())["exit_code"] == 2


def test_bad_data_leaves_only_manifest(workdir):
    with (workdir / "treatment.csv").open("a") as fh:
        fh.write("s99,1,2,3,11\n")
    out = workdir / "bad"
    assert main(["audit", "--config", str(workdir / "audit.yaml"), "--out", str(out)]) == 3
    assert [p.name for p in out.iterdir()] == ["error.json"]
    manifest = json.loads((out / "error.json").read_text())
    assert manifest["error_type"] == "ValidationFailed"


def test_previous_error_cleared_on_success(workdir):
    out = workdir / "out"
    out.mkdir()
    (out / "error.json").write_text("{}")
    assert main(["audit", "--config", str(workdir / "audit.yaml")]) == 0
    assert not (out / "error.json").exists()


def test_report_formats(workdir, capsys):
    main(["audit", "--config", str(workdir / "audit.yaml")])
    capsys.readouterr()
    path = str(workdir / "out" / "report.json")
    assert main(["report", "--in", path, "--format", "csv"]) == 0
    csv_out = capsys.readouterr().out
    assert csv_out.startswith("facet,trait,subgroup,n,")
    assert main(["report", "--in", path, "--format", "text"]) == 0
    assert "Stability audit: toy" in capsys.readouterr().out
    assert main(["report", "--in", str(workdir / "control.csv")]) == 3


def test_missing_config_and_unknown_scenario(tmp_path):
    assert main(["audit", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["demo", "--scenario", "chaos", "--out", str(tmp_path / "d")]) == 2
    assert (tmp_path / "d" / "error.json").is_file()
    with pytest.raises(UnknownScenario):
        demo(1, "chaos", tmp_path / "e")


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["report", "--in", "x", "--format", "xml"])
    assert info.value.code == 2


@pytest.fixture(scope="module")
def demo_reports(tmp_path_factory):
    root = tmp_path_factory.mktemp("demos")
    return {name: demo(7, name, root / name) for name in SCENARIOS}, root


def test_demo_stable(demo_reports):
    bundles, _ = demo_reports
    report = bundles["stable"].report
    assert len(report.overall()) == 20
    assert report.corrections["Bonferroni"].m == 0
    assert all(v.rank_order_class.value == "MeetsDesirable" for v in report.overall())


def test_demo_family_of_twenty(demo_reports):
    report = demo_reports[0]["file_format_unstable"].report
    assert len(report.overall()) == 20
    assert report.corrections["Bonferroni"].m == 20
    assert report.corrections["Bonferroni"].corrected_alpha_summary == 0.0025


def test_demo_discontinuous_gaps(demo_reports):
    report = demo_reports[0]["discontinuous"].report
    expected = report.extra["ground_truth"]["expected_gaps"]
    control = report.diagnostics["runs/control.csv"]
    for trait, gaps in expected.items():
        (lo, hi), = gaps
        found = control[trait].gaps
        assert any(g_lo <= lo and g_hi >= hi for g_lo, g_hi in found)


def test_demo_linked_and_drifting(demo_reports):
    bundles, _ = demo_reports
    linked = bundles["linked"].report
    hits = linked.extra["ground_truth"]["linked_subjects"]
    # keys register while the linked profiles are scored; every later facet hits the table
    assert hits["source_context"] == 0 and hits["url_embedding"] == hits["rerun"] == 200
    by_cell = {(v.facet, v.trait): v.correlation.statistic for v in linked.overall()}
    assert by_cell[("file_format", "Dominance")] == 1.0
    assert by_cell[("rerun", "Dominance")] == by_cell[("source_context", "Dominance")] < 0.9
    drift = bundles["drifting"].report
    sig = {v.facet for v in drift.overall() if v.locational_significant_bonferroni}
    assert "algorithm_time" in sig and "file_format" not in sig


def test_demo_baseline(demo_reports):
    report = demo_reports[0]["baseline"].report
    assert all(abs(v.correlation.statistic) < 0.2 for v in report.overall())


def test_demo_cli_writes_inputs(tmp_path):
    assert main(["demo", "--scenario", "stable", "--seed", "3", "--out", str(tmp_path / "s")]) == 0
    cfg = tmp_path / "s" / "inputs" / "config.yaml"
    assert cfg.is_file()
    # the written inputs re-audit to the same machine report minus the demo metadata
    assert main(["audit", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    a = json.loads((tmp_path / "s" / "report.json").read_text())
    b = json.loads((tmp_path / "again" / "report.json").read_text())
    a.pop("ground_truth")
    assert a == b
    shutil.rmtree(tmp_path / "again")
