import csv
import json

from slidedx.evaluation import Harness, build_report, load_cases, run_ablation
from slidedx.report import (
    text_table,
    write_ablation_report,
    write_grid_figure,
    write_metrics_report,
)


def test_text_table_alignment():
    table = text_table(["metric", "value"], [["balanced_accuracy", "0.9000"],
                                             ["n", "10"]])
    lines = table.splitlines()
    assert lines[0].startswith("metric")
    assert set(lines[1]) <= {"-", " "}
    assert all(len(l) <= len(lines[0]) + 20 for l in lines)


def test_write_metrics_report(workspace, corpus, toolkits, tmp_path):
    harness = Harness(corpus, toolkits)
    cases = [c for c in load_cases(workspace / "cases") if c.protocol == "es"][:4]
    report = build_report(harness.run_protocol(cases, "es"), "es")
    paths = write_metrics_report(report, tmp_path / "out" / "report")
    assert paths["json"].is_file() and paths["csv"].is_file() and paths["txt"].is_file()
    doc = json.loads(paths["json"].read_text())
    assert doc["schema_version"] == 1 and doc["kind"] == "metrics"
    with open(paths["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "value"]
    assert any(r[0] == "balanced_accuracy" for r in rows)
    assert paths["figure"].is_file() and paths["figure"].stat().st_size > 0


def test_write_ablation_report(workspace, corpus, toolkits, tmp_path):
    harness = Harness(corpus, toolkits)
    cases = [c for c in load_cases(workspace / "cases")
             if c.case_id.startswith("renal-")]
    rows = run_ablation("evidence_sources", None, cases, harness)
    paths = write_ablation_report("evidence_sources", rows, tmp_path / "ablation")
    doc = json.loads(paths["json"].read_text())
    assert len(doc["rows"]) == 4
    table = paths["txt"].read_text()
    assert "further_look" in table and "further_test" in table
    assert len(table.splitlines()) == 6  # header + rule + 4 rows
    assert paths["figure"].is_file()


def test_write_metrics_report_no_figures(workspace, corpus, toolkits, tmp_path):
    harness = Harness(corpus, toolkits)
    cases = [c for c in load_cases(workspace / "cases") if c.protocol == "op"]
    report = build_report(harness.run_protocol(cases, "op"), "op")
    paths = write_metrics_report(report, tmp_path / "op-report", figures=False)
    assert "figure" not in paths


def test_grid_figure(tmp_path):
    grid = {(x, y): ("tumor" if x < 3 else "normal") for x in range(6) for y in range(4)}
    path = write_grid_figure(grid, tmp_path / "grid.png", title="labels")
    assert path.is_file() and path.stat().st_size > 0
