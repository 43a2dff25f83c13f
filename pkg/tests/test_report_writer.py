"""Tests for output files"""

import yaml

from forward_rates import marginal_rates, repair_model
from kolmogorov import mixture_curve, oracle_cash_flow
from mc_oracle import EstimateTable
from property_report import check_definitions
from report_writer import ReportWriter


def test_rates_file_name_and_format(tmp_path, survival_mixture, survival_graph, grid_1y):
    writer = ReportWriter(tmp_path)
    path = writer.write_rates(marginal_rates(survival_mixture, survival_graph, grid_1y))
    assert path.name == "rates_marginal.csv"
    content = path.read_bytes()
    assert content.startswith(b"T,m_0_1\n")
    assert b"\r\n" not in content


def test_rates_are_byte_identical(tmp_path, survival_mixture, survival_graph, grid_1y):
    first = ReportWriter(tmp_path / "a").write_rates(marginal_rates(survival_mixture, survival_graph, grid_1y))
    second = ReportWriter(tmp_path / "b").write_rates(marginal_rates(survival_mixture, survival_graph, grid_1y))
    assert first.read_bytes() == second.read_bytes()


def test_cash_flow(tmp_path, disability_graph, dependent_disability, disability_payments, grid_1y):
    cash_flow = oracle_cash_flow(dependent_disability, disability_graph, disability_payments, 0, grid_1y)
    path = ReportWriter(tmp_path).write_cash_flow(cash_flow, "cashflow_oracle.csv")
    header = path.read_text().splitlines()[0]
    assert header == "T,A,dA,A_0,A_1,A_2"


def test_estimates(tmp_path):
    table = EstimateTable.from_dict({"rows": [["occupancy[0]@1", 0.82, 0.004, 100]]})
    path = ReportWriter(tmp_path).write_estimates(table)
    assert path.read_text() == "target,estimate,SE,N\noccupancy[0]@1,0.82,0.004,100\n"


def test_property_report(tmp_path, dependent_disability, disability_graph, grid_1y):
    mixture = mixture_curve(dependent_disability, disability_graph, grid_1y)
    table = check_definitions(dependent_disability, disability_graph, 1, grid_1y, ["equations"], mixture)
    path = ReportWriter(tmp_path).write_property_report(table)
    assert path.name == "verify_state1.md"
    assert path.read_text().startswith("# Forward Rate Verification\n")


def test_comparison_and_summary(tmp_path):
    writer = ReportWriter(tmp_path)
    compare = writer.write_comparison({"equations vs marginal": 0.0123}, {"A oracle": 0.5})
    assert "| equations vs marginal | 1.230e-02 |" in compare.read_text()
    summary = writer.write_summary("cashflow", {"A oracle": 0.5, "states": 3})
    assert summary.name == "cashflow_summary.md"
    assert "- **A oracle:** 0.5\n" in summary.read_text()


def test_repaired_model(tmp_path, disability_graph, disability_payments):
    path = ReportWriter(tmp_path).write_repaired_model(repair_model(disability_graph, disability_payments))
    data = yaml.safe_load(path.read_text())
    assert data["augmented"]["transitions"] == ["0-1", "0-3", "1-2"]
    assert data["payments"]["transition"]["0-2"]["type"] == "sum"


def test_print_summary(tmp_path, capsys):
    writer = ReportWriter(tmp_path)
    path = writer.write_summary("run", {"x": 1.0})
    writer.print_summary({"summary": path})
    assert "run_summary.md" in capsys.readouterr().out
