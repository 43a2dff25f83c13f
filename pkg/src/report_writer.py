"""
Report Writer Module
Writes curves, cash flows, estimate tables and reports into the output
directory under deterministic file names
"""

from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import yaml

from config import Config
from forward_rates import ForwardRateCurve, RepairedModel
from kolmogorov import CashFlow, TransitionCurve, write_curve_csv
from mc_oracle import EstimateTable
from property_report import PropertyTable


class ReportWriter:
    """Output files for one run; identical inputs give byte-identical files"""

    def __init__(self, output_dir: Optional[Path] = None):
        self.output_dir = Path(output_dir or Config.OUTPUT_DIR)
        self.output_dir.mkdir(exist_ok=True, parents=True)

    def _table(self, frame: pd.DataFrame, filename: str) -> Path:
        path = self.output_dir / filename
        frame.to_csv(
            path,
            index=False,
            float_format=f"%.{Config.CURVE_DIGITS}g",
            lineterminator="\n",
            encoding="utf-8",
        )
        return path

    def _text(self, content: str, filename: str) -> Path:
        path = self.output_dir / filename
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(content)
        return path

    def write_rates(self, curve: ForwardRateCurve) -> Path:
        return write_curve_csv(curve, self.output_dir / f"rates_{curve.label()}.csv")

    def write_transition_curve(self, curve: TransitionCurve, filename: str = "transition_curve.csv") -> Path:
        return write_curve_csv(curve, self.output_dir / filename)

    def write_cash_flow(self, cash_flow: CashFlow, filename: str = "cashflow.csv") -> Path:
        return self._table(cash_flow.to_frame(), filename)

    def write_estimates(self, table: EstimateTable, filename: str = "estimates.csv") -> Path:
        return self._table(table.to_frame(), filename)

    def write_frame(self, frame: pd.DataFrame, filename: str) -> Path:
        return self._table(frame, filename)

    def write_property_report(self, table: PropertyTable, title: str = "Forward Rate Verification") -> Path:
        content = f"# {title}\n" + table.to_markdown()
        return self._text(content, f"verify_state{table.state}.md")

    def write_comparison(self, gaps: Dict[str, float], values: Dict[str, float], title: str = "Definition Comparison") -> Path:
        """Pairwise max gaps between definitions and the value each definition gives"""
        doc = f"# {title}\n\n## Max pointwise gaps\n\n| Pair | Max gap |\n|---|---|\n"
        for pair, gap in gaps.items():
            doc += f"| {pair} | {gap:.3e} |\n"
        if values:
            doc += "\n## Values\n\n| Quantity | Value |\n|---|---|\n"
            for name, value in values.items():
                doc += f"| {name} | {value:.15g} |\n"
        return self._text(doc, "compare.md")

    def write_summary(self, name: str, entries: Dict[str, Any]) -> Path:
        """Key-value summary rendered as a markdown list"""
        doc = f"# {name.title()} Summary\n\n"
        for key, value in entries.items():
            text = f"{value:.15g}" if isinstance(value, float) else str(value)
            doc += f"- **{key}:** {text}\n"
        return self._text(doc, f"{name}_summary.md")

    def write_repaired_model(self, repaired: RepairedModel) -> Path:
        content = yaml.safe_dump(repaired.describe(), sort_keys=True, default_flow_style=False)
        return self._text(content, "repaired_model.yaml")

    def print_summary(self, output_files: Dict[str, Path]):
        """Print generated files"""
        print("\n Output files\n")
        print("=" * 60)

        for name, path in output_files.items():
            size = path.stat().st_size
            print(f" {name:16} -> {path}")
            print(f"   Size: {size:,} bytes")

        print("=" * 60)
