"""
Property Report Module
Checks each forward rate definition for universality, measurability and the
two replacement identities, and renders the comparison table
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from config import Config
from forward_rates import ForwardRateCurve, rates_for, statewise_rates, verify_replacement
from kolmogorov import TransitionCurve, mixture_curve
from model_graph import ModelGraph, TimeGrid, reachability
from rate_scenarios import IntensitySource
from utils import format_transition, max_abs


PROPERTIES = ["universal", "measurable", "replace_m0", "replace_m00"]

# Expected properties of each definition
REFERENCE_PATTERN = {
    "marginal": {"universal": True, "measurable": True, "replace_m0": False, "replace_m00": False},
    "equations": {"universal": False, "measurable": True, "replace_m0": True, "replace_m00": False},
    "statewise": {"universal": False, "measurable": False, "replace_m0": True, "replace_m00": True},
}


@dataclass
class DefinitionProperties:
    """Verdicts for one definition with the errors behind them"""

    definition: str
    errors: Dict[str, float]
    tolerance: float = Config.REPLACEMENT_TOLERANCE
    net_flux_error: float = 0.0
    notes: List[str] = field(default_factory=list)

    def passed(self, prop: str) -> bool:
        return self.errors[prop] <= self.tolerance

    def verdicts(self) -> Dict[str, bool]:
        return {prop: self.passed(prop) for prop in PROPERTIES}


@dataclass
class PropertyTable:
    """Property verdicts of all checked definitions, conditioning state included"""

    state: int
    rows: List[DefinitionProperties]

    def __getitem__(self, definition: str) -> DefinitionProperties:
        for row in self.rows:
            if row.definition == definition:
                return row
        raise KeyError(definition)

    def pattern(self) -> Dict[str, Dict[str, bool]]:
        return {row.definition: row.verdicts() for row in self.rows}

    def to_markdown(self) -> str:
        """Comparison table with check marks, then the errors behind each verdict"""
        report = f"""
##  Forward Rate Properties

**Conditioning state:** {self.state}

| Definition | Universal | Measurable | Replace m0 | Replace m00 |
|---|---|---|---|---|
"""
        for row in self.rows:
            marks = " | ".join("yes" if row.passed(p) else "no" for p in PROPERTIES)
            report += f"| {row.definition} | {marks} |\n"

        report += "\n### Max errors\n\n"
        report += "| Definition | Universal | Measurable | Replace m0 | Replace m00 | Net flux |\n"
        report += "|---|---|---|---|---|---|\n"
        for row in self.rows:
            errors = " | ".join(f"{row.errors[p]:.3e}" for p in PROPERTIES)
            report += f"| {row.definition} | {errors} | {row.net_flux_error:.3e} |\n"

        notes = [f"- {row.definition}: {note}" for row in self.rows for note in row.notes]
        if notes:
            report += "\n### Notes\n\n" + "\n".join(notes) + "\n"

        verdict = "matches" if matches_reference_pattern(self) else "differs from"
        report += f"\nPattern {verdict} the reference pattern.\n"
        return report


class PropertyChecker:
    """Runs the property checks for the requested definitions"""

    def __init__(self, tolerance: float = Config.REPLACEMENT_TOLERANCE, workers: Optional[int] = None):
        self.tolerance = tolerance
        self.workers = workers

    def check_definitions(
        self,
        source: IntensitySource,
        graph: ModelGraph,
        state: int,
        grid: TimeGrid,
        definitions: Optional[List[str]] = None,
        mixture: Optional[TransitionCurve] = None,
    ) -> PropertyTable:
        """
        Universality, measurability and both replacement identities per definition

        Args:
            source: scenario set or affine specification
            graph: model graph
            state: conditioning state for the replacement checks
            grid: grid anchored at the base time
            definitions: subset of Config.DEFINITIONS (default: all)
            mixture: precomputed full mixture curve

        Returns:
            PropertyTable
        """
        if mixture is None:
            mixture = mixture_curve(source, graph, grid, workers=self.workers)

        rows = []
        for definition in definitions or Config.DEFINITIONS:
            rates = rates_for(definition, source, graph, grid, state=state, mixture=mixture)
            replacement = verify_replacement(rates, mixture, state)

            errors = {
                "universal": self._universality_gap(definition, source, graph, grid, rates),
                "measurable": self._measurability_gap(definition, source, graph, grid, mixture),
                "replace_m0": replacement.occupancy_error,
                "replace_m00": replacement.density_error,
            }
            row = DefinitionProperties(definition, errors, self.tolerance, replacement.net_flux_error)
            if definition != "statewise":
                row.notes.append("carries no conditioning state, measurable by construction")
            undefined = rates.undefined_nodes()
            if undefined:
                pairs = ", ".join(format_transition(p) for p in sorted(undefined))
                row.notes.append(f"undefined where the occupancy vanishes: {pairs}")
            rows.append(row)

        return PropertyTable(state, rows)

    def _universality_gap(
        self,
        definition: str,
        source: IntensitySource,
        graph: ModelGraph,
        grid: TimeGrid,
        rates: ForwardRateCurve,
    ) -> float:
        """Largest change of any transition's rate when it stands alone in a two-state model"""
        isolated_graph = ModelGraph(2, frozenset({(0, 1)}))
        gaps = []
        for pair in rates.transitions:
            if pair not in graph.transitions:
                continue
            isolated = source.marginal_for(pair, as_pair=(0, 1))
            alone = rates_for(definition, isolated, isolated_graph, grid, state=0)
            gaps.append(max_abs(rates.rate(pair) - alone.rate((0, 1))))
        return max(gaps, default=0.0)

    def _measurability_gap(
        self,
        definition: str,
        source: IntensitySource,
        graph: ModelGraph,
        grid: TimeGrid,
        mixture: TransitionCurve,
    ) -> float:
        """Largest disagreement of statewise curves across conditioning states"""
        if definition != "statewise":
            return 0.0

        reach = reachability(graph)
        curves = {
            s: statewise_rates(source, graph, s, grid, mixture=mixture)
            for s in graph.transient_states()
        }
        gap = 0.0
        for pair in graph.sorted_transitions():
            holders = [s for s in curves if reach[s, pair[0]]]
            for a in holders:
                for b in holders:
                    if a < b:
                        gap = max(gap, max_abs(curves[a].rate(pair) - curves[b].rate(pair)))
        return gap


def check_definitions(
    source: IntensitySource,
    graph: ModelGraph,
    state: int,
    grid: TimeGrid,
    definitions: Optional[List[str]] = None,
    mixture: Optional[TransitionCurve] = None,
) -> PropertyTable:
    """Property table with the default tolerance"""
    return PropertyChecker().check_definitions(source, graph, state, grid, definitions, mixture)


def matches_reference_pattern(table: PropertyTable) -> bool:
    """True iff every checked definition has exactly its reference verdicts"""
    for row in table.rows:
        reference = REFERENCE_PATTERN.get(row.definition)
        if reference is None or row.verdicts() != reference:
            return False
    return True


def coincidence_report(curves: Dict[str, ForwardRateCurve]) -> Dict[str, float]:
    """Max pointwise gap between every pair of definitions on shared transitions"""
    names = sorted(curves)
    gaps = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = sorted(set(curves[a].transitions) & set(curves[b].transitions))
            gap = max((max_abs(curves[a].rate(p) - curves[b].rate(p)) for p in shared), default=0.0)
            gaps[f"{a} vs {b}"] = gap
    return gaps

