"""
Forward Rates Module
Marginal, forward-equations and state-wise forward transition rates,
replacement checks against oracle quantities, and the separate-absorbing-
state repair with payment rewriting
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import lstsq, solve_triangular

from config import Config
from kolmogorov import (
    TransitionCurve,
    _grid_from_nodes,
    mixture_curve,
    mixture_densities,
    solve_forward,
)
from model_graph import GraphError, ModelGraph, PaymentSpec, TimeGrid, check_decrement, reachability
from rate_scenarios import (
    IntensitySource,
    PosteriorWeights,
    ScenarioSet,
    survival_transform,
    weighted_terminal_transform,
)
from time_functions import SumFunction, TimeFunction
from utils import SolverError, Transition, format_transition, parse_transition


class SingularSystemError(SolverError):
    """Triangular forward-equations system has a vanishing diagonal"""


class RepairError(ValueError):
    """Repair construction is not applicable to the model"""


@dataclass
class ForwardRateCurve:
    """m_jk(t, T) on a grid for one definition"""

    definition: str
    grid: TimeGrid
    values: np.ndarray
    transitions: List[Transition]
    state: Optional[int] = None
    residual: Optional[np.ndarray] = None

    @property
    def t(self) -> float:
        return self.grid.t0

    def rate(self, pair: Transition) -> np.ndarray:
        return self.values[pair[0], pair[1]]

    def undefined_nodes(self) -> Dict[Transition, np.ndarray]:
        """Nodes with no value, per transition (state-wise gaps)"""
        return {
            pair: np.flatnonzero(np.isnan(self.rate(pair)))
            for pair in self.transitions
            if np.isnan(self.rate(pair)).any()
        }

    def label(self) -> str:
        return self.definition if self.state is None else f"{self.definition}-state{self.state}"

    def to_frame(self) -> pd.DataFrame:
        data = {"T": self.grid.nodes}
        for pair in self.transitions:
            data[f"m_{pair[0]}_{pair[1]}"] = self.rate(pair)
        if self.residual is not None:
            data["residual"] = self.residual
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, definition: str = "unknown") -> "ForwardRateCurve":
        grid = _grid_from_nodes(frame["T"].to_numpy())
        columns = [c for c in frame.columns if c.startswith("m_")]
        pairs = [parse_transition(c[2:].replace("_", "-")) for c in columns]
        n = max(max(p) for p in pairs) + 1
        values = np.zeros((n, n, len(frame)))
        for pair, column in zip(pairs, columns):
            values[pair] = frame[column].to_numpy()
        residual = frame["residual"].to_numpy() if "residual" in frame.columns else None
        return cls(definition, grid, values, pairs, residual=residual)


def _source_at(source: IntensitySource, posterior: Optional[PosteriorWeights]) -> IntensitySource:
    if posterior is not None and isinstance(source, ScenarioSet):
        return source.conditioned(posterior)
    return source


def marginal_rates(
    source: IntensitySource,
    graph: ModelGraph,
    grid: TimeGrid,
    posterior: Optional[PosteriorWeights] = None,
) -> ForwardRateCurve:
    """
    Per-transition log-derivative of the single-transition survival transform

    Args:
        source: scenario set or affine specification
        graph: model graph (fixes the transitions)
        grid: grid anchored at the base time
        posterior: optional posterior weights for a scenario set

    Returns:
        ForwardRateCurve tagged 'marginal'
    """
    source = _source_at(source, posterior)
    n = graph.num_states
    values = np.zeros((n, n, len(grid)))

    for pair in graph.sorted_transitions():
        numerator = weighted_terminal_transform(source, [pair], pair, grid.t0, grid.nodes, grid.step)
        denominator = survival_transform(source, [pair], grid.t0, grid.nodes, grid.step)
        values[pair] = numerator / denominator

    return ForwardRateCurve("marginal", grid, values, graph.sorted_transitions())


def _equation_pairs(n: int) -> List[Transition]:
    return [(j, k) for j in range(n) for k in range(n) if j != k]


def _coefficients(P: np.ndarray, equations: Sequence[Transition], unknowns: Sequence[Transition]) -> np.ndarray:
    """
    Linear map from rates to d/dT P_jk for the listed equations

    Coefficient of m_ab in the equation for (j, k) is
    1(b=k) P_ja - 1(a=k) P_jk.
    """
    eq = np.asarray(equations)
    un = np.asarray(unknowns)
    J, K = eq[:, 0][:, None], eq[:, 1][:, None]
    A, B = un[:, 0][None, :], un[:, 1][None, :]
    return (B == K) * P[J, A] - (A == K) * P[J, K]


def _residual(P: np.ndarray, dP: np.ndarray, rates: np.ndarray) -> float:
    gen = rates.copy()
    idx = np.arange(gen.shape[0])
    gen[idx, idx] = 0.0
    gen[idx, idx] = -gen.sum(axis=1)
    return float(np.max(np.abs(dP - P @ gen)))


def equations_rates(
    mixture: TransitionCurve,
    graph: ModelGraph,
    method: str = "auto",
) -> ForwardRateCurve:
    """
    Rates that make the mixture curve solve the forward equations, row by row

    Decrement models use back substitution on the upper-triangular system in
    topological order; other models use least squares over all pairs.

    Args:
        mixture: mixture curve with its exact derivative
        graph: model graph
        method: 'auto', 'triangular' or 'lstsq'

    Returns:
        ForwardRateCurve tagged 'equations' with per-node residuals

    Raises:
        SingularSystemError: a diagonal occupancy falls below the floor
        GraphError: 'triangular' requested on a model with cycles
    """
    if mixture.derivative is None:
        raise ValueError("Forward equations rates need the mixture derivative")

    n = graph.num_states
    check = check_decrement(graph)
    if method == "auto":
        method = "triangular" if check.is_decrement else "lstsq"
    if method == "triangular" and not check.is_decrement:
        raise GraphError("Triangular solve requires a decrement model")

    if method == "triangular":
        order = check.ordering
        unknowns = [(order[p], order[q]) for p in range(n) for q in range(p + 1, n)]
    else:
        unknowns = _equation_pairs(n)

    nodes = len(mixture.grid)
    values = np.zeros((n, n, nodes))
    residual = np.zeros(nodes)

    for t_idx in range(nodes):
        P = mixture.matrices[t_idx]
        dP = mixture.derivative[t_idx]

        if method == "triangular":
            A = _coefficients(P, unknowns, unknowns)
            diagonal = np.diag(A)
            if np.min(diagonal) < Config.DIAGONAL_FLOOR:
                where = unknowns[int(np.argmin(diagonal))]
                raise SingularSystemError(
                    f"Occupancy P_{where[0]}{where[0]} = {np.min(diagonal):.3g} at T={mixture.grid.nodes[t_idx]:.6g}"
                )
            rhs = np.array([dP[j, k] for j, k in unknowns])
            solution = solve_triangular(A, rhs, lower=False)
        else:
            A = _coefficients(P, unknowns, unknowns)
            rhs = np.array([dP[j, k] for j, k in unknowns])
            solution = lstsq(A, rhs)[0]

        for (j, k), m in zip(unknowns, solution):
            values[j, k, t_idx] = m
        residual[t_idx] = _residual(P, dP, values[:, :, t_idx])

    reach = reachability(graph)
    reported = [pair for pair in unknowns if reach[pair]]
    return ForwardRateCurve("equations", mixture.grid, values, sorted(reported), residual=residual)


def statewise_rates(
    source: Optional[IntensitySource],
    graph: ModelGraph,
    state: int,
    grid: TimeGrid,
    posterior: Optional[PosteriorWeights] = None,
    mixture: Optional[TransitionCurve] = None,
) -> ForwardRateCurve:
    """
    E[1(X_T=k) mu_kl(T) | X_t=state] / E[1(X_T=k) | X_t=state]

    Nodes whose denominator is at most the occupancy floor are stored as NaN.

    Args:
        source: scenario set or affine specification (unused when a
            mixture curve conditioned on the same information is passed)
        graph: model graph
        state: conditioning state X_t
        grid: grid anchored at the base time
        posterior: optional posterior weights for a scenario set
        mixture: precomputed mixture curve

    Returns:
        ForwardRateCurve tagged 'statewise' carrying the conditioning state
    """
    if mixture is None:
        mixture = mixture_curve(source, graph, grid, posterior, start=state)

    occupancy = mixture.occupancy(state).T
    densities = mixture_densities(mixture, state)
    defined = occupancy > Config.OCCUPANCY_FLOOR

    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(defined[:, None, :], densities / occupancy[:, None, :], np.nan)
    values = np.where(graph.adjacency()[:, :, None], values, 0.0)

    return ForwardRateCurve("statewise", mixture.grid, values, graph.sorted_transitions(), state=state)


@dataclass
class ReplacementReport:
    """Outcome of re-solving the Markov system with candidate rates"""

    definition: str
    state: int
    occupancy_error: float
    density_error: float
    net_flux_error: float
    tolerance: float = Config.REPLACEMENT_TOLERANCE
    occupancy_pass: bool = field(init=False)
    density_pass: bool = field(init=False)
    net_flux_pass: bool = field(init=False)

    def __post_init__(self):
        self.occupancy_pass = self.occupancy_error <= self.tolerance
        self.density_pass = self.density_error <= self.tolerance
        self.net_flux_pass = self.net_flux_error <= self.tolerance

    def describe(self) -> Dict[str, Any]:
        return {
            "definition": self.definition,
            "state": self.state,
            "occupancy_error": self.occupancy_error,
            "density_error": self.density_error,
            "net_flux_error": self.net_flux_error,
            "occupancy_pass": self.occupancy_pass,
            "density_pass": self.density_pass,
            "net_flux_pass": self.net_flux_pass,
        }


def verify_replacement(
    rates: ForwardRateCurve,
    mixture: TransitionCurve,
    state: int,
) -> ReplacementReport:
    """
    Check occupancy and density replacement for candidate rates

    Args:
        rates: candidate forward rate curve
        mixture: oracle mixture curve on the same grid (components kept)
        state: conditioning state

    Returns:
        ReplacementReport with max abs errors for occupancy, products P m
        against oracle densities, and the net in-minus-out flux per state
    """
    mixture.grid.require_match(rates.grid, "rates and oracle")
    curve = solve_forward(rates, rates.grid)
    occupancy = curve.occupancy(state).T
    oracle_occupancy = mixture.occupancy(state).T

    m = np.nan_to_num(rates.values, nan=0.0)
    n = m.shape[0]
    m[np.arange(n), np.arange(n)] = 0.0
    products = occupancy[:, None, :] * m
    oracle = mixture_densities(mixture, state)

    flux = products.sum(axis=0) - products.sum(axis=1)
    oracle_flux = oracle.sum(axis=0) - oracle.sum(axis=1)

    return ReplacementReport(
        rates.definition,
        state,
        float(np.max(np.abs(occupancy - oracle_occupancy))),
        float(np.max(np.abs(products - oracle))),
        float(np.max(np.abs(flux - oracle_flux))),
    )


@dataclass(frozen=True)
class RankDiagnostic:
    """Size and rank of the single-initial-state forward system"""

    state: int
    equations: int
    unknowns: int
    rank: int

    @property
    def deficiency(self) -> int:
        return self.unknowns - self.rank


def single_state_rank_diagnostic(mixture: TransitionCurve, state: int, node: int = -1) -> RankDiagnostic:
    """
    Rank of the forward system written for one initial state only

    Only the row of the conditioning state enters, so the system has one
    equation per other state against one unknown per ordered pair; it never
    determines the rates and is reported, not solved.
    """
    n = mixture.num_states
    P = mixture.matrices[node]
    equations = [(state, k) for k in range(n) if k != state]
    unknowns = _equation_pairs(n)
    A = _coefficients(P, equations, unknowns)
    return RankDiagnostic(state, len(equations), len(unknowns), int(np.linalg.matrix_rank(A)))


def calibration_quantities(
    definition: str,
    source: IntensitySource,
    graph: ModelGraph,
    state: int,
    grid: TimeGrid,
    posterior: Optional[PosteriorWeights] = None,
    mixture: Optional[TransitionCurve] = None,
) -> pd.DataFrame:
    """
    Curves each definition is calibrated from

    marginal: single-transition survival transforms; equations: the full
    mixture curve; statewise: occupancy and transition densities from the
    conditioning state.
    """
    data: Dict[str, np.ndarray] = {"T": grid.nodes}

    if definition == "marginal":
        src = _source_at(source, posterior)
        for pair in graph.sorted_transitions():
            data[f"survival_{pair[0]}_{pair[1]}"] = survival_transform(src, [pair], grid.t0, grid.nodes, grid.step)
        return pd.DataFrame(data)

    if mixture is None:
        mixture = mixture_curve(source, graph, grid, posterior, start=state if definition == "statewise" else None)

    if definition == "equations":
        for j in range(graph.num_states):
            for k in range(graph.num_states):
                data[f"P_{j}_{k}"] = mixture.matrices[:, j, k]
        return pd.DataFrame(data)

    if definition == "statewise":
        occupancy = mixture.occupancy(state)
        densities = mixture_densities(mixture, state)
        for k in range(graph.num_states):
            data[f"occupancy_{k}"] = occupancy[:, k]
        for pair in graph.sorted_transitions():
            data[f"density_{pair[0]}_{pair[1]}"] = densities[pair]
        return pd.DataFrame(data)

    raise ValueError(f"Unknown definition '{definition}'")


def rates_for(
    definition: str,
    source: IntensitySource,
    graph: ModelGraph,
    grid: TimeGrid,
    state: int = 0,
    posterior: Optional[PosteriorWeights] = None,
    mixture: Optional[TransitionCurve] = None,
) -> ForwardRateCurve:
    """Dispatch to the requested definition"""
    if definition == "marginal":
        return marginal_rates(source, graph, grid, posterior)
    if definition == "equations":
        if mixture is None:
            mixture = mixture_curve(source, graph, grid, posterior)
        return equations_rates(mixture, graph)
    if definition == "statewise":
        return statewise_rates(source, graph, state, grid, posterior, mixture)
    raise ValueError(f"Unknown definition '{definition}' (expected one of {', '.join(Config.DEFINITIONS)})")


@dataclass
class RepairedModel:
    """Model with absorbing states split by route of entry"""

    original: ModelGraph
    augmented: ModelGraph
    state_map: Tuple[int, ...]
    edge_map: Dict[Transition, Transition]
    payments: PaymentSpec
    induced: List[Transition]

    def remap_source(self, source: IntensitySource) -> IntensitySource:
        """Intensities of the original model carried onto the augmented edges"""
        return source.remap(self.edge_map)

    def describe(self) -> Dict[str, Any]:
        return {
            "original": self.original.describe(),
            "augmented": self.augmented.describe(),
            "state_map": list(self.state_map),
            "edge_map": {format_transition(k): format_transition(v) for k, v in sorted(self.edge_map.items())},
            "induced_transitions": [format_transition(p) for p in self.induced],
            "payments": self.payments.describe(),
        }


def repair_model(
    graph: ModelGraph,
    payments: PaymentSpec,
    split: Optional[Sequence[int]] = None,
) -> RepairedModel:
    """
    Give every route into a shared absorbing state its own copy of that state

    The largest predecessor keeps the original index; copies for the other
    predecessors are appended in ascending predecessor order. Transition
    payments are rewritten so that every augmented pair (a, b) reachable in
    the repaired model pays the sum of the original payments along its route.

    Args:
        graph: original model
        payments: original payments
        split: absorbing states to split (default: all absorbing states with
            more than one predecessor)

    Returns:
        RepairedModel

    Raises:
        RepairError: a split target is not absorbing, or routes in the
            repaired model are not unique
    """
    absorbing = set(graph.absorbing_states())
    if split is None:
        split = [s for s in sorted(absorbing) if graph.in_degree(s) > 1]
    for target in split:
        if target not in absorbing:
            raise RepairError(f"State {target} ({graph.labels[target]}) is not absorbing and cannot be split")

    state_map = list(range(graph.num_states))
    labels = list(graph.labels)
    redirect: Dict[Transition, int] = {}

    for target in sorted(split):
        for pred in graph.predecessors(target)[:-1]:
            redirect[(pred, target)] = len(state_map)
            state_map.append(target)
            labels.append(f"{graph.labels[target]} via {graph.labels[pred]}")

    edge_map: Dict[Transition, Transition] = {}
    for j, k in graph.transitions:
        edge_map[(j, redirect.get((j, k), k))] = (j, k)

    augmented = ModelGraph(len(state_map), frozenset(edge_map), tuple(labels))

    parents: Dict[int, int] = {}
    for j, k in augmented.transitions:
        if k in parents:
            raise RepairError(
                f"State {k} ({augmented.labels[k]}) is entered from several states; routes are not unique"
            )
        parents[k] = j

    reach = reachability(augmented)
    induced = [
        (a, b) for a in range(augmented.num_states) for b in range(augmented.num_states)
        if a != b and reach[a, b] and (a, b) not in augmented.transitions
    ]

    rewritten: Dict[Transition, TimeFunction] = {}
    for a, b in sorted(augmented.transitions) + induced:
        route = []
        node = b
        while node != a:
            route.append(edge_map[(parents[node], node)])
            node = parents[node]
        terms = [payments.transition[edge] for edge in reversed(route) if edge in payments.transition]
        if terms:
            rewritten[(a, b)] = terms[0] if len(terms) == 1 else SumFunction(terms)

    sojourn = {k: payments.sojourn[state_map[k]] for k in range(len(state_map)) if state_map[k] in payments.sojourn}
    return RepairedModel(
        graph,
        augmented,
        tuple(state_map),
        edge_map,
        PaymentSpec(sojourn, rewritten),
        sorted(induced),
    )
