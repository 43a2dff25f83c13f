"""
Kolmogorov Module
Forward equations for deterministic rate matrices, scenario mixtures of
their solutions, and valuation of expected accumulated cash flows
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from config import Config
from model_graph import GridMismatchError, ModelGraph, PaymentSpec, TimeGrid, generator_from_rates
from rate_scenarios import AffineSpec, IntensityPath, IntensitySource, PosteriorWeights, ScenarioSet
from time_functions import TimeFunction
from utils import SolverError, cumulative_integral, rk4_solve

RateFunction = Callable[[float], np.ndarray]
StartState = Union[int, Sequence[float], np.ndarray]


@dataclass
class TransitionCurve:
    """
    Transition probability matrices P(t, T) for every node T of a grid

    `kind` is 'markov' for a single deterministic solve and 'mixture' for
    a weighted combination; mixtures keep their components, weights and the
    component intensities so that conditional densities stay computable.
    """

    grid: TimeGrid
    matrices: np.ndarray
    kind: str = "markov"
    derivative: Optional[np.ndarray] = None
    components: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    intensities: Optional[np.ndarray] = None

    @property
    def num_states(self) -> int:
        return self.matrices.shape[1]

    def at(self, T: float) -> np.ndarray:
        return self.matrices[self.grid.index_of(T)]

    def occupancy(self, start: StartState) -> np.ndarray:
        """Occupancy probabilities from a start distribution, shape (nodes, states)"""
        return np.einsum("j,tjk->tk", start_distribution(start, self.num_states), self.matrices)

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.matrices.sum(axis=2) - 1.0)))

    def to_frame(self) -> pd.DataFrame:
        n = self.num_states
        data = {"T": self.grid.nodes}
        for j in range(n):
            for k in range(n):
                data[f"P_{j}_{k}"] = self.matrices[:, j, k]
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TransitionCurve":
        columns = [c for c in frame.columns if c.startswith("P_")]
        n = int(round(np.sqrt(len(columns))))
        matrices = frame[columns].to_numpy().reshape(len(frame), n, n)
        return cls(_grid_from_nodes(frame["T"].to_numpy()), matrices)


@dataclass
class CashFlow:
    """Expected accumulated cash flow A(t, T) on a grid"""

    grid: TimeGrid
    accumulated: np.ndarray
    rate: np.ndarray
    per_state: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return float(self.accumulated[-1])

    def to_frame(self) -> pd.DataFrame:
        data = {"T": self.grid.nodes, "A": self.accumulated, "dA": self.rate}
        if self.per_state is not None:
            for k, values in enumerate(self.per_state):
                data[f"A_{k}"] = values
        return pd.DataFrame(data)


class TabulatedRates:
    """Rate matrices known on nodes; natural cubic spline in between"""

    def __init__(self, nodes: np.ndarray, tensor: np.ndarray):
        filled = _fill_gaps(nodes, np.asarray(tensor, dtype=float))
        self._spline = CubicSpline(nodes, np.moveaxis(filled, -1, 0), axis=0, bc_type="natural")

    def __call__(self, s: float) -> np.ndarray:
        return self._spline(s)


def _fill_gaps(nodes: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """Replace undefined (NaN) values by interpolation along the node axis"""
    if not np.isnan(tensor).any():
        return tensor

    filled = tensor.copy()
    for idx in np.ndindex(tensor.shape[:-1]):
        series = tensor[idx]
        valid = ~np.isnan(series)
        if not valid.any():
            filled[idx] = 0.0
        elif not valid.all():
            filled[idx] = np.interp(nodes, nodes[valid], series[valid])
    return filled


def _grid_from_nodes(nodes: np.ndarray) -> TimeGrid:
    step = float(nodes[1] - nodes[0]) if len(nodes) > 1 else Config.DEFAULT_STEP
    return TimeGrid(float(nodes[0]), float(nodes[-1]), step)


def start_distribution(start: StartState, num_states: int) -> np.ndarray:
    """Point mass for an integer state, otherwise a validated distribution"""
    if isinstance(start, (int, np.integer)):
        if not 0 <= start < num_states:
            raise ValueError(f"Start state {start} out of range 0..{num_states - 1}")
        pi = np.zeros(num_states)
        pi[start] = 1.0
        return pi

    pi = np.asarray(start, dtype=float)
    if pi.shape != (num_states,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > Config.ROW_SUM_TOLERANCE:
        raise ValueError("Start distribution must be a probability vector over the states")
    return pi


def path_rates(path: IntensityPath, num_states: int) -> RateFunction:
    """Rate matrix of a deterministic intensity path at time s"""

    def rates(s: float) -> np.ndarray:
        out = np.zeros((num_states, num_states))
        for (j, k), fn in path.rates.items():
            out[j, k] = fn(s)
        return out

    return rates


def rate_function(rates: Any, grid: TimeGrid, num_states: Optional[int] = None) -> RateFunction:
    """
    Normalize the accepted rate inputs to a callable s -> rate matrix

    Args:
        rates: callable, IntensityPath, tensor (states, states, nodes) on the
            grid, or a curve object carrying `values` and `grid`
        grid: grid the solve runs on
        num_states: required for IntensityPath inputs

    Returns:
        Callable returning the (states, states) off-diagonal rates at s
    """
    if isinstance(rates, IntensityPath):
        if num_states is None:
            raise ValueError("num_states is required to evaluate an intensity path")
        return path_rates(rates, num_states)

    if hasattr(rates, "values") and hasattr(rates, "grid"):
        grid.require_match(rates.grid, "rates and solve")
        return TabulatedRates(grid.nodes, rates.values)

    if isinstance(rates, np.ndarray):
        if rates.shape[-1] != len(grid):
            raise GridMismatchError(f"Rate tensor has {rates.shape[-1]} nodes, grid has {len(grid)}")
        return TabulatedRates(grid.nodes, rates)

    if callable(rates):
        return rates

    raise TypeError(f"Unsupported rate input {type(rates).__name__}")


def solve_forward(rates: Any, grid: TimeGrid, num_states: Optional[int] = None) -> TransitionCurve:
    """
    Solve dP(t,T)/dT = P(t,T) Lambda(T), P(t,t) = I by fixed-step RK4

    Args:
        rates: anything rate_function accepts; negative rates are allowed
        grid: grid anchored at the base time t
        num_states: number of states (for IntensityPath inputs)

    Returns:
        TransitionCurve of kind 'markov'

    Raises:
        SolverError: on a non-finite rate or solution
    """
    rate_fn = rate_function(rates, grid, num_states)
    n = rate_fn(grid.t0).shape[0]

    def derivative(s: float, P: np.ndarray) -> np.ndarray:
        gen = generator_from_rates(rate_fn(s))
        if not np.all(np.isfinite(gen)):
            raise SolverError(f"Non-finite transition rate at time {s:.6g}")
        return P @ gen

    matrices = rk4_solve(derivative, np.eye(n), grid.nodes)
    return TransitionCurve(grid, matrices, "markov")


def _solve_scenarios(scenarios: ScenarioSet, graph: ModelGraph, grid: TimeGrid, workers: int) -> List[np.ndarray]:
    def solve(path: IntensityPath) -> np.ndarray:
        return solve_forward(path, grid, graph.num_states).matrices

    if workers <= 1 or len(scenarios) == 1:
        return [solve(path) for path in scenarios.scenarios]

    # map keeps input order, so the weighted sum below is order-stable
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(solve, scenarios.scenarios))


def mixture_curve(
    source: IntensitySource,
    graph: ModelGraph,
    grid: TimeGrid,
    posterior: Optional[PosteriorWeights] = None,
    workers: Optional[int] = None,
    start: Optional[int] = None,
) -> TransitionCurve:
    """
    Conditional expected transition matrices and their exact T-derivative

    Args:
        source: scenario set (weights = law given information at t) or
            affine specification
        graph: model graph
        grid: grid anchored at the conditioning time
        posterior: optional posterior weights replacing the set's weights
        workers: threads for the per-scenario solves (default Config.WORKERS)
        start: for affine sources, only the rows reachable from this state
            need the common-exit structure

    Returns:
        TransitionCurve of kind 'mixture' with `derivative` filled in
    """
    if isinstance(source, AffineSpec):
        return _affine_mixture(source, graph, grid, start)

    if posterior is not None:
        if abs(posterior.t - grid.t0) > 1e-9:
            raise GridMismatchError(f"Posterior at time {posterior.t} but grid starts at {grid.t0}")
        source = source.conditioned(posterior)

    components = np.stack(_solve_scenarios(source, graph, grid, workers or Config.WORKERS))
    mask = graph.adjacency()[None, :, :, None]
    intensities = np.stack([path.tensor(grid, graph.num_states) for path in source.scenarios]) * mask

    weights = source.weights
    matrices = np.einsum("i,itjk->tjk", weights, components)
    derivative = _mixture_derivative(weights, components, np.stack([graph.generator(x) for x in intensities]))
    return TransitionCurve(grid, matrices, "mixture", derivative, components, weights, intensities)


def _mixture_derivative(weights: np.ndarray, components: np.ndarray, generators: np.ndarray) -> np.ndarray:
    """sum_i w_i P_i(t,T) Lambda_i(T) from per-scenario generators (i, j, k, nodes)"""
    return np.einsum("i,itjl,ilkt->tjk", weights, components, generators)


def _affine_mixture(spec: AffineSpec, graph: ModelGraph, grid: TimeGrid, start: Optional[int]) -> TransitionCurve:
    # Effective rates are needed at the RK4 half steps too
    fine = grid.halved()
    fine_rates = spec.effective_rates(graph, grid.t0, fine.nodes, start, fine.step)
    curve = solve_forward(TabulatedRates(fine.nodes, fine_rates), grid, graph.num_states)

    rates = fine_rates[:, :, ::2]
    components = curve.matrices[None]
    intensities = rates[None]
    weights = np.ones(1)
    derivative = _mixture_derivative(weights, components, np.stack([graph.generator(x) for x in intensities]))
    return TransitionCurve(grid, curve.matrices, "mixture", derivative, components, weights, intensities)


def mixture_densities(curve: TransitionCurve, start: StartState) -> np.ndarray:
    """
    E[1(X_T=k) mu_kl(T) | X_t ~ start] from a mixture curve

    Returns:
        Tensor (states, states, nodes)
    """
    pi = start_distribution(start, curve.num_states)
    occupancy = np.einsum("j,itjk->ikt", pi, curve.components)
    return np.einsum("i,ikt,iklt->klt", curve.weights, occupancy, curve.intensities)


def transition_densities(
    source: IntensitySource,
    graph: ModelGraph,
    grid: TimeGrid,
    start: StartState,
    posterior: Optional[PosteriorWeights] = None,
    mixture: Optional[TransitionCurve] = None,
) -> np.ndarray:
    """Oracle transition densities E[1(X_T=k) mu_kl(T) | X_t = start]; reuses `mixture` when given"""
    if mixture is None:
        anchor = start if isinstance(start, (int, np.integer)) else None
        mixture = mixture_curve(source, graph, grid, posterior, start=anchor)
    return mixture_densities(mixture, start)


def expected_cash_flow(
    curve: TransitionCurve,
    rates: Any,
    payments: PaymentSpec,
    start: StartState,
) -> CashFlow:
    """
    A(t,T) = int_(t,T] sum_k p_k(s) (b_k(s) + sum_l m_kl(s) b_kl(s)) ds

    Args:
        curve: occupancy source P(t, .)
        rates: tensor (states, states, nodes) or curve object with `values`
            and `grid`; undefined (NaN) rates count as zero
        payments: sojourn and transition payments
        start: start state or distribution

    Returns:
        CashFlow with per-state decomposition
    """
    grid = curve.grid
    if hasattr(rates, "grid"):
        grid.require_match(rates.grid, "transition curve and rates")
        rates = rates.values
    rates = np.asarray(rates, dtype=float)
    if rates.shape[-1] != len(grid):
        raise GridMismatchError(f"Rates have {rates.shape[-1]} nodes, curve has {len(grid)}")

    n = curve.num_states
    occupancy = curve.occupancy(start).T
    sojourn = payments.sojourn_matrix(grid, n)
    lump = payments.transition_tensor(grid, n)
    flow = occupancy * (sojourn + np.einsum("klt,klt->kt", np.nan_to_num(rates, nan=0.0), lump))

    per_state = cumulative_integral(flow, grid.nodes)
    return CashFlow(grid, per_state.sum(axis=0), flow.sum(axis=0), per_state)


def oracle_cash_flow(
    source: IntensitySource,
    graph: ModelGraph,
    payments: PaymentSpec,
    start: StartState,
    grid: TimeGrid,
    posterior: Optional[PosteriorWeights] = None,
    mixture: Optional[TransitionCurve] = None,
) -> CashFlow:
    """Exact mixture value sum_i w_i A_i(t, T), densities from each scenario's own intensities"""
    if mixture is None:
        anchor = start if isinstance(start, (int, np.integer)) else None
        mixture = mixture_curve(source, graph, grid, posterior, start=anchor)

    n = graph.num_states
    occupancy = mixture.occupancy(start).T
    densities = mixture_densities(mixture, start)
    sojourn = payments.sojourn_matrix(grid, n)
    lump = payments.transition_tensor(grid, n)
    flow = occupancy * sojourn + np.einsum("klt,klt->kt", densities, lump)

    per_state = cumulative_integral(flow, grid.nodes)
    return CashFlow(grid, per_state.sum(axis=0), flow.sum(axis=0), per_state)


def prospective_reserve(cash_flow: CashFlow, short_rate: Optional[TimeFunction] = None) -> float:
    """
    V(t) = int exp(-int_t^s r(u) du) dA(t, s)

    Args:
        cash_flow: expected accumulated cash flow
        short_rate: deterministic short rate or forward interest curve;
            None means no discounting

    Returns:
        Reserve at the base time
    """
    grid = cash_flow.grid
    if short_rate is None:
        return cash_flow.total

    discount = np.exp(-short_rate.integral(grid.t0, grid.nodes))
    if not np.all(np.isfinite(discount)):
        raise SolverError("Short rate is not finite on the horizon")
    return float(cumulative_integral(discount * cash_flow.rate, grid.nodes)[-1])


def write_curve_csv(curve: Any, path: Union[str, Path]) -> Path:
    """CSV with a header row, 15 significant digits, LF line endings"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.to_frame().to_csv(
        path,
        index=False,
        float_format=f"%.{Config.CURVE_DIGITS}g",
        lineterminator="\n",
        encoding="utf-8",
    )
    return path


def read_curve_csv(path: Union[str, Path]) -> Any:
    """Read a file written by write_curve_csv back into its curve type"""
    frame = pd.read_csv(path, float_precision="round_trip")
    if any(c.startswith("P_") for c in frame.columns):
        return TransitionCurve.from_frame(frame)

    from forward_rates import ForwardRateCurve

    return ForwardRateCurve.from_frame(frame)
