"""
Monte Carlo Oracle
Simulates (intensity, chain) path pairs by thinning and estimates the
conditional expectations the exact modules compute, with standard errors
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from kolmogorov import StartState, mixture_curve, oracle_cash_flow, start_distribution, transition_densities
from model_graph import ModelGraph, PaymentSpec, TimeGrid
from rate_scenarios import IntensitySource, ScenarioSet, survival_transform
from utils import ProgressTracker, SolverError, Transition, cumulative_integral, format_transition


@dataclass(frozen=True)
class SimulationConfig:
    """Path count, seed, grid and start state of a simulation run"""

    grid: TimeGrid
    paths: int = Config.DEFAULT_PATHS
    seed: int = Config.DEFAULT_SEED
    start: Any = 0
    batch_size: int = Config.MC_BATCH_SIZE
    workers: int = 1
    progress: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError(f"Path count must be at least 1 (got {self.paths})")
        if self.batch_size < 1:
            raise ValueError(f"Batch size must be at least 1 (got {self.batch_size})")

    @property
    def num_batches(self) -> int:
        return -(-self.paths // self.batch_size)

    def batch_paths(self, batch: int) -> int:
        return min(self.batch_size, self.paths - batch * self.batch_size)

    def describe(self) -> Dict[str, Any]:
        start = self.start if isinstance(self.start, (int, np.integer)) else list(np.asarray(self.start, dtype=float))
        return {
            "grid": self.grid.describe(),
            "paths": self.paths,
            "seed": self.seed,
            "start": start,
            "batch_size": self.batch_size,
        }


@dataclass(frozen=True)
class Target:
    """One estimated quantity at time T"""

    kind: str
    T: float
    state: Optional[int] = None
    transition: Optional[Transition] = None
    transitions: Tuple[Transition, ...] = ()
    scenario: Optional[int] = None

    KINDS = ("occupancy", "density", "survival", "payments", "scenario")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"Unknown target kind '{self.kind}'")

    @property
    def name(self) -> str:
        if self.kind == "occupancy":
            return f"occupancy[{self.state}]@{self.T:g}"
        if self.kind == "density":
            return f"density[{format_transition(self.transition)}]@{self.T:g}"
        if self.kind == "survival":
            return f"survival[{'+'.join(format_transition(p) for p in self.transitions)}]@{self.T:g}"
        if self.kind == "scenario":
            return f"scenario[{self.scenario}]"
        return f"payments@{self.T:g}"

    def describe(self) -> str:
        return self.name


@dataclass
class Estimate:
    target: str
    estimate: float
    se: float
    n: int


@dataclass
class EstimateTable:
    """Point estimates with standard errors, in target order"""

    rows: List[Estimate] = field(default_factory=list)

    def __getitem__(self, name: str) -> Estimate:
        for row in self.rows:
            if row.target == name:
                return row
        raise KeyError(name)

    def names(self) -> List[str]:
        return [row.target for row in self.rows]

    def within(self, name: str, value: float, band: float = Config.MC_SE_BAND) -> bool:
        """Is value inside estimate +- band standard errors"""
        row = self[name]
        return abs(row.estimate - value) <= band * row.se + 1e-15

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "target": [r.target for r in self.rows],
                "estimate": [r.estimate for r in self.rows],
                "SE": [r.se for r in self.rows],
                "N": [r.n for r in self.rows],
            }
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": [[r.target, r.estimate, r.se, r.n] for r in self.rows]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EstimateTable":
        return cls([Estimate(str(t), float(e), float(s), int(n)) for t, e, s, n in data["rows"]])


class _BatchRates:
    """Per-path access to the tabulated intensities of one batch"""

    def __init__(self, source: IntensitySource, graph: ModelGraph, grid: TimeGrid, n: int, rng: np.random.Generator):
        self.grid = grid
        mask = graph.adjacency()
        if isinstance(source, ScenarioSet):
            self.scenario = rng.choice(len(source), size=n, p=source.weights)
            self.table = source.intensity_tensor(grid, graph.num_states) * mask[None, :, :, None]
            self.exits = self.table.sum(axis=2)
            self.factors = None
        else:
            self.scenario = np.zeros(n, dtype=int)
            self.factors = source.sample_factor_paths(grid, n, rng)
            self.offsets = source.deterministic_tensor(grid, graph.num_states) * mask[:, :, None]
            self.loadings = np.stack(
                [np.stack([source.loading((j, k)) * mask[j, k] for k in range(graph.num_states)]) for j in range(graph.num_states)]
            )
            self.exit_offsets = self.offsets.sum(axis=1)
            self.exit_loadings = self.loadings.sum(axis=1)

    def exit_rows(self, paths: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Total exit intensity at every node, shape (paths, nodes)"""
        if self.factors is None:
            return self.exits[self.scenario[paths], states]
        return self.exit_offsets[states] + np.einsum("af,afn->an", self.exit_loadings[states], self.factors[paths])

    def at_node(self, paths: np.ndarray, states: np.ndarray, node: np.ndarray) -> np.ndarray:
        """Destination intensities at a node, shape (paths, states)"""
        if self.factors is None:
            return self.table[self.scenario[paths], states, :, node]
        z = self.factors[paths, :, node]
        return self.offsets[states, :, node] + np.einsum("asf,af->as", self.loadings[states], z)

    def interpolate(self, paths: np.ndarray, states: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Destination intensities at arbitrary times, linear between nodes"""
        position = (times - self.grid.t0) / self.grid.step
        left = np.clip(np.floor(position).astype(int), 0, len(self.grid) - 2)
        frac = np.clip(position - left, 0.0, 1.0)[:, None]
        return (1 - frac) * self.at_node(paths, states, left) + frac * self.at_node(paths, states, left + 1)

    def path_integral(self, pairs: Sequence[Transition], node: int) -> np.ndarray:
        """int_t^T of the summed intensities per path, Simpson on the nodes"""
        if self.factors is None:
            table = sum(self.table[:, j, k] for j, k in pairs)
            cumulative = cumulative_integral(table, self.grid.nodes)[:, node]
            return cumulative[self.scenario]
        values = sum(
            self.offsets[j, k][None, :] + np.einsum("f,nfs->ns", self.loadings[j, k], self.factors)
            for j, k in pairs
        )
        return cumulative_integral(values, self.grid.nodes)[:, node]


@dataclass
class BatchPaths:
    """Simulated paths of one batch"""

    batch: int
    rates: _BatchRates
    start: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray
    states: np.ndarray

    @property
    def size(self) -> int:
        return len(self.start)


def _simulate_batch(
    source: IntensitySource,
    graph: ModelGraph,
    config: SimulationConfig,
    batch: int,
) -> BatchPaths:
    grid = config.grid
    n = config.batch_paths(batch)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, batch)))

    rates = _BatchRates(source, graph, grid, n, rng)
    pi = start_distribution(config.start, graph.num_states)
    start = rng.choice(graph.num_states, size=n, p=pi)

    absorbing = np.zeros(graph.num_states, dtype=bool)
    absorbing[graph.absorbing_states()] = True

    state = start.copy()
    time = np.full(n, grid.t0)
    active = ~absorbing[state]
    node_index = np.arange(len(grid))
    jumps: List[Tuple[np.ndarray, ...]] = []

    while active.any():
        idx = np.flatnonzero(active)
        current = np.clip(np.floor((time[idx] - grid.t0) / grid.step).astype(int), 0, len(grid) - 2)

        # Dominating rate: largest exit intensity over the remaining nodes
        exits = rates.exit_rows(idx, state[idx])
        bound = np.where(node_index[None, :] >= current[:, None], exits, -np.inf).max(axis=1)
        if not np.all(np.isfinite(bound)):
            raise SolverError("Dominating rate is not finite")

        quiet = bound <= 0
        active[idx[quiet]] = False
        idx, bound = idx[~quiet], bound[~quiet]
        if idx.size == 0:
            break

        time[idx] = time[idx] + rng.exponential(1.0 / bound)
        beyond = time[idx] > grid.end
        active[idx[beyond]] = False
        idx, bound = idx[~beyond], bound[~beyond]
        if idx.size == 0:
            break

        destination_rates = np.clip(rates.interpolate(idx, state[idx], time[idx]), 0.0, None)
        total = destination_rates.sum(axis=1)
        accept = rng.uniform(size=idx.size) * bound <= total
        choice_u = rng.uniform(size=idx.size)

        idx, destination_rates, total, choice_u = idx[accept], destination_rates[accept], total[accept], choice_u[accept]
        if idx.size == 0:
            continue

        cumulative = np.cumsum(destination_rates, axis=1) / total[:, None]
        destination = np.minimum((cumulative < choice_u[:, None]).sum(axis=1), graph.num_states - 1)

        jumps.append((idx.copy(), time[idx].copy(), state[idx].copy(), destination))
        state[idx] = destination
        active[idx] = ~absorbing[destination]

    if jumps:
        jump_path, jump_time, jump_from, jump_to = (np.concatenate(parts) for parts in zip(*jumps))
    else:
        jump_path = np.zeros(0, dtype=int)
        jump_time = np.zeros(0)
        jump_from = np.zeros(0, dtype=int)
        jump_to = np.zeros(0, dtype=int)

    # X at every node: start state plus the jumps up to that node
    diffs = np.zeros((n, len(grid)), dtype=np.int64)
    first_node = np.ceil((jump_time - grid.t0) / grid.step - 1e-9).astype(int)
    np.add.at(diffs, (jump_path, first_node), jump_to - jump_from)
    states = start[:, None] + np.cumsum(diffs, axis=1)

    return BatchPaths(batch, rates, start, jump_path, jump_time, jump_from, jump_to, states)


class PathSample:
    """
    Lazily simulated path sample; iterating re-simulates every batch from its
    own seed, so repeated passes see identical paths
    """

    def __init__(self, source: IntensitySource, graph: ModelGraph, config: SimulationConfig):
        self.source = source
        self.graph = graph
        self.config = config

    def batch(self, index: int) -> BatchPaths:
        return _simulate_batch(self.source, self.graph, self.config, index)

    def __iter__(self) -> Iterator[BatchPaths]:
        for b in range(self.config.num_batches):
            yield self.batch(b)

    def __len__(self) -> int:
        return self.config.paths


def simulate_paths(source: IntensitySource, graph: ModelGraph, config: SimulationConfig) -> PathSample:
    """
    Path sample: scenario (or factor path) per path from the current law,
    then the chain by thinning against the per-state dominating exit rate
    """
    source.validate_on(config.grid, graph)
    return PathSample(source, graph, config)


def _payments(paths: BatchPaths, payments: PaymentSpec, node: int, grid: TimeGrid) -> np.ndarray:
    """B(T) - B(t) along every path of the batch"""
    T = grid.nodes[node]
    total = np.zeros(paths.size)
    t0 = grid.t0

    def sojourn_integral(state: int, times: np.ndarray) -> np.ndarray:
        fn = payments.sojourn.get(int(state))
        return fn.integral(t0, times) if fn is not None else np.zeros(np.shape(times))

    end_state = paths.states[:, node]
    for k in np.unique(end_state):
        hit = end_state == k
        total[hit] += sojourn_integral(k, np.full(hit.sum(), T))

    taken = paths.jump_time <= T + 1e-12
    jp, jt = paths.jump_path[taken], paths.jump_time[taken]
    jf, jto = paths.jump_from[taken], paths.jump_to[taken]
    contribution = np.zeros(jp.size)
    for k in np.unique(np.concatenate([jf, jto])):
        contribution[jf == k] += sojourn_integral(k, jt[jf == k])
        contribution[jto == k] -= sojourn_integral(k, jt[jto == k])
    for (k, l), fn in payments.transition.items():
        hit = (jf == k) & (jto == l)
        if hit.any():
            contribution[hit] += fn(jt[hit])
    np.add.at(total, jp, contribution)
    return total


def _target_values(paths: BatchPaths, target: Target, grid: TimeGrid, payments: Optional[PaymentSpec]) -> np.ndarray:
    if target.kind == "scenario":
        return (paths.rates.scenario == target.scenario).astype(float)

    node = grid.index_of(target.T)
    if target.kind == "occupancy":
        return (paths.states[:, node] == target.state).astype(float)
    if target.kind == "density":
        k, l = target.transition
        occupying = paths.states[:, node] == k
        values = np.zeros(paths.size)
        idx = np.flatnonzero(occupying)
        if idx.size:
            values[idx] = paths.rates.at_node(idx, np.full(idx.size, k), np.full(idx.size, node))[:, l]
        return values
    if target.kind == "survival":
        return np.exp(-paths.rates.path_integral(target.transitions, node))
    if payments is None:
        raise ValueError("Payment targets need a payment specification")
    return _payments(paths, payments, node, grid)


def _batch_moments(paths: BatchPaths, targets: Sequence[Target], grid: TimeGrid, payments) -> np.ndarray:
    """Per target: count, mean, sum of squared deviations"""
    out = np.empty((len(targets), 3))
    for i, target in enumerate(targets):
        values = _target_values(paths, target, grid, payments)
        mean = float(np.mean(values))
        out[i] = (values.size, mean, float(np.sum((values - mean) ** 2)))
    return out


def estimate_targets(
    sample: PathSample,
    targets: Sequence[Target],
    payments: Optional[PaymentSpec] = None,
) -> EstimateTable:
    """
    Sample means and standard errors (sample std / sqrt N) per target

    Batches are combined in batch order, so serial and threaded runs give
    identical numbers.
    """
    config = sample.config
    grid = config.grid
    tracker = ProgressTracker(config.num_batches, "Simulating", enabled=config.progress)

    def run(b: int) -> np.ndarray:
        moments = _batch_moments(sample.batch(b), targets, grid, payments)
        tracker.update()
        return moments

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            per_batch = list(pool.map(run, range(config.num_batches)))
    else:
        per_batch = [run(b) for b in range(config.num_batches)]

    rows = []
    for i, target in enumerate(targets):
        count, mean, m2 = 0.0, 0.0, 0.0
        for moments in per_batch:
            n_b, mean_b, m2_b = moments[i]
            total = count + n_b
            delta = mean_b - mean
            mean = mean + delta * n_b / total
            m2 = m2 + m2_b + delta ** 2 * count * n_b / total
            count = total
        variance = m2 / (count - 1) if count > 1 else 0.0
        rows.append(Estimate(target.name, mean, math.sqrt(variance / count), int(count)))
    return EstimateTable(rows)


def default_targets(
    graph: ModelGraph,
    grid: TimeGrid,
    payments: Optional[PaymentSpec] = None,
) -> List[Target]:
    """Occupancy of every state and density of every transition at the
    horizon and its midpoint, plus accumulated payments at the horizon"""
    middle = float(grid.nodes[(len(grid) - 1) // 2])
    targets: List[Target] = []
    for T in sorted({middle, grid.end}):
        targets.extend(Target("occupancy", T, state=k) for k in range(graph.num_states))
        targets.extend(Target("density", T, transition=p) for p in graph.sorted_transitions())
    if payments is not None and not payments.is_zero:
        targets.append(Target("payments", grid.end))
    return targets


def oracle_values(
    source: IntensitySource,
    graph: ModelGraph,
    grid: TimeGrid,
    targets: Sequence[Target],
    start: StartState = 0,
    payments: Optional[PaymentSpec] = None,
) -> Dict[str, float]:
    """Exact mixture values of the targets, for comparison with the estimates"""
    anchor = start if isinstance(start, (int, np.integer)) else None
    mixture = mixture_curve(source, graph, grid, start=anchor)
    occupancy = mixture.occupancy(start)
    densities = transition_densities(source, graph, grid, start, mixture=mixture)
    cash_flow = None

    values: Dict[str, float] = {}
    for target in targets:
        if target.kind == "scenario":
            values[target.name] = float(source.weights[target.scenario]) if isinstance(source, ScenarioSet) else 1.0
            continue

        node = grid.index_of(target.T)
        if target.kind == "occupancy":
            values[target.name] = float(occupancy[node, target.state])
        elif target.kind == "density":
            values[target.name] = float(densities[target.transition][node])
        elif target.kind == "survival":
            if node == 0:
                values[target.name] = 1.0
            else:
                survival = survival_transform(source, target.transitions, grid.t0, target.T, grid.step)
                values[target.name] = float(survival)
        else:
            if cash_flow is None:
                cash_flow = oracle_cash_flow(source, graph, payments, start, grid, mixture=mixture)
            values[target.name] = float(cash_flow.accumulated[node])
    return values


def agreement(table: EstimateTable, exact: Dict[str, float], band: float = Config.MC_SE_BAND) -> float:
    """Share of targets whose exact value lies within band standard errors"""
    names = [name for name in table.names() if name in exact]
    if not names:
        return 1.0
    return sum(table.within(name, exact[name], band) for name in names) / len(names)
