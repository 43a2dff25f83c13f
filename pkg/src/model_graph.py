"""
Model Graph Module
State spaces, transition structure, payment specifications and time grids,
with the structural analyses (reachability, decrement ordering) every
other module relies on
"""

from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from config import ConfigError
from time_functions import TimeFunction, time_function_from_config
from utils import Transition, format_transition, parse_transition


class GraphError(ValueError):
    """Invalid state space or transition structure"""


class GridMismatchError(ValueError):
    """Two objects that must share a time grid do not"""


@dataclass(frozen=True)
class ModelGraph:
    """Finite state space {0..J} with allowed transitions"""

    num_states: int
    transitions: FrozenSet[Transition]
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.num_states < 1:
            raise GraphError(f"num_states must be positive (got {self.num_states})")

        pairs = frozenset((int(j), int(k)) for j, k in self.transitions)
        for j, k in pairs:
            if j == k:
                raise GraphError(f"Self-transition {j}->{k} is not allowed")
            if not (0 <= j < self.num_states and 0 <= k < self.num_states):
                raise GraphError(f"Transition {j}->{k} leaves the state space 0..{self.num_states - 1}")
        object.__setattr__(self, "transitions", pairs)

        labels = tuple(self.labels) if self.labels else tuple(str(i) for i in range(self.num_states))
        if len(labels) != self.num_states:
            raise GraphError(f"Expected {self.num_states} labels, got {len(labels)}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_config(cls, spec: Mapping[str, Any]) -> "ModelGraph":
        """Build from {'states': [...labels...], 'transitions': ['0-1', ...]}"""
        states = spec.get("states")
        if isinstance(states, int):
            labels: Tuple[str, ...] = ()
            num_states = states
        elif isinstance(states, (list, tuple)):
            labels = tuple(str(s) for s in states)
            num_states = len(labels)
        else:
            raise ConfigError("graph.states must be a count or a list of labels")

        try:
            transitions = frozenset(parse_transition(t) for t in spec.get("transitions", []))
        except ValueError as e:
            raise ConfigError(str(e))
        return cls(num_states, transitions, labels)

    def describe(self) -> Dict[str, Any]:
        return {
            "states": list(self.labels),
            "transitions": [format_transition(p) for p in self.sorted_transitions()],
        }

    def sorted_transitions(self) -> List[Transition]:
        return sorted(self.transitions)

    @property
    def is_decrement(self) -> bool:
        """True iff every transition moves to a higher state index"""
        return all(k > j for j, k in self.transitions)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.num_states, self.num_states), dtype=bool)
        for j, k in self.transitions:
            adj[j, k] = True
        return adj

    def successors(self, state: int) -> List[int]:
        return sorted(k for j, k in self.transitions if j == state)

    def predecessors(self, state: int) -> List[int]:
        return sorted(j for j, k in self.transitions if k == state)

    def in_degree(self, state: int) -> int:
        return len(self.predecessors(state))

    def absorbing_states(self) -> List[int]:
        return [s for s in range(self.num_states) if not self.successors(s)]

    def transient_states(self) -> List[int]:
        return [s for s in range(self.num_states) if self.successors(s)]

    def generator(self, rates: np.ndarray) -> np.ndarray:
        """
        Intensity matrix from off-diagonal rates

        Args:
            rates: (states, states) or (states, states, nodes) array; entries
                off the transition set are ignored

        Returns:
            Matrix with the rates off the diagonal and negative row sums on it
        """
        rates = np.asarray(rates, dtype=float)
        mask = self.adjacency()
        if rates.ndim == 3:
            mask = mask[:, :, None]
        return generator_from_rates(np.where(mask, rates, 0.0))


@dataclass(frozen=True)
class DecrementCheck:
    """Result of check_decrement"""

    is_decrement: bool
    ordering: Optional[Tuple[int, ...]] = None

    def position(self) -> np.ndarray:
        """position[state] = index of state in the ordering"""
        pos = np.empty(len(self.ordering), dtype=int)
        for i, s in enumerate(self.ordering):
            pos[s] = i
        return pos


def generator_from_rates(rates: np.ndarray) -> np.ndarray:
    """Off-diagonal rates in, intensity matrix out (rows sum to zero); node axis last if present"""
    gen = np.array(rates, dtype=float)
    idx = np.arange(gen.shape[0])
    gen[idx, idx] = 0.0
    gen[idx, idx] = -gen.sum(axis=1)
    return gen


def reachability(graph: ModelGraph) -> np.ndarray:
    """
    Transitive closure of the edge set, diagonal included

    Args:
        graph: model graph

    Returns:
        Boolean matrix with entry (j, k) true iff a directed path j -> k exists
    """
    reach = graph.adjacency() | np.eye(graph.num_states, dtype=bool)

    # Repeated squaring: path lengths double every round
    while True:
        step = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if np.array_equal(step, reach):
            return reach
        reach = step


def check_decrement(graph: ModelGraph) -> DecrementCheck:
    """
    Detect acyclic (decrement) structure and produce a topological ordering

    Ties are broken by smallest state index so that an already sorted
    graph keeps its order.

    Args:
        graph: model graph

    Returns:
        DecrementCheck with the ordering when the graph is acyclic
    """
    indegree = [graph.in_degree(s) for s in range(graph.num_states)]
    available = sorted(s for s in range(graph.num_states) if indegree[s] == 0)
    ordering: List[int] = []

    while available:
        state = available.pop(0)
        ordering.append(state)
        for k in graph.successors(state):
            indegree[k] -= 1
            if indegree[k] == 0:
                available.append(k)
                available.sort()

    if len(ordering) < graph.num_states:
        return DecrementCheck(False, None)
    return DecrementCheck(True, tuple(ordering))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid anchored at t0 covering [t0, horizon]"""

    t0: float
    horizon: float
    step: float
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"Grid step must be positive (got {self.step})")
        if not self.horizon > self.t0:
            raise ConfigError(f"Grid horizon {self.horizon} must exceed its start {self.t0}")

        n_steps = max(1, int(round((self.horizon - self.t0) / self.step)))
        nodes = self.t0 + self.step * np.arange(n_steps + 1)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_horizon(cls, t0: float, horizon: float, step: float) -> "TimeGrid":
        """Grid from t0 to t0 + horizon"""
        return cls(float(t0), float(t0) + float(horizon), float(step))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    @property
    def elapsed(self) -> np.ndarray:
        """Node offsets from t0"""
        return self.nodes - self.t0

    def index_of(self, T: float) -> int:
        """Index of the node at time T (must be grid-aligned)"""
        position = (T - self.t0) / self.step
        idx = int(round(position))
        if abs(position - idx) > 1e-6 or not 0 <= idx < len(self.nodes):
            raise GridMismatchError(f"Time {T} is not a node of the grid starting {self.t0} with step {self.step}")
        return idx

    def matches(self, other: "TimeGrid") -> bool:
        return len(self) == len(other) and bool(np.allclose(self.nodes, other.nodes, rtol=0, atol=1e-12))

    def require_match(self, other: "TimeGrid", what: str = "inputs"):
        if not self.matches(other):
            raise GridMismatchError(
                f"Grid mismatch between {what}: [{self.t0}, {self.end}] step {self.step} "
                f"vs [{other.t0}, {other.end}] step {other.step}"
            )

    def halved(self) -> "TimeGrid":
        return TimeGrid(self.t0, self.end, self.step / 2)

    def describe(self) -> Dict[str, float]:
        return {"t0": self.t0, "horizon": self.horizon, "step": self.step}


@dataclass(frozen=True)
class PaymentSpec:
    """Sojourn payment rates b_k(s) and transition payments b_kl(s)"""

    sojourn: Mapping[int, TimeFunction] = field(default_factory=dict)
    transition: Mapping[Transition, TimeFunction] = field(default_factory=dict)

    @classmethod
    def from_config(cls, spec: Optional[Mapping[str, Any]]) -> "PaymentSpec":
        """Build from {'sojourn': {'1': fn}, 'transition': {'0-1': fn}}"""
        spec = spec or {}
        try:
            sojourn = {int(k): time_function_from_config(v) for k, v in (spec.get("sojourn") or {}).items()}
            transition = {
                parse_transition(k): time_function_from_config(v)
                for k, v in (spec.get("transition") or {}).items()
            }
        except ValueError as e:
            raise ConfigError(f"Invalid payments: {e}")
        return cls(sojourn, transition)

    def validate(self, graph: ModelGraph, allowed: Iterable[Transition] = ()):
        """Check states and transitions exist; `allowed` adds induced edges"""
        permitted = set(graph.transitions) | set(allowed)
        for state in self.sojourn:
            if not 0 <= state < graph.num_states:
                raise GraphError(f"Sojourn payment for unknown state {state}")
        for pair in self.transition:
            if pair not in permitted:
                raise GraphError(f"Transition payment on {format_transition(pair)}, which is not a transition of the model")

    @property
    def is_zero(self) -> bool:
        return not self.sojourn and not self.transition

    def sojourn_matrix(self, grid: TimeGrid, num_states: int) -> np.ndarray:
        """b_k on the grid, shape (states, nodes)"""
        values = np.zeros((num_states, len(grid)))
        for state, fn in self.sojourn.items():
            values[state] = fn(grid.nodes)
        return values

    def transition_tensor(self, grid: TimeGrid, num_states: int) -> np.ndarray:
        """b_kl on the grid, shape (states, states, nodes)"""
        values = np.zeros((num_states, num_states, len(grid)))
        for (k, l), fn in self.transition.items():
            values[k, l] = fn(grid.nodes)
        return values

    def describe(self) -> Dict[str, Any]:
        return {
            "sojourn": {str(k): v.describe() for k, v in sorted(self.sojourn.items())},
            "transition": {format_transition(k): v.describe() for k, v in sorted(self.transition.items())},
        }
