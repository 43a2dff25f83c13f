"""
Rate Scenarios Module
The stochastic intensity process: finite scenario mixtures with exact
Bayesian conditioning, and CIR-driven affine intensities evaluated through
Riccati transforms
"""

import itertools
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config, ConfigError
from model_graph import ModelGraph, TimeGrid, reachability
from time_functions import ZERO, TimeFunction, time_function_from_config
from utils import Transition, format_transition, parse_transition, rk4_solve


class ModelStructureError(ValueError):
    """Model lacks the structure a closed-form evaluation relies on"""


class IntensityPath:
    """Deterministic intensity functions, one per transition"""

    def __init__(self, rates: Mapping[Transition, TimeFunction], name: str = ""):
        self.rates: Dict[Transition, TimeFunction] = {
            parse_transition(k): time_function_from_config(v) for k, v in rates.items()
        }
        self.name = name

    @classmethod
    def from_config(cls, spec: Mapping[str, Any], name: str = "") -> "IntensityPath":
        try:
            return cls({parse_transition(k): v for k, v in spec.items()}, name)
        except ValueError as e:
            raise ConfigError(f"Invalid intensity path {name!r}: {e}")

    @property
    def transitions(self) -> FrozenSet:
        return frozenset(self.rates)

    def rate(self, pair: Transition) -> TimeFunction:
        return self.rates.get(pair, ZERO)

    def integral(self, pairs: Iterable[Transition], a, b) -> np.ndarray:
        """Sum of integrals of the listed intensities over (a, b]"""
        total = np.zeros(np.broadcast(np.asarray(a), np.asarray(b)).shape)
        for pair in pairs:
            total = total + self.rate(pair).integral(a, b)
        return total

    def tensor(self, grid: TimeGrid, num_states: int) -> np.ndarray:
        """mu_jk on the grid, shape (states, states, nodes)"""
        values = np.zeros((num_states, num_states, len(grid)))
        for (j, k), fn in self.rates.items():
            values[j, k] = fn(grid.nodes)
        return values

    def describe(self) -> Dict[str, Any]:
        return {format_transition(k): v.describe() for k, v in sorted(self.rates.items())}


class ScenarioSet:
    """
    Finite mixture of intensity paths with prior weights

    The law of the intensity process given information up to time t is
    represented by the weights; `conditioned` swaps in posterior weights.
    """

    def __init__(
        self,
        scenarios: Sequence[IntensityPath],
        weights: Optional[Sequence[float]] = None,
    ):
        if not scenarios:
            raise ConfigError("A scenario set needs at least one scenario")
        self.scenarios = list(scenarios)

        if weights is None:
            weights = np.full(len(self.scenarios), 1.0 / len(self.scenarios))
        self.weights = np.asarray(weights, dtype=float)

        if self.weights.shape != (len(self.scenarios),):
            raise ConfigError(f"Expected {len(self.scenarios)} weights, got {self.weights.size}")
        if np.any(self.weights < 0):
            raise ConfigError("Scenario weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > Config.WEIGHT_SUM_TOLERANCE:
            raise ConfigError(f"Scenario weights sum to {self.weights.sum():.15g}, not 1")

        keys = self.scenarios[0].transitions
        for path in self.scenarios[1:]:
            if path.transitions != keys:
                raise ConfigError("All scenarios must cover the same transitions")
        self.transitions = keys

    def __len__(self) -> int:
        return len(self.scenarios)

    @classmethod
    def deterministic(cls, rates: Mapping[Transition, Any]) -> "ScenarioSet":
        return cls([IntensityPath(rates, "deterministic")], [1.0])

    @classmethod
    def product(cls, choices: Mapping[Transition, Sequence[Tuple[Any, float]]]) -> "ScenarioSet":
        """
        Independent transitions: every combination of per-transition choices

        Args:
            choices: per transition a list of (intensity, probability) pairs

        Returns:
            ScenarioSet whose weights are products of the choice probabilities
        """
        normalized = {parse_transition(k): v for k, v in choices.items()}
        pairs = sorted(normalized)
        options = [normalized[p] for p in pairs]

        scenarios, weights = [], []
        for combo in itertools.product(*options):
            rates = {pair: rate for pair, (rate, _) in zip(pairs, combo)}
            scenarios.append(IntensityPath(rates, f"product-{len(scenarios)}"))
            weights.append(float(np.prod([w for _, w in combo])))
        return cls(scenarios, weights)

    @classmethod
    def comonotone(
        cls,
        choices: Mapping[Transition, Sequence[Any]],
        weights: Optional[Sequence[float]] = None,
    ) -> "ScenarioSet":
        """Scenario i takes the i-th intensity of every transition"""
        pairs = {parse_transition(k): list(v) for k, v in choices.items()}
        lengths = {len(v) for v in pairs.values()}
        if len(lengths) != 1:
            raise ConfigError("Comonotone choices need the same number of intensities per transition")

        count = lengths.pop()
        scenarios = [
            IntensityPath({pair: values[i] for pair, values in pairs.items()}, f"comonotone-{i}")
            for i in range(count)
        ]
        return cls(scenarios, weights)

    @classmethod
    def from_config(cls, spec: Any) -> "ScenarioSet":
        """
        Build from a list of {'weight', 'name', 'rates'} entries, or from a
        mapping with a 'product' or 'comonotone' key
        """
        if isinstance(spec, list):
            paths = [IntensityPath.from_config(s.get("rates", {}), s.get("name", f"scenario-{i}")) for i, s in enumerate(spec)]
            weights = [s["weight"] for s in spec] if all("weight" in s for s in spec) else None
            return cls(paths, weights)

        if isinstance(spec, dict) and "product" in spec:
            choices = {
                parse_transition(k): [(c["rate"], c.get("weight", 1.0 / len(v))) for c in v]
                for k, v in spec["product"].items()
            }
            return cls.product(choices)

        if isinstance(spec, dict) and "comonotone" in spec:
            return cls.comonotone(spec["comonotone"], spec.get("weights"))

        raise ConfigError("scenarios must be a list, or a mapping with 'product' or 'comonotone'")

    def conditioned(self, weights: Union["PosteriorWeights", Sequence[float]]) -> "ScenarioSet":
        """Same scenarios under new (posterior) weights"""
        w = weights.weights if isinstance(weights, PosteriorWeights) else weights
        return ScenarioSet(self.scenarios, w)

    def marginal_for(self, pair: Transition, as_pair: Optional[Transition] = None) -> "ScenarioSet":
        """Single-transition set carrying the same marginal law of mu_pair, on `as_pair` if given"""
        key = as_pair or pair
        paths = [IntensityPath({key: p.rate(pair)}, p.name) for p in self.scenarios]
        return ScenarioSet(paths, self.weights)

    def remap(self, edge_map: Mapping[Transition, Optional[Transition]]) -> "ScenarioSet":
        """Intensities for a relabelled model; unmapped edges get zero intensity"""
        paths = [
            IntensityPath(
                {new: (p.rate(old) if old is not None else ZERO) for new, old in edge_map.items()},
                p.name,
            )
            for p in self.scenarios
        ]
        return ScenarioSet(paths, self.weights)

    def intensity_tensor(self, grid: TimeGrid, num_states: int) -> np.ndarray:
        """All intensities on the grid, shape (scenarios, states, states, nodes)"""
        return np.stack([p.tensor(grid, num_states) for p in self.scenarios])

    def validate_on(self, grid: TimeGrid, graph: ModelGraph):
        """Intensities must sit on graph transitions and be finite and nonnegative on the grid"""
        for pair in self.transitions:
            if pair not in graph.transitions:
                raise ConfigError(f"Scenario intensity on {format_transition(pair)}, which is not a transition of the model")
        tensor = self.intensity_tensor(grid, graph.num_states)
        if not np.all(np.isfinite(tensor)):
            raise ConfigError("Scenario intensities are not finite on the grid")
        if np.any(tensor < 0):
            raise ConfigError("Scenario intensities must be nonnegative on the grid")

    def describe(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "scenarios": [p.describe() for p in self.scenarios],
        }


@dataclass(frozen=True)
class PosteriorWeights:
    """Scenario weights given the intensities observed on [0, t]"""

    t: float
    weights: np.ndarray


def posterior(
    scenarios: ScenarioSet,
    observed: int,
    t: float,
    step: Optional[float] = None,
) -> PosteriorWeights:
    """
    Condition a scenario set on the paths observed up to time t

    Args:
        scenarios: prior scenario set
        observed: index of the scenario that actually happened
        t: observation time
        step: spacing of the comparison nodes on [0, t]

    Returns:
        PosteriorWeights: priors of the scenarios agreeing with the observed
        one (sup-norm over the nodes), renormalized; zero elsewhere
    """
    if not 0 <= observed < len(scenarios):
        raise IndexError(f"Observed scenario {observed} out of range 0..{len(scenarios) - 1}")
    if t < 0:
        raise ValueError(f"Observation time must be nonnegative (got {t})")

    step = step or Config.DEFAULT_STEP
    n_steps = int(np.ceil(t / step - 1e-9)) if t > 0 else 0
    nodes = np.linspace(0.0, t, n_steps + 1)
    pairs = sorted(scenarios.transitions)

    reference = scenarios.scenarios[observed]
    agrees = np.zeros(len(scenarios), dtype=bool)
    for i, path in enumerate(scenarios.scenarios):
        gap = max((np.max(np.abs(path.rate(p)(nodes) - reference.rate(p)(nodes))) for p in pairs), default=0.0)
        agrees[i] = gap <= Config.PATH_AGREEMENT_TOLERANCE

    weights = np.where(agrees, scenarios.weights, 0.0)
    total = weights.sum()
    if total <= 0:
        # observed scenario had zero prior weight
        weights = agrees.astype(float)
        total = weights.sum()
    return PosteriorWeights(t, weights / total)


@dataclass(frozen=True)
class CIRFactor:
    """dZ = kappa (theta - Z) ds + sigma sqrt(Z) dW, Z at the base time = z0"""

    kappa: float
    theta: float
    sigma: float
    z0: float
    name: str = ""

    def __post_init__(self):
        if self.z0 < 0 or self.theta < 0 or self.sigma < 0:
            raise ConfigError(f"CIR factor {self.name!r}: z0, theta and sigma must be nonnegative")
        if self.sigma > 0 and not (self.kappa > 0 and self.theta > 0):
            raise ConfigError(f"CIR factor {self.name!r}: a diffusive factor needs kappa > 0 and theta > 0")

    def riccati(self, loading: float, elapsed: np.ndarray) -> np.ndarray:
        """
        Transform coefficients over elapsed times

        With c the loading, E[exp(-c int Z) | Z=z] = exp(alpha - beta z) and
        E[exp(-c int Z) Z_end | Z=z] = exp(alpha - beta z) (a + b z).

        Returns:
            Array (nodes, 4) with columns alpha, beta, a, b
        """
        kappa, theta, sigma = self.kappa, self.theta, self.sigma

        def derivative(_, y):
            alpha, beta, a, b = y
            return np.array([
                -kappa * theta * beta,
                loading - kappa * beta - 0.5 * sigma ** 2 * beta ** 2,
                kappa * theta * b,
                -kappa * b - sigma ** 2 * beta * b,
            ])

        return rk4_solve(derivative, np.array([0.0, 0.0, 0.0, 1.0]), elapsed)

    def mean_path(self, elapsed: np.ndarray) -> np.ndarray:
        return self.theta + (self.z0 - self.theta) * np.exp(-self.kappa * elapsed)

    def sample(self, elapsed: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact transitions on the given nodes, shape (n, nodes)"""
        paths = np.empty((n, len(elapsed)))
        paths[:, 0] = self.z0

        if self.sigma == 0:
            paths[:] = self.mean_path(elapsed)
            return paths

        df = 4 * self.kappa * self.theta / self.sigma ** 2
        for i in range(1, len(elapsed)):
            decay = np.exp(-self.kappa * (elapsed[i] - elapsed[i - 1]))
            scale = self.sigma ** 2 * (1 - decay) / (4 * self.kappa)
            nonc = paths[:, i - 1] * decay / scale
            paths[:, i] = scale * rng.noncentral_chisquare(df, nonc)
        return paths

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "kappa": self.kappa, "theta": self.theta, "sigma": self.sigma, "z0": self.z0}


class AffineSpec:
    """
    Intensities mu_jk(s) = offset_jk(s) + sum_f loading_jk,f Z_f(s) driven by
    independent CIR factors, with deterministic offsets and nonnegative loadings
    """

    def __init__(
        self,
        factors: Sequence[CIRFactor],
        offsets: Mapping[Transition, Any],
        loadings: Mapping[Transition, Sequence[float]],
    ):
        if not factors:
            raise ConfigError("An affine specification needs at least one factor")
        self.factors = list(factors)

        self.offsets = {parse_transition(k): time_function_from_config(v) for k, v in offsets.items()}
        self.loadings: Dict[Transition, np.ndarray] = {}
        for key, values in loadings.items():
            vector = np.asarray(values, dtype=float)
            if vector.shape != (len(self.factors),):
                raise ConfigError(f"Loadings of {key} must list one value per factor")
            if np.any(vector < 0):
                raise ConfigError(f"Loadings of {key} must be nonnegative")
            self.loadings[parse_transition(key)] = vector

        self.transitions = frozenset(self.offsets) | frozenset(self.loadings)

    @classmethod
    def from_config(cls, spec: Mapping[str, Any]) -> "AffineSpec":
        """
        Build from {'factors': [{name, kappa, theta, sigma, z0}],
        'transitions': {'0-1': {'offset': fn, 'loadings': {factor: weight}}}}
        """
        try:
            factors = [
                CIRFactor(float(f["kappa"]), float(f["theta"]), float(f["sigma"]), float(f["z0"]), str(f.get("name", i)))
                for i, f in enumerate(spec["factors"])
            ]
        except KeyError as e:
            raise ConfigError(f"CIR factor is missing field {e}")

        names = [f.name for f in factors]
        offsets, loadings = {}, {}
        for key, entry in (spec.get("transitions") or {}).items():
            pair = parse_transition(key)
            entry = entry if isinstance(entry, dict) else {"offset": entry}
            offsets[pair] = entry.get("offset", 0.0)
            if entry.get("loadings"):
                unknown = set(entry["loadings"]) - set(names)
                if unknown:
                    raise ConfigError(f"Loadings of {key} reference unknown factors: {sorted(unknown)}")
                loadings[pair] = [float(entry["loadings"].get(n, 0.0)) for n in names]
        return cls(factors, offsets, loadings)

    def remap(self, edge_map: Mapping[Transition, Optional[Transition]]) -> "AffineSpec":
        """Same factors, intensities carried onto relabelled edges"""
        offsets = {new: self.offset(old) for new, old in edge_map.items() if old is not None and old in self.offsets}
        loadings = {new: self.loading(old) for new, old in edge_map.items() if old is not None and old in self.loadings}
        return AffineSpec(self.factors, offsets, loadings)

    def marginal_for(self, pair: Transition, as_pair: Optional[Transition] = None) -> "AffineSpec":
        return self.remap({as_pair or pair: pair})

    def offset(self, pair: Transition) -> TimeFunction:
        return self.offsets.get(pair, ZERO)

    def loading(self, pair: Transition) -> np.ndarray:
        return self.loadings.get(pair, np.zeros(len(self.factors)))

    def total_loading(self, pairs: Iterable[Transition]) -> np.ndarray:
        total = np.zeros(len(self.factors))
        for pair in pairs:
            total = total + self.loading(pair)
        return total

    def is_deterministic(self, pair: Transition) -> bool:
        return not np.any(self.loading(pair) > 0)

    def moments(
        self,
        loading: np.ndarray,
        t: float,
        T: np.ndarray,
        step: Optional[float] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Factor part of the survival transform and the tilted factor means

        Args:
            loading: per-factor weights c of the exponent exp(-int c.Z)
            t: base time
            T: end times (>= t)
            step: largest Riccati step between nodes (default Config.DEFAULT_STEP)

        Returns:
            (E[exp(-int c.Z)], E[exp(-int c.Z) Z_f(T)] / E[exp(-int c.Z)]) with
            shapes T.shape and (factors,) + T.shape
        """
        T = np.atleast_1d(np.asarray(T, dtype=float))
        nodes, index = _refined_nodes(t, T, step or Config.DEFAULT_STEP)
        elapsed = nodes - t

        transform = np.ones(len(T))
        tilted = np.empty((len(self.factors), len(T)))
        for f, factor in enumerate(self.factors):
            coeffs = factor.riccati(loading[f], elapsed)[index]
            alpha, beta, a, b = coeffs.T
            transform = transform * np.exp(alpha - beta * factor.z0)
            tilted[f] = a + b * factor.z0
        return transform, tilted

    def sample_factor_paths(self, grid: TimeGrid, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact factor paths on the grid nodes, shape (n, factors, nodes)"""
        return np.stack([f.sample(grid.elapsed, n, rng) for f in self.factors], axis=1)

    def deterministic_tensor(self, grid: TimeGrid, num_states: int) -> np.ndarray:
        """Offsets only, shape (states, states, nodes)"""
        values = np.zeros((num_states, num_states, len(grid)))
        for pair, fn in self.offsets.items():
            values[pair] = fn(grid.nodes)
        return values

    def exit_loading(self, graph: ModelGraph, state: int) -> np.ndarray:
        return self.total_loading((state, k) for k in graph.successors(state))

    def common_exit_loading(self, graph: ModelGraph, state: int, states: Optional[Iterable[int]] = None) -> np.ndarray:
        """
        Stochastic exit loading shared by the transient states

        Args:
            graph: model graph
            state: conditioning state
            states: transient states to check (default: those reachable from `state`)

        Returns:
            The common loading vector

        Raises:
            ModelStructureError: when exits differ or a transition between
                transient states is stochastic
        """
        reach = reachability(graph)
        transient = set(graph.transient_states())
        if states is None:
            states = [k for k in transient if reach[state, k]]
        states = sorted(states)
        if not states:
            return np.zeros(len(self.factors))

        common = self.exit_loading(graph, states[0])
        for k in states:
            if not np.allclose(self.exit_loading(graph, k), common, rtol=0, atol=1e-14):
                raise ModelStructureError(
                    f"States {states[0]} and {k} have different stochastic exit intensities"
                )
            for l in graph.successors(k):
                if l in transient and not self.is_deterministic((k, l)):
                    raise ModelStructureError(
                        f"Transition {format_transition((k, l))} between transient states must be deterministic"
                    )
        return common

    def effective_rates(
        self,
        graph: ModelGraph,
        t: float,
        nodes: np.ndarray,
        start: Optional[int] = None,
        step: Optional[float] = None,
    ) -> np.ndarray:
        """
        Deterministic rates nu_kl(T) = offset_kl(T) + loading_kl . tilted mean

        When every transient state exits with the same stochastic loading c,
        E[1(X_T=k) | X_t=j] = E[exp(-int c.Z)] D_jk(T) with D the occupancy
        under the offsets alone, so the conditional law of the chain matches a
        Markov chain driven by nu. Only the transient states reachable from
        `start` are checked when it is given.

        Returns:
            Tensor (states, states, nodes)

        Raises:
            ModelStructureError: when the exit loadings differ
        """
        if start is None:
            common = self.common_exit_loading(graph, 0, states=graph.transient_states())
        else:
            common = self.common_exit_loading(graph, start)

        _, tilted = self.moments(common, t, np.asarray(nodes, dtype=float), step)
        values = np.zeros((graph.num_states, graph.num_states, len(nodes)))
        for pair in graph.transitions:
            values[pair] = self.offset(pair)(nodes) + self.loading(pair) @ tilted
        return values

    def validate_on(self, grid: TimeGrid, graph: ModelGraph):
        for pair in self.transitions:
            if pair not in graph.transitions:
                raise ConfigError(f"Affine intensity on {format_transition(pair)}, which is not a transition of the model")
        offsets = self.deterministic_tensor(grid, graph.num_states)
        if not np.all(np.isfinite(offsets)) or np.any(offsets < 0):
            raise ConfigError("Affine offsets must be finite and nonnegative on the grid")

    def describe(self) -> Dict[str, Any]:
        return {
            "factors": [f.describe() for f in self.factors],
            "offsets": {format_transition(k): v.describe() for k, v in sorted(self.offsets.items())},
            "loadings": {format_transition(k): v.tolist() for k, v in sorted(self.loadings.items())},
        }


IntensitySource = Union[ScenarioSet, AffineSpec]


def _refined_nodes(t: float, targets: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Node sequence from t through every target with spacing at most step"""
    nodes: List[float] = [t]
    index = np.empty(len(targets), dtype=int)

    for i in np.argsort(targets, kind="stable"):
        start = nodes[-1]
        gap = targets[i] - start
        if gap > 1e-12:
            n_sub = max(1, int(np.ceil(gap / step - 1e-9)))
            nodes.extend(start + gap * np.arange(1, n_sub + 1) / n_sub)
        index[i] = len(nodes) - 1
    return np.asarray(nodes), index


def _check_times(t: float, T) -> np.ndarray:
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr < t) or (T_arr.ndim == 0 and T_arr <= t):
        raise ValueError(f"End time must exceed the base time {t}")
    return T_arr


def survival_transform(
    source: IntensitySource,
    pairs: Iterable[Transition],
    t: float,
    T,
    step: Optional[float] = None,
) -> np.ndarray:
    """
    E[exp(-int_(t,T] sum of the listed intensities) | information at t]

    Args:
        source: scenario set (weights = current law) or affine specification
        pairs: transitions whose intensities enter the exponent
        t: base time
        T: end time or array of end times
        step: Riccati step for an affine source

    Returns:
        Transform values with the shape of T
    """
    T_arr = _check_times(t, T)
    pairs = list(pairs)

    if isinstance(source, ScenarioSet):
        values = sum(
            w * np.exp(-path.integral(pairs, t, T_arr))
            for w, path in zip(source.weights, source.scenarios)
        )
        return np.asarray(values, dtype=float)

    deterministic = sum((source.offset(p).integral(t, T_arr) for p in pairs), np.zeros(T_arr.shape))
    transform, _ = source.moments(source.total_loading(pairs), t, T_arr.ravel(), step)
    return np.exp(-deterministic) * transform.reshape(T_arr.shape)


def weighted_terminal_transform(
    source: IntensitySource,
    pairs: Iterable[Transition],
    terminal: Transition,
    t: float,
    T,
    step: Optional[float] = None,
) -> np.ndarray:
    """
    E[exp(-int_(t,T] sum of the listed intensities) mu_terminal(T) | information at t]

    Args:
        source: scenario set or affine specification
        pairs: transitions in the exponent
        terminal: transition whose intensity is evaluated at T
        t: base time
        T: end time or array of end times
        step: Riccati step for an affine source

    Returns:
        Transform values with the shape of T
    """
    T_arr = _check_times(t, T)
    pairs = list(pairs)

    if isinstance(source, ScenarioSet):
        values = sum(
            w * np.exp(-path.integral(pairs, t, T_arr)) * path.rate(terminal)(T_arr)
            for w, path in zip(source.weights, source.scenarios)
        )
        return np.asarray(values, dtype=float)

    deterministic = sum((source.offset(p).integral(t, T_arr) for p in pairs), np.zeros(T_arr.shape))
    transform, tilted = source.moments(source.total_loading(pairs), t, T_arr.ravel(), step)
    conditional = source.offset(terminal)(T_arr.ravel()) + source.loading(terminal) @ tilted
    return (np.exp(-deterministic.ravel()) * transform * conditional).reshape(T_arr.shape)
