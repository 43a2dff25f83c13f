"""
Run Configuration
One run of the command line tool: model, intensities, payments, grid and
settings, assembled from a YAML file, an optional preset and CLI flags
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml

from config import Config, ConfigError
from model_graph import GraphError, ModelGraph, PaymentSpec, TimeGrid
from rate_scenarios import AffineSpec, IntensitySource, PosteriorWeights, ScenarioSet, posterior
from time_functions import TimeFunction, time_function_from_config


@dataclass
class MonteCarloSettings:
    paths: int = Config.DEFAULT_PATHS
    seed: int = Config.DEFAULT_SEED
    batch_size: int = Config.MC_BATCH_SIZE


@dataclass
class RunConfig:
    """Everything a CLI command needs, validated"""

    graph: ModelGraph
    source: IntensitySource
    payments: PaymentSpec
    grid: TimeGrid
    definitions: List[str] = field(default_factory=lambda: list(Config.DEFINITIONS))
    states: List[int] = field(default_factory=lambda: [0])
    short_rate: Optional[TimeFunction] = None
    mc: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    output_dir: Path = Config.OUTPUT_DIR
    observed: Optional[int] = None
    workers: int = Config.WORKERS
    repair: bool = False
    name: str = "run"

    @property
    def t(self) -> float:
        return self.grid.t0

    @property
    def start(self) -> int:
        return self.states[0]

    @property
    def posterior(self) -> Optional[PosteriorWeights]:
        """Scenario weights given the observed scenario up to the base time"""
        if self.observed is None or not isinstance(self.source, ScenarioSet):
            return None
        return posterior(self.source, self.observed, self.t, self.grid.step)

    @property
    def conditioned_source(self) -> IntensitySource:
        weights = self.posterior
        return self.source.conditioned(weights) if weights is not None else self.source

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "graph": self.graph.describe(),
            "source": self.source.describe(),
            "payments": self.payments.describe(),
            "grid": self.grid.describe(),
            "observed": self.observed,
            "repair": self.repair,
        }

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        preset: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Read a run file, overlay it on its preset, then apply CLI overrides

        Args:
            path: YAML run file
            preset: preset name (wins over a `preset:` key in the file)
            overrides: flag values; None entries are ignored

        Returns:
            Validated RunConfig

        Raises:
            ConfigError: on the first violated precondition
        """
        data: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"Config file not found: {path}")
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse {path}: {e}")
            if not isinstance(data, dict):
                raise ConfigError(f"{path} must contain a mapping")

        preset = preset or data.pop("preset", None)
        data.pop("preset", None)
        if preset:
            base = Config.load_preset(preset)
            if base is None:
                raise ConfigError(f"Unknown preset '{preset}' (available: {', '.join(Config.preset_names())})")
            merged = dict(base)
            if "scenarios" in data or "affine" in data:
                merged.pop("scenarios", None)
                merged.pop("affine", None)
            merged.update(data)
            merged.setdefault("name", preset)
            data = merged

        return cls.from_mapping(data, overrides)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

        if "graph" not in data:
            raise ConfigError("Missing 'graph' section")
        graph = ModelGraph.from_config(data["graph"])

        has_scenarios, has_affine = "scenarios" in data, "affine" in data
        if has_scenarios == has_affine:
            raise ConfigError("Supply exactly one of 'scenarios' or 'affine'")
        source: IntensitySource = (
            ScenarioSet.from_config(data["scenarios"]) if has_scenarios else AffineSpec.from_config(data["affine"])
        )

        payments = PaymentSpec.from_config(data.get("payments"))

        grid_spec = data.get("grid") or {}
        t = float(overrides.get("t", grid_spec.get("t", 0.0)))
        horizon = float(overrides.get("horizon", grid_spec.get("horizon", Config.DEFAULT_HORIZON)))
        step = float(overrides.get("step", grid_spec.get("step", Config.DEFAULT_STEP)))
        if not horizon > 0:
            raise ConfigError(f"Horizon must be positive (got {horizon})")
        grid = TimeGrid.from_horizon(t, horizon, step)

        definitions = overrides.get("definitions") or data.get("definitions") or list(Config.DEFINITIONS)
        if isinstance(definitions, str):
            definitions = [definitions]
        for definition in definitions:
            if definition not in Config.DEFINITIONS:
                raise ConfigError(f"Unknown definition '{definition}' (expected one of {', '.join(Config.DEFINITIONS)})")

        states = overrides.get("states", data.get("states", [0]))
        states = [int(s) for s in (states if isinstance(states, list) else [states])]
        for s in states:
            if not 0 <= s < graph.num_states:
                raise ConfigError(f"Conditioning state {s} is not a state of the model")

        short_rate = overrides.get("short_rate", data.get("short_rate"))
        if short_rate is not None:
            short_rate = time_function_from_config(short_rate)

        mc_spec = data.get("mc") or {}
        mc = MonteCarloSettings(
            paths=int(overrides.get("paths", mc_spec.get("paths", Config.DEFAULT_PATHS))),
            seed=int(overrides.get("seed", mc_spec.get("seed", Config.DEFAULT_SEED))),
            batch_size=int(mc_spec.get("batch_size", Config.MC_BATCH_SIZE)),
        )
        if mc.paths < 1:
            raise ConfigError(f"Path count must be at least 1 (got {mc.paths})")

        observed = data.get("observed")
        if observed is not None:
            if not isinstance(source, ScenarioSet):
                raise ConfigError("'observed' needs a scenario set")
            if not 0 <= int(observed) < len(source):
                raise ConfigError(f"Observed scenario {observed} out of range 0..{len(source) - 1}")
            observed = int(observed)

        output_dir = Path(overrides.get("out", data.get("out", Config.OUTPUT_DIR)))
        workers = int(overrides.get("workers", data.get("workers", Config.WORKERS)))

        try:
            source.validate_on(grid, graph)
            payments.validate(graph)
        except GraphError as e:
            raise ConfigError(str(e))

        return cls(
            graph=graph,
            source=source,
            payments=payments,
            grid=grid,
            definitions=list(definitions),
            states=states,
            short_rate=short_rate,
            mc=mc,
            output_dir=output_dir,
            observed=observed,
            workers=max(1, workers),
            repair=bool(data.get("repair", False)),
            name=str(data.get("name", "run")),
        )
