"""
Utility Functions
Numerical helpers shared across modules: the RK4 core, quadrature,
transition keys, hashing and progress display
"""

from typing import Any, Callable, Iterable, Tuple
import hashlib
import json

import numpy as np
from scipy.integrate import cumulative_simpson


Transition = Tuple[int, int]


class SolverError(RuntimeError):
    """Numerical solve failed (non-finite values, blow-up, singular system)"""


def rk4_solve(
    derivative: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    nodes: np.ndarray,
) -> np.ndarray:
    """
    Fixed-step classical Runge-Kutta integration over the given nodes

    Args:
        derivative: f(s, y) returning dy/ds with the shape of y
        y0: state at nodes[0]
        nodes: monotone increasing evaluation points, one RK4 step per gap

    Returns:
        Array of shape (len(nodes),) + y0.shape with the solution at every node

    Raises:
        SolverError: if a stage produces a non-finite value
    """
    y = np.array(y0, dtype=float)
    out = np.empty((len(nodes),) + y.shape)
    out[0] = y

    for i in range(len(nodes) - 1):
        s = nodes[i]
        h = nodes[i + 1] - s
        k1 = derivative(s, y)
        k2 = derivative(s + h / 2, y + h / 2 * k1)
        k3 = derivative(s + h / 2, y + h / 2 * k2)
        k4 = derivative(s + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

        if not np.all(np.isfinite(y)):
            raise SolverError(f"RK4 step from {s:.6g} to {s + h:.6g} produced non-finite values")
        out[i + 1] = y

    return out


def cumulative_integral(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Cumulative Simpson integral along the last axis, starting at 0"""
    values = np.asarray(values, dtype=float)
    if len(nodes) < 3:
        increments = 0.5 * (values[..., 1:] + values[..., :-1]) * np.diff(nodes)
        return np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(increments, axis=-1)], axis=-1)
    return cumulative_simpson(values, x=nodes, axis=-1, initial=0.0)


def parse_transition(key: Any) -> Transition:
    """Parse '0-1', '0->1', [0, 1] or (0, 1) into a transition pair"""
    if isinstance(key, (list, tuple)) and len(key) == 2:
        return int(key[0]), int(key[1])

    text = str(key).replace(">", "").replace(" ", "")
    parts = text.split("-")
    if len(parts) != 2 or not all(p.lstrip("+").isdigit() for p in parts):
        raise ValueError(f"Cannot parse transition '{key}' (expected 'j-k')")
    return int(parts[0]), int(parts[1])


def format_transition(pair: Transition) -> str:
    """Format a transition pair as 'j-k'"""
    return f"{pair[0]}-{pair[1]}"


def hash_string(text: str, length: int = 64) -> str:
    """SHA-256 hex digest of text, truncated"""
    return hashlib.sha256(text.encode()).hexdigest()[:length]


def canonical_json(data: Any) -> str:
    """Deterministic JSON text used for cache keys"""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if hasattr(value, "describe"):
        return value.describe()
    return repr(value)


def max_abs(values: Iterable[float]) -> float:
    """Max absolute value ignoring NaN entries (0 for empty input)"""
    if not isinstance(values, np.ndarray):
        values = list(values)
    arr = np.abs(np.asarray(values, dtype=float)).ravel()
    arr = arr[np.isfinite(arr)]
    return float(arr.max()) if arr.size else 0.0


class ProgressTracker:
    """Simple progress tracker for long operations"""

    def __init__(self, total: int, description: str = "Processing", enabled: bool = True):
        self.total = total
        self.current = 0
        self.description = description
        self.enabled = enabled

    def update(self, increment: int = 1):
        """Update progress"""
        self.current += increment
        if self.enabled:
            self._display()

    def _display(self):
        """Display progress bar"""
        if self.total == 0:
            return

        percentage = (self.current / self.total) * 100
        bar_length = 40
        filled = int(bar_length * self.current / self.total)
        bar = "#" * filled + "." * (bar_length - filled)

        print(f"\r{self.description}: [{bar}] {percentage:.1f}%", end="", flush=True)

        if self.current >= self.total:
            print()
