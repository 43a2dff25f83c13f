"""
Time Functions
Deterministic functions of calendar time with closed-form integrals where
available: intensity paths, payment rates, short rates and affine offsets
"""

from typing import Any, Dict, Sequence, Union

import numpy as np
import sympy as sp

from config import ConfigError

ArrayLike = Union[float, np.ndarray]

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(16)


class TimeFunction:
    """Base class: vectorized evaluation and integration over (a, b]"""

    kind = "abstract"

    def __call__(self, s: ArrayLike) -> np.ndarray:
        raise NotImplementedError

    def integral(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        """Integral over (a, b]; default is Gauss-Legendre on unit pieces"""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        pieces = int(max(1, np.ceil(np.max(np.abs(b - a), initial=0.0))))
        total = np.zeros(a.shape)
        width = (b - a) / pieces

        for p in range(pieces):
            left = a + p * width
            mid = left + width / 2
            for x, w in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
                total = total + w * self(mid + x * width / 2) * width / 2
        return total


    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind}


class ConstantFunction(TimeFunction):
    """s -> value"""

    kind = "constant"

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, s: ArrayLike) -> np.ndarray:
        return np.full(np.shape(s), self.value, dtype=float)

    def integral(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        return self.value * (np.asarray(b, dtype=float) - np.asarray(a, dtype=float))

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "value": self.value}


class PolynomialFunction(TimeFunction):
    """s -> c0 + c1 s + c2 s^2 + ..."""

    kind = "polynomial"

    def __init__(self, coefficients: Sequence[float]):
        self.poly = np.polynomial.Polynomial([float(c) for c in coefficients])
        self.antiderivative = self.poly.integ()

    def __call__(self, s: ArrayLike) -> np.ndarray:
        return np.asarray(self.poly(np.asarray(s, dtype=float)), dtype=float)

    def integral(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        return self.antiderivative(np.asarray(b, dtype=float)) - self.antiderivative(np.asarray(a, dtype=float))

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "coefficients": self.poly.coef.tolist()}


class PiecewiseLinearFunction(TimeFunction):
    """Linear interpolation between knots, flat outside"""

    kind = "piecewise_linear"

    def __init__(self, knots: Sequence[float], values: Sequence[float]):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape or len(self.knots) < 1:
            raise ConfigError("piecewise_linear needs equally long, non-empty knots and values")
        if np.any(np.diff(self.knots) <= 0):
            raise ConfigError("piecewise_linear knots must be strictly increasing")
        segments = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.knots)
        self._cumulative = np.concatenate([[0.0], np.cumsum(segments)])

    def __call__(self, s: ArrayLike) -> np.ndarray:
        return np.interp(np.asarray(s, dtype=float), self.knots, self.values)

    def _antiderivative(self, s: ArrayLike) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        k0, v0 = self.knots[0], self.values[0]
        kn, vn = self.knots[-1], self.values[-1]
        clipped = np.clip(s, k0, kn)
        idx = np.clip(np.searchsorted(self.knots, clipped, side="right") - 1, 0, len(self.knots) - 1)
        base = self._cumulative[idx]
        partial = 0.5 * (self.values[idx] + self(clipped)) * (clipped - self.knots[idx])
        below = np.where(s < k0, (s - k0) * v0, 0.0)
        above = np.where(s > kn, (s - kn) * vn, 0.0)
        return base + partial + below + above

    def integral(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        return self._antiderivative(b) - self._antiderivative(a)

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "knots": self.knots.tolist(), "values": self.values.tolist()}


class GompertzMakehamFunction(TimeFunction):
    """s -> a + b exp(c (age0 + s))"""

    kind = "gompertz_makeham"

    def __init__(self, a: float, b: float, c: float, age0: float = 0.0):
        self.a, self.b, self.c, self.age0 = float(a), float(b), float(c), float(age0)

    def __call__(self, s: ArrayLike) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.a + self.b * np.exp(self.c * (self.age0 + s))

    def integral(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.c == 0.0:
            return (self.a + self.b) * (b - a)
        growth = np.exp(self.c * (self.age0 + b)) - np.exp(self.c * (self.age0 + a))
        return self.a * (b - a) + self.b / self.c * growth

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "a": self.a, "b": self.b, "c": self.c, "age0": self.age0}


class ExpressionFunction(TimeFunction):
    """Expression in t parsed with sympy"""

    kind = "expression"

    def __init__(self, text: str):
        self.text = str(text)
        t = sp.Symbol("t")
        try:
            expr = sp.sympify(self.text, locals={"t": t})
        except (sp.SympifyError, TypeError, SyntaxError) as e:
            raise ConfigError(f"Cannot parse expression '{self.text}': {e}")
        unknown = expr.free_symbols - {t}
        if unknown:
            names = ", ".join(sorted(str(u) for u in unknown))
            raise ConfigError(f"Expression '{self.text}' uses unknown symbols: {names}")
        self._fn = sp.lambdify(t, expr, modules="numpy")

    def __call__(self, s: ArrayLike) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(self._fn(s), dtype=float), s.shape).copy()

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "expr": self.text}


class SumFunction(TimeFunction):
    kind = "sum"

    def __init__(self, terms: Sequence[TimeFunction]):
        self.terms = list(terms)

    def __call__(self, s: ArrayLike) -> np.ndarray:
        total = np.zeros(np.shape(s))
        for term in self.terms:
            total = total + term(s)
        return total

    def integral(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        total = np.zeros(np.broadcast(np.asarray(a), np.asarray(b)).shape)
        for term in self.terms:
            total = total + term.integral(a, b)
        return total

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "terms": [t.describe() for t in self.terms]}


ZERO = ConstantFunction(0.0)


def time_function_from_config(spec: Any) -> TimeFunction:
    """
    Build a TimeFunction from a config value

    Args:
        spec: a number (constant), an expression string, or a mapping with
            'type' in constant | polynomial | piecewise_linear |
            gompertz_makeham | expression | sum

    Returns:
        The corresponding TimeFunction

    Raises:
        ConfigError: on unknown types or missing fields
    """
    if isinstance(spec, TimeFunction):
        return spec
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return ConstantFunction(spec)
    if isinstance(spec, str):
        return parse_rate_expression(spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"Cannot build a time function from {spec!r}")

    kind = spec.get("type", "constant")
    try:
        if kind == "constant":
            return ConstantFunction(spec["value"])
        if kind == "polynomial":
            return PolynomialFunction(spec["coefficients"])
        if kind == "piecewise_linear":
            return PiecewiseLinearFunction(spec["knots"], spec["values"])
        if kind == "gompertz_makeham":
            return GompertzMakehamFunction(spec["a"], spec["b"], spec["c"], spec.get("age0", 0.0))
        if kind == "expression":
            return ExpressionFunction(spec["expr"])
        if kind == "sum":
            return SumFunction([time_function_from_config(t) for t in spec["terms"]])
    except KeyError as e:
        raise ConfigError(f"Time function of type '{kind}' is missing field {e}")

    raise ConfigError(f"Unknown time function type '{kind}'")


def parse_rate_expression(text: str) -> TimeFunction:
    """Parse a CLI rate such as '0', '0.02' or '0.01 + 0.002*t'"""
    try:
        return ConstantFunction(float(text))
    except ValueError:
        return ExpressionFunction(text)
