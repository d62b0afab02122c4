"""Continuous benchmark functions and their shift/bounds wrappers.

All functions are minimised and evaluated on ``x - shift``, so the optimum
of a shifted problem moves to ``+shift`` (``+shift + 1`` for Rosenbrock).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DimensionError


class FunctionName(str, enum.Enum):
    ACKLEY = "ackley"
    GRIEWANK = "griewank"
    RASTRIGIN = "rastrigin"
    ROSENBROCK = "rosenbrock"
    SPHERE = "sphere"


DEFAULT_BOUNDS: dict[FunctionName, tuple[float, float]] = {
    FunctionName.ACKLEY: (-32.768, 32.768),
    FunctionName.GRIEWANK: (-600.0, 600.0),
    FunctionName.RASTRIGIN: (-5.12, 5.12),
    FunctionName.ROSENBROCK: (-5.0, 10.0),
    FunctionName.SPHERE: (-5.12, 5.12),
}


def ackley(z: np.ndarray, a: float = 20.0, b: float = 0.2, c: float = 2 * math.pi) -> np.ndarray:
    n = z.shape[-1]
    sq = np.sum(z * z, axis=-1) / n
    cs = np.sum(np.cos(c * z), axis=-1) / n
    return -a * np.exp(-b * np.sqrt(sq)) - np.exp(cs) + a + math.e


def griewank(z: np.ndarray) -> np.ndarray:
    idx = np.sqrt(np.arange(1, z.shape[-1] + 1, dtype=float))
    return 1.0 + np.sum(z * z, axis=-1) / 4000.0 - np.prod(np.cos(z / idx), axis=-1)


def rastrigin(z: np.ndarray, a: float = 10.0) -> np.ndarray:
    n = z.shape[-1]
    return a * n + np.sum(z * z - a * np.cos(2 * math.pi * z), axis=-1)


def rosenbrock(z: np.ndarray) -> np.ndarray:
    head, tail = z[..., :-1], z[..., 1:]
    return np.sum(100.0 * (tail - head * head) ** 2 + (1.0 - head) ** 2, axis=-1)


def sphere(z: np.ndarray) -> np.ndarray:
    return np.sum(z * z, axis=-1)


_FUNCTIONS = {
    FunctionName.ACKLEY: ackley,
    FunctionName.GRIEWANK: griewank,
    FunctionName.RASTRIGIN: rastrigin,
    FunctionName.ROSENBROCK: rosenbrock,
    FunctionName.SPHERE: sphere,
}


@dataclass(frozen=True)
class ContinuousProblem:
    """A named benchmark function on a uniform box ``[lower, upper]^dimension``."""

    name: FunctionName
    dimension: int
    lower_bound: float
    upper_bound: float
    shift: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", FunctionName(self.name))
        if self.dimension < 1:
            raise DimensionError(f"dimension must be positive, got {self.dimension}")
        if not self.lower_bound < self.upper_bound:
            raise ValueError(f"empty box [{self.lower_bound}, {self.upper_bound}]")
        shift = tuple(float(s) for s in self.shift) if self.shift else (0.0,) * self.dimension
        if len(shift) != self.dimension:
            raise DimensionError(f"shift has length {len(shift)}, dimension is {self.dimension}")
        object.__setattr__(self, "shift", shift)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.lower_bound, self.upper_bound)

    @property
    def label(self) -> str:
        return f"{self.name.value}-{self.dimension}d"

    @property
    def is_shifted(self) -> bool:
        return any(s != 0.0 for s in self.shift)


def make_problem(
    name: str | FunctionName,
    dimension: int = 2,
    bounds: tuple[float, float] | None = None,
    shift: Sequence[float] | None = None,
) -> ContinuousProblem:
    fname = FunctionName(name)
    lo, hi = bounds if bounds is not None else DEFAULT_BOUNDS[fname]
    return ContinuousProblem(fname, dimension, float(lo), float(hi), tuple(shift or ()))


def evaluate(problem: ContinuousProblem, x: Sequence[float] | np.ndarray) -> float:
    """Return ``f(x - shift)``. Bounds are not checked here; parsing rejects them."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != problem.dimension:
        raise DimensionError(f"expected a vector of length {problem.dimension}, got shape {arr.shape}")
    z = arr - np.asarray(problem.shift)
    return float(_FUNCTIONS[problem.name](z))


def evaluate_batch(problem: ContinuousProblem, xs: np.ndarray) -> np.ndarray:
    """Vectorised evaluate over the last axis (used for landscape grids)."""
    xs = np.asarray(xs, dtype=float)
    if xs.shape[-1] != problem.dimension:
        raise DimensionError(f"last axis must have length {problem.dimension}")
    return _FUNCTIONS[problem.name](xs - np.asarray(problem.shift))


def with_shift(problem: ContinuousProblem, shift: Sequence[float]) -> ContinuousProblem:
    return replace(problem, shift=tuple(float(s) for s in shift))


def make_shifted(
    problem: ContinuousProblem, rng_seed: int, magnitude_low: float, magnitude_high: float
) -> ContinuousProblem:
    """Copy of ``problem`` with a shift drawn uniformly from ``[low, high]`` per dimension."""
    if magnitude_low > magnitude_high:
        raise ValueError("magnitude_low must not exceed magnitude_high")
    rng = np.random.default_rng(rng_seed)
    shift = rng.uniform(magnitude_low, magnitude_high, size=problem.dimension)
    return with_shift(problem, shift.tolist())


def random_solution(problem: ContinuousProblem, rng: np.random.Generator) -> tuple[float, ...]:
    values = rng.uniform(problem.lower_bound, problem.upper_bound, size=problem.dimension)
    return tuple(float(v) for v in values)


def optimum_location(problem: ContinuousProblem) -> tuple[float, ...]:
    offset = 1.0 if problem.name is FunctionName.ROSENBROCK else 0.0
    return tuple(s + offset for s in problem.shift)


def in_bounds(problem: ContinuousProblem, x: Sequence[float]) -> bool:
    return all(problem.lower_bound <= v <= problem.upper_bound for v in x)


# -- serialization -----------------------------------------------------------


def problem_to_dict(problem: ContinuousProblem) -> dict[str, Any]:
    return {
        "type": "continuous",
        "function": problem.name.value,
        "dimension": problem.dimension,
        "bounds": [problem.lower_bound, problem.upper_bound],
        "shift": list(problem.shift),
    }


def problem_from_dict(data: dict[str, Any], path: str = "problem") -> ContinuousProblem:
    """Build a problem from its config form.

    ``shift`` may be an explicit vector or ``{"seed": s, "low": a, "high": b}``.
    """
    try:
        fname = FunctionName(str(data["function"]).lower())
    except KeyError:
        raise ConfigError("missing 'function'", field=f"{path}.function") from None
    except ValueError:
        raise ConfigError(f"unknown function {data['function']!r}", field=f"{path}.function") from None
    dim = data.get("dimension", 2)
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ConfigError("must be a positive integer", field=f"{path}.dimension")
    bounds = data.get("bounds")
    if bounds is not None:
        if not (isinstance(bounds, list) and len(bounds) == 2 and bounds[0] < bounds[1]):
            raise ConfigError("must be [lower, upper] with lower < upper", field=f"{path}.bounds")
        bounds = (float(bounds[0]), float(bounds[1]))
    problem = make_problem(fname, dim, bounds)
    shift = data.get("shift")
    if shift is None:
        return problem
    if isinstance(shift, dict):
        try:
            return make_shifted(problem, int(shift["seed"]), float(shift["low"]), float(shift["high"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad shift spec ({exc})", field=f"{path}.shift") from None
    if not isinstance(shift, list) or len(shift) != dim:
        raise ConfigError(f"must be a list of {dim} numbers", field=f"{path}.shift")
    return with_shift(problem, shift)
