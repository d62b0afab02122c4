"""Adapters that give the optimisation loop one interface for both problem kinds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import problems as P
from .parsing import ParseOutcome, parse_solution, parse_trace
from .prompting import NumberFormat, PromptTemplate, render_solution, render_task
from .tsp import PromptView, TspInstance, ViewMode, make_view, tour_length


@dataclass(frozen=True)
class ContinuousTask:
    problem: P.ContinuousProblem
    kind: str = field(default="continuous", init=False)

    @property
    def label(self) -> str:
        return self.problem.label

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    def random_solution(self, rng: np.random.Generator) -> tuple[float, ...]:
        return P.random_solution(self.problem, rng)

    def evaluate(self, solution: Sequence[float]) -> float:
        return P.evaluate(self.problem, solution)

    def parse(self, response: str) -> ParseOutcome:
        return parse_solution(response, self.problem.dimension, self.problem.bounds)

    def render_solution(self, solution: Sequence[Any], fmt: NumberFormat | None = None) -> str:
        return render_solution(solution, "continuous", fmt)

    def render_task(self, fmt: NumberFormat, template: PromptTemplate | None = None) -> str:
        return render_task(self.problem, fmt, template)


@dataclass(frozen=True)
class TspTask:
    instance: TspInstance
    view: PromptView | None = None
    kind: str = field(default="tsp", init=False)

    def __post_init__(self) -> None:
        if self.view is None:
            object.__setattr__(self, "view", make_view(self.instance, ViewMode.TRUE))

    @property
    def label(self) -> str:
        return f"tsp-{self.instance.n}"

    @property
    def dimension(self) -> int:
        return self.instance.n

    def random_solution(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(i) for i in rng.permutation(self.instance.n))

    def evaluate(self, solution: Sequence[int]) -> float:
        return tour_length(self.instance, solution)

    def parse(self, response: str) -> ParseOutcome:
        return parse_trace(response, self.instance.n)

    def render_solution(self, solution: Sequence[Any], fmt: NumberFormat | None = None) -> str:
        return render_solution(solution, "tsp")

    def render_task(self, fmt: NumberFormat, template: PromptTemplate | None = None) -> str:
        return render_task(self.view, fmt, template)  # type: ignore[arg-type]


Task = ContinuousTask | TspTask
