"""Prompt rendering: task description, history of best solutions, instruction.

Every function here is pure; identical inputs give byte-identical prompts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Literal, Sequence

from .errors import FormatError, RenderError
from .problems import ContinuousProblem
from .tsp import PromptView

Kind = Literal["continuous", "tsp"]
Order = Literal["descend", "ascend"]

_NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten")


@dataclass(frozen=True)
class NumberFormat:
    decimal_digits: int = 5

    def __post_init__(self) -> None:
        if self.decimal_digits < 0:
            raise FormatError("decimal_digits must be non-negative")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    kind: Kind
    task_description: str
    instruction: str
    transition: str = ""


def _to_fixed(value: Decimal) -> str:
    if value == 0:
        value = abs(value)
    return f"{value:f}"


def format_number(x: float, fmt: NumberFormat | int) -> str:
    """Fixed-point with exactly ``d`` decimals, ties rounded away from zero."""
    digits = fmt if isinstance(fmt, int) else fmt.decimal_digits
    x = float(x)
    if not math.isfinite(x):
        raise FormatError(f"cannot format non-finite value {x!r}")
    with localcontext() as ctx:
        ctx.prec = 400 + digits
        q = Decimal(repr(x)).quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP)
    return _to_fixed(q)


def format_exact(x: float) -> str:
    """Shortest round-tripping decimal, written without exponent notation."""
    x = float(x)
    if not math.isfinite(x):
        raise FormatError(f"cannot format non-finite value {x!r}")
    return _to_fixed(Decimal(repr(x)))


def format_plain(x: float) -> str:
    """Integral values without a decimal point, others as their shortest repr."""
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return format_exact(x)


def render_solution(solution: Sequence[Any], kind: Kind, fmt: NumberFormat | None = None) -> str:
    if kind == "tsp":
        return "<trace>" + ",".join(str(int(i)) for i in solution) + "</trace>"
    if fmt is None:
        body = ",".join(format_exact(v) for v in solution)
    else:
        body = ",".join(format_number(v, fmt) for v in solution)
    return "<solution>" + body + "</solution>"


def render_history(
    entries: Iterable[tuple[Sequence[Any], float]],
    fmt: NumberFormat,
    kind: Kind,
    order: Order = "descend",
) -> str:
    """Render archive entries, which arrive worst to best.

    ``descend`` keeps that order (best last), ``ascend`` reverses it.
    """
    entries = list(getattr(entries, "entries", entries))
    if not entries:
        raise RenderError("cannot render an empty archive")
    if order == "ascend":
        entries = entries[::-1]
    elif order != "descend":
        raise RenderError(f"unknown order {order!r}")
    label = "length" if kind == "tsp" else "value"
    blocks = [
        f"{render_solution(sol, kind, fmt)}\n{label}: {format_number(fitness, fmt)}"
        for sol, fitness in entries
    ]
    return "\n\n".join(blocks)


def _coord_text(point: Sequence[float], fmt: NumberFormat) -> str:
    def one(v: float) -> str:
        return str(int(v)) if float(v).is_integer() else format_number(v, fmt)

    return f"({one(point[0])}, {one(point[1])})"


def render_cities(view: PromptView, fmt: NumberFormat) -> str:
    coords = view.displayed_coordinates
    names = view.names
    if coords is None and names is None:
        raise RenderError("view shows neither names nor coordinates")
    n = len(coords) if coords is not None else len(names)  # type: ignore[arg-type]
    items = []
    for i in range(n):
        parts = []
        if names is not None:
            parts.append(names[i])
        if coords is not None:
            parts.append(_coord_text(coords[i], fmt))
        items.append(f"({i}): " + " ".join(parts))
    return ", ".join(items)


def render_task(target: ContinuousProblem | PromptView, fmt: NumberFormat, template: PromptTemplate | None = None) -> str:
    if isinstance(target, ContinuousProblem):
        template = template or get_template("continuous")
        if template.kind != "continuous":
            raise RenderError("continuous problem needs a continuous template")
        n = target.dimension
        return template.task_description.format(
            n_vars=n,
            n_vars_word=_NUMBER_WORDS[n] if n < len(_NUMBER_WORDS) else str(n),
            lower=format_plain(target.lower_bound),
            upper=format_plain(target.upper_bound),
        )
    if isinstance(target, PromptView):
        template = template or get_template("tsp")
        if template.kind != "tsp":
            raise RenderError("TSP view needs a TSP template")
        return template.task_description.format(cities=render_cities(target, fmt))
    raise RenderError(f"cannot render a task for {type(target).__name__}")


def assemble_prompt(template: PromptTemplate, task: str, history: str) -> str:
    parts = [task]
    if template.transition:
        parts.append(template.transition)
    parts.append(history)
    if template.instruction:
        parts.append(template.instruction)
    return "\n\n".join(parts)


# -- prompt pool -------------------------------------------------------------


@lru_cache(maxsize=1)
def load_prompt_pool() -> dict[str, Any]:
    text = resources.files("llmopt.data").joinpath("prompt_pool.json").read_text(encoding="utf-8")
    return json.loads(text)


def pool_size(kind: Kind) -> int:
    return len(load_prompt_pool()[kind]["instructions"])


def get_template(kind: Kind, instruction_id: int = 0) -> PromptTemplate:
    pool = load_prompt_pool()
    if kind not in pool:
        raise RenderError(f"unknown prompt kind {kind!r}")
    entry = pool[kind]
    instructions = entry["instructions"]
    if not 0 <= instruction_id < len(instructions):
        raise RenderError(f"instruction id {instruction_id} outside pool of {len(instructions)}")
    return PromptTemplate(
        id=f"{kind}-{instruction_id}",
        kind=kind,
        task_description=entry["task_description"],
        instruction=instructions[instruction_id],
        transition=entry.get("transition", ""),
    )


@dataclass(frozen=True)
class PromptBuilder:
    """Binds a task text, template and number format; call with archive entries."""

    task_text: str
    template: PromptTemplate
    fmt: NumberFormat
    order: Order = "descend"

    def __call__(self, entries: Iterable[tuple[Sequence[Any], float]]) -> str:
        history = render_history(entries, self.fmt, self.template.kind, self.order)
        return assemble_prompt(self.template, self.task_text, history)
