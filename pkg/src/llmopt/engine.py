"""The elitist prompt -> generate -> validate -> update loop.

One run owns its archive and random streams. The initial archive is drawn
from a stream spawned off ``LoopConfig.rng_seed`` and nothing else, so every
backend and every prompt view starts from the same solutions.
"""

from __future__ import annotations

import enum
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import BackendError
from .tasks import Task

log = logging.getLogger(__name__)


# -- archive -----------------------------------------------------------------


@dataclass(frozen=True)
class Archive:
    """Top-``capacity`` unique solutions, stored worst to best.

    ``_seq`` holds insertion order, used to keep the earlier entry on ties.
    """

    capacity: int
    _items: tuple[tuple[tuple[Any, ...], float, int], ...] = ()
    _next_seq: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("archive capacity must be positive")

    @property
    def entries(self) -> list[tuple[tuple[Any, ...], float]]:
        return [(sol, fit) for sol, fit, _ in self._items]

    @property
    def best(self) -> tuple[tuple[Any, ...], float]:
        sol, fit, _ = self._items[-1]
        return sol, fit

    @property
    def best_fitness(self) -> float:
        return self._items[-1][1]

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, solution: object) -> bool:
        return any(sol == solution for sol, _, _ in self._items)


def archive_update(archive: Archive, candidates: Iterable[tuple[Sequence[Any], float]]) -> Archive:
    items = list(archive._items)
    seen = {sol for sol, _, _ in items}
    seq = archive._next_seq
    for sol, fit in candidates:
        sol = tuple(sol)
        if sol in seen:
            continue
        seen.add(sol)
        items.append((sol, float(fit), seq))
        seq += 1
    kept = sorted(items, key=lambda it: (it[1], it[2]))[: archive.capacity]
    return Archive(archive.capacity, tuple(reversed(kept)), seq)


# -- records -----------------------------------------------------------------


class Outcome(str, enum.Enum):
    VALID = "Valid"
    PARSE_ERROR = "ParseError"
    BACKEND_ERROR = "BackendError"


class RunStatus(str, enum.Enum):
    COMPLETED = "Completed"
    FAILED = "Failed"


@dataclass(frozen=True)
class GenerationRecord:
    iteration: int
    slot: int
    attempt_index: int
    prompt_text: str
    raw_response: str
    outcome: Outcome
    error_kind: str | None = None
    solution: tuple[Any, ...] | None = None
    fitness: float | None = None
    elapsed: float = field(default=0.0, compare=False)

    @property
    def valid(self) -> bool:
        return self.outcome is Outcome.VALID


@dataclass(frozen=True)
class LoopConfig:
    n: int = 16
    m: int = 4
    max_iterations: int = 100
    retry_cap: int = 100
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n", "m", "retry_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")


@dataclass(frozen=True)
class RunOutcome:
    run_id: str
    status: RunStatus
    best_solution: tuple[Any, ...]
    best_fitness: float
    total_retries: int
    records: tuple[GenerationRecord, ...]
    best_trace: tuple[float, ...]
    archive: tuple[tuple[tuple[Any, ...], float], ...]
    failed_iteration: int | None = None

    @property
    def completed(self) -> bool:
        return self.status is RunStatus.COMPLETED

    @property
    def initial_best(self) -> float:
        return self.best_trace[0]

    def error_count(self, kind: str) -> int:
        return sum(1 for r in self.records if r.error_kind == kind)


# -- loop --------------------------------------------------------------------


class Backend(Protocol):
    def generate(self, prompt: str, ctx: "GenerationContext") -> str: ...


@dataclass
class GenerationContext:
    """Per-run state handed to a backend on every query."""

    run_id: str
    task: Task
    fmt: Any
    rng: np.random.Generator
    archive: Archive | None = None
    iteration: int = 0
    state: dict[str, Any] = field(default_factory=dict)


def spawn_streams(rng_seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(initialisation stream, backend stream) for one run."""
    init_seq, backend_seq = np.random.SeedSequence(rng_seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(backend_seq)


def initial_archive(task: Task, n: int, rng: np.random.Generator) -> Archive:
    sols = [task.random_solution(rng) for _ in range(n)]
    return archive_update(Archive(n), [(s, task.evaluate(s)) for s in sols])


def run_loop(
    task: Task,
    backend: Backend,
    prompt_builder: Callable[[list[tuple[tuple[Any, ...], float]]], str],
    config: LoopConfig,
    *,
    run_id: str = "run",
    fmt: Any = None,
    clock: Callable[[], float] = time.perf_counter,
) -> RunOutcome:
    init_rng, backend_rng = spawn_streams(config.rng_seed)
    archive = initial_archive(task, config.n, init_rng)
    ctx = GenerationContext(run_id=run_id, task=task, fmt=fmt, rng=backend_rng)
    trace = [archive.best_fitness]
    records: list[GenerationRecord] = []
    retries = 0
    failed_at: int | None = None

    for it in range(1, config.max_iterations + 1):
        prompt = prompt_builder(archive.entries)
        ctx.archive, ctx.iteration = archive, it
        candidates: list[tuple[tuple[Any, ...], float]] = []
        for slot in range(config.m):
            for attempt in range(config.retry_cap):
                rec = _query(task, backend, prompt, ctx, it, slot, attempt, clock)
                records.append(rec)
                if rec.valid:
                    candidates.append((rec.solution, rec.fitness))  # type: ignore[arg-type]
                    break
                retries += 1
            else:
                failed_at = it
                break
        archive = archive_update(archive, candidates)
        trace.append(archive.best_fitness)
        if failed_at is not None:
            log.info("%s: retry cap exhausted at iteration %d", run_id, it)
            break

    best_sol, best_fit = archive.best
    return RunOutcome(
        run_id=run_id,
        status=RunStatus.FAILED if failed_at is not None else RunStatus.COMPLETED,
        best_solution=best_sol,
        best_fitness=best_fit,
        total_retries=retries,
        records=tuple(records),
        best_trace=tuple(trace),
        archive=tuple(archive.entries),
        failed_iteration=failed_at,
    )


def _query(task, backend, prompt, ctx, it, slot, attempt, clock) -> GenerationRecord:
    start = clock()
    try:
        raw = backend.generate(prompt, ctx)
    except BackendError as exc:
        return GenerationRecord(
            it, slot, attempt, prompt, "", Outcome.BACKEND_ERROR, exc.kind, elapsed=clock() - start
        )
    parsed = task.parse(raw)
    if not parsed.ok:
        return GenerationRecord(
            it, slot, attempt, prompt, raw, Outcome.PARSE_ERROR, parsed.error.value, elapsed=clock() - start
        )
    fitness = task.evaluate(parsed.payload)
    return GenerationRecord(
        it, slot, attempt, prompt, raw, Outcome.VALID, None, parsed.payload, fitness, elapsed=clock() - start
    )


# -- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class Aggregate:
    """Mean metric and retrials over completed runs; ``mean is None`` means all failed."""

    values: tuple[float | None, ...]
    mean: float | None
    failure_count: int
    failure_rate: float
    retrials_mean: float | None

    @property
    def available(self) -> bool:
        return self.mean is not None


def collect_metrics(
    outcomes: Sequence[RunOutcome], metric: Callable[[RunOutcome], float] | None = None
) -> Aggregate:
    if not outcomes:
        raise ValueError("need at least one run outcome")
    metric = metric or (lambda o: o.best_fitness)
    values = tuple(metric(o) if o.completed else None for o in outcomes)
    done = [o for o in outcomes if o.completed]
    failed = len(outcomes) - len(done)
    return Aggregate(
        values=values,
        mean=statistics.fmean(v for v in values if v is not None) if done else None,
        failure_count=failed,
        failure_rate=failed / len(outcomes),
        retrials_mean=statistics.fmean(o.total_retries for o in done) if done else None,
    )
