"""Protocol definitions: each study expands into seeded runs of the loop (or the probe).

Seed discipline: a run's loop seed depends only on (master seed, repeat), so
every arm and sweep point of a protocol starts repeat ``r`` from the same
initial archive. Instance, shift and view seeds are likewise derived from the
master seed with fixed stream tags and never from wall-clock or OS entropy.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import problems as P
from .backends import ReplayBackend, build_backend, record_transcript
from .config import ExperimentConfig
from .engine import (
    Archive,
    GenerationContext,
    GenerationRecord,
    LoopConfig,
    Outcome,
    RunOutcome,
    RunStatus,
    archive_update,
    run_loop,
    spawn_streams,
)
from .errors import BackendError
from .oracle import optimality_gap, reference_length
from .prompting import NumberFormat, PromptBuilder, get_template
from .tasks import ContinuousTask, Task, TspTask
from .tsp import TspInstance, load_fixture, load_instance, make_view, random_instance

log = logging.getLogger(__name__)

# stream tags for derive_seed; changing these changes every derived seed
SEED_RUN, SEED_INSTANCE, SEED_SHIFT, SEED_VIEW, SEED_SIGN = range(5)

PROBE_CENTERS = {1: (-2.5, 2.5), 2: (3.0, -1.5)}
PROBE_SPREAD = 0.75
PROBE_ARCHIVE_SIZE = 16
PROBE_CHI2_BINS = 4
PROBE_ALPHA = 0.01


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    point: int
    arm: str
    problem_id: str
    repeat: int
    task: Task
    fmt: NumberFormat
    loop: LoopConfig
    order: str = "descend"
    sweep_value: Any = None
    optimal_length: float | None = None
    probe: dict[str, Any] | None = None


@dataclass
class ProtocolResult:
    config: ExperimentConfig
    runs: list[dict[str, Any]]
    outcomes: dict[str, RunOutcome] = field(default_factory=dict)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "", text.replace(".", "p")) or "x"


def _spec(config: ExperimentConfig, point: int, arm: str, problem_id: str, repeat: int, task: Task, **kw) -> RunSpec:
    loop = LoopConfig(rng_seed=derive_seed(config.seed, SEED_RUN, repeat), **config.loop)
    fmt = kw.pop("fmt", NumberFormat(config.prompt["decimal_digits"]))
    return RunSpec(
        run_id=f"p{point:02d}-{_slug(arm)}-r{repeat}",
        point=point,
        arm=arm,
        problem_id=problem_id,
        repeat=repeat,
        task=task,
        fmt=fmt,
        loop=loop,
        order=kw.pop("order", config.prompt["order"]),
        **kw,
    )


def _tsp_instance(entry: dict[str, Any], master: int) -> tuple[TspInstance, str]:
    if entry.get("fixture"):
        return load_fixture(entry["fixture"]), entry["fixture"]
    if entry.get("instance"):
        inst = load_instance(entry["instance"])
        return inst, Path(entry["instance"]).stem
    n = entry["n_cities"]
    return random_instance(n, derive_seed(master, SEED_INSTANCE, n)), f"tsp-{n}"


# -- planning ----------------------------------------------------------------


def plan_baseline(config: ExperimentConfig) -> list[RunSpec]:
    specs = []
    for point, entry in enumerate(config.params["problems"]):
        if entry["type"] == "tsp":
            inst, pid = _tsp_instance(entry, config.seed)
            task: Task = TspTask(inst)
            optimum = reference_length(inst)
        else:
            problem = P.problem_from_dict(entry, path=f"params.problems[{point}]")
            task, pid, optimum = ContinuousTask(problem), problem.label, None
        for r in range(config.repeats):
            specs.append(_spec(config, point, "baseline", pid, r, task, optimal_length=optimum))
    return specs


def _shifted_problem(config: ExperimentConfig, function: str, dimension: int, repeat: int) -> P.ContinuousProblem:
    lo, hi = config.params["shift_range"]
    base = P.make_problem(function, dimension)
    return P.make_shifted(base, derive_seed(config.seed, SEED_SHIFT, repeat), lo, hi)


def plan_precision_sweep(config: ExperimentConfig) -> list[RunSpec]:
    p = config.params
    specs = []
    for point, digits in enumerate(p["digits"]):
        for r in range(config.repeats):
            problem = _shifted_problem(config, p["function"], p["dimension"], r)
            specs.append(
                _spec(config, point, f"d={digits}", problem.label, r, ContinuousTask(problem),
                      fmt=NumberFormat(digits), sweep_value=digits)
            )
    return specs


def plan_dimension_scaling(config: ExperimentConfig) -> list[RunSpec]:
    p = config.params
    specs = []
    for point, dim in enumerate(p["dimensions"]):
        for r in range(config.repeats):
            problem = _shifted_problem(config, p["function"], dim, r)
            specs.append(_spec(config, point, f"N={dim}", problem.label, r, ContinuousTask(problem), sweep_value=dim))
    return specs


def shift_signs(master: int, repeat: int, dimension: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(master, SEED_SIGN, repeat))
    return rng.choice([-1.0, 1.0], size=dimension)


def plan_shift_sweep(config: ExperimentConfig) -> list[RunSpec]:
    p = config.params
    specs = []
    point = 0
    for function in p["functions"]:
        for magnitude in p["magnitudes"]:
            for r in range(config.repeats):
                shift = magnitude * shift_signs(config.seed, r, p["dimension"])
                problem = P.with_shift(P.make_problem(function, p["dimension"]), shift.tolist())
                specs.append(
                    _spec(config, point, f"shift={magnitude:g}", f"{function}-{p['dimension']}d", r,
                          ContinuousTask(problem), sweep_value=magnitude)
                )
            point += 1
    return specs


def plan_coord_heuristics(config: ExperimentConfig) -> list[RunSpec]:
    p = config.params
    entry = {"instance": p["instance"]} if p.get("instance") else {"n_cities": p["n_cities"]}
    inst, pid = _tsp_instance(entry, config.seed)
    optimum = reference_length(inst)
    view_seed = derive_seed(config.seed, SEED_VIEW)
    specs = []
    for point, mode in enumerate(p["views"]):
        task = TspTask(inst, make_view(inst, mode, view_seed))
        for r in range(config.repeats):
            specs.append(_spec(config, point, mode, pid, r, task, optimal_length=optimum))
    return specs


def plan_cityname_heuristics(config: ExperimentConfig) -> list[RunSpec]:
    p = config.params
    inst = load_fixture(p["fixture"])
    optimum = reference_length(inst)
    specs = []
    for point, mode in enumerate(p["settings"]):
        task = TspTask(inst, make_view(inst, mode))
        for r in range(config.repeats):
            specs.append(_spec(config, point, mode, p["fixture"], r, task, optimal_length=optimum))
    return specs


def probe_archive(set_id: int, problem: P.ContinuousProblem) -> Archive:
    """One of the two fixed 16-point archives, clustered around a documented centre (seed 1000 + set)."""
    rng = np.random.default_rng(1000 + set_id)
    centre = np.asarray(PROBE_CENTERS[set_id])
    pts = np.clip(centre + rng.normal(0.0, PROBE_SPREAD, size=(PROBE_ARCHIVE_SIZE, 2)), *problem.bounds)
    cands = [(tuple(float(v) for v in pt), P.evaluate(problem, pt)) for pt in pts]
    return archive_update(Archive(PROBE_ARCHIVE_SIZE), cands)


def plan_sampling_probe(config: ExperimentConfig) -> list[RunSpec]:
    p = config.params
    lo, hi = p["shift_range"]
    base = P.make_problem(p["function"], 2)
    shifted = P.make_shifted(base, derive_seed(config.seed, SEED_SHIFT, 0), lo, hi)
    specs = []
    point = 0
    for set_id in p["archive_sets"]:
        for shift_mode in p["shifts"]:
            problem = shifted if shift_mode == "shifted" else base
            archive = probe_archive(set_id, problem)
            for order in p["orders"]:
                arm = f"set{set_id}-{shift_mode}-{order}"
                for r in range(config.repeats):
                    specs.append(
                        _spec(config, point, arm, problem.label, r, ContinuousTask(problem), order=order,
                              probe={"archive": archive, "sample_count": p["sample_count"],
                                     "bins": p["histogram_bins"], "set": set_id, "shift_mode": shift_mode})
                    )
                point += 1
    return specs


PLANNERS: dict[str, Callable[[ExperimentConfig], list[RunSpec]]] = {
    "baseline": plan_baseline,
    "precision_sweep": plan_precision_sweep,
    "dimension_scaling": plan_dimension_scaling,
    "shift_sweep": plan_shift_sweep,
    "sampling_probe": plan_sampling_probe,
    "coord_heuristics": plan_coord_heuristics,
    "cityname_heuristics": plan_cityname_heuristics,
}


# -- execution ---------------------------------------------------------------


def _builder(spec: RunSpec, instruction_id: int) -> PromptBuilder:
    template = get_template(spec.task.kind, instruction_id)  # type: ignore[arg-type]
    return PromptBuilder(spec.task.render_task(spec.fmt, template), template, spec.fmt, spec.order)  # type: ignore[arg-type]


def _base_summary(config: ExperimentConfig, spec: RunSpec) -> dict[str, Any]:
    return {
        "run_id": spec.run_id,
        "protocol": config.protocol,
        "point": spec.point,
        "arm": spec.arm,
        "problem": spec.problem_id,
        "repeat": spec.repeat,
        "seed": spec.loop.rng_seed,
        "kind": "probe" if spec.probe else spec.task.kind,
        "sweep_value": spec.sweep_value,
        "decimal_digits": spec.fmt.decimal_digits,
        "task": _task_dict(spec.task),
    }


def _task_dict(task: Task) -> dict[str, Any]:
    if isinstance(task, ContinuousTask):
        return P.problem_to_dict(task.problem)
    return {"type": "tsp", "n_cities": task.instance.n, "metric": task.instance.metric.value, "view": task.view.mode.value}


def execute_loop_run(config: ExperimentConfig, spec: RunSpec, backend) -> tuple[RunOutcome, dict[str, Any]]:
    builder = _builder(spec, config.prompt["instruction_id"])
    outcome = run_loop(spec.task, backend, builder, spec.loop, run_id=spec.run_id, fmt=spec.fmt)
    summary = _base_summary(config, spec)
    gap = None
    if spec.optimal_length is not None:
        gap = optimality_gap(outcome.best_fitness, spec.optimal_length)
    summary.update(
        status=outcome.status.value,
        best_fitness=outcome.best_fitness,
        best_solution=list(outcome.best_solution),
        initial_best=outcome.initial_best,
        total_retries=outcome.total_retries,
        n_queries=len(outcome.records),
        failed_iteration=outcome.failed_iteration,
        best_trace=list(outcome.best_trace),
        optimal_length=spec.optimal_length,
        gap_percent=gap,
        context_length_errors=outcome.error_count("ContextLength"),
        prompt_chars=len(outcome.records[0].prompt_text) if outcome.records else None,
    )
    return outcome, summary


def chi_square_uniform(points: np.ndarray, bounds: tuple[float, float], bins: int = PROBE_CHI2_BINS) -> tuple[float, float]:
    """(statistic, p-value) for uniformity of 2-D points over a bins x bins grid on the box."""
    lo, hi = bounds
    counts, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=bins, range=[[lo, hi], [lo, hi]])
    expected = len(points) / bins**2
    stat = float(np.sum((counts - expected) ** 2 / expected))
    return stat, float(stats.chi2.sf(stat, bins**2 - 1))


def grid_artifact_score(points: np.ndarray, step: float = 0.5, tol: float = 1e-9) -> float:
    """Fraction of samples whose every coordinate is an integer multiple of ``step``."""
    if len(points) == 0:
        return 0.0
    scaled = points / step
    on_grid = np.all(np.abs(scaled - np.round(scaled)) <= tol, axis=1)
    return float(np.mean(on_grid))


def execute_probe(config: ExperimentConfig, spec: RunSpec, backend, clock=None) -> tuple[RunOutcome, dict[str, Any]]:
    """Query the backend ``sample_count`` times with one fixed prompt and describe the replies."""
    archive: Archive = spec.probe["archive"]  # type: ignore[index]
    prompt = _builder(spec, config.prompt["instruction_id"])(archive.entries)
    _, backend_rng = spawn_streams(spec.loop.rng_seed)
    ctx = GenerationContext(spec.run_id, spec.task, spec.fmt, backend_rng, archive, iteration=1)
    records = []
    samples = []
    for i in range(spec.probe["sample_count"]):  # type: ignore[index]
        try:
            raw = backend.generate(prompt, ctx)
        except BackendError as exc:
            records.append(GenerationRecord(1, i, 0, prompt, "", Outcome.BACKEND_ERROR, exc.kind))
            continue
        parsed = spec.task.parse(raw)
        if not parsed.ok:
            records.append(GenerationRecord(1, i, 0, prompt, raw, Outcome.PARSE_ERROR, parsed.error.value))
            continue
        fit = spec.task.evaluate(parsed.payload)
        records.append(GenerationRecord(1, i, 0, prompt, raw, Outcome.VALID, None, parsed.payload, fit))
        samples.append(parsed.payload)

    best_sol, best_fit = archive.best
    pts = np.asarray(samples, dtype=float).reshape(-1, 2)
    bounds = spec.task.problem.bounds  # type: ignore[union-attr]
    chi2_stat, p_value = chi_square_uniform(pts, bounds) if len(pts) else (None, None)
    distances = np.linalg.norm(pts - np.asarray(best_sol), axis=1) if len(pts) else np.empty(0)
    hist, xedges, yedges = np.histogram2d(
        pts[:, 0], pts[:, 1], bins=spec.probe["bins"], range=[list(bounds), list(bounds)]  # type: ignore[index]
    )
    excluded = len(records) - len(samples)
    outcome = RunOutcome(
        spec.run_id, RunStatus.COMPLETED, best_sol, best_fit, excluded, tuple(records),
        (best_fit,), tuple(archive.entries),
    )
    summary = _base_summary(config, spec)
    summary.update(
        status=RunStatus.COMPLETED.value,
        order=spec.order,
        archive_set=spec.probe["set"],  # type: ignore[index]
        shift_mode=spec.probe["shift_mode"],  # type: ignore[index]
        shift=list(spec.task.problem.shift),  # type: ignore[union-attr]
        prompt_sha256=hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
        prompt_chars=len(prompt),
        archive=[[list(s), f] for s, f in archive.entries],
        best_solution=list(best_sol),
        best_fitness=best_fit,
        sample_count=spec.probe["sample_count"],  # type: ignore[index]
        valid_count=len(samples),
        excluded_count=excluded,
        total_retries=excluded,
        samples=pts.tolist(),
        chi2=chi2_stat,
        chi2_p_value=p_value,
        chi2_critical=float(stats.chi2.ppf(1 - PROBE_ALPHA, PROBE_CHI2_BINS**2 - 1)),
        grid_score=grid_artifact_score(pts),
        distances=distances.tolist(),
        mean_distance_to_best=float(distances.mean()) if len(distances) else None,
        valid_fraction=len(samples) / spec.probe["sample_count"],  # type: ignore[index]
        histogram={"x_edges": xedges.tolist(), "y_edges": yedges.tolist(), "counts": hist.astype(int).tolist()},
    )
    return outcome, summary


def execute(config: ExperimentConfig, specs: list[RunSpec], backend, parallel: int = 1) -> ProtocolResult:
    def one(spec: RunSpec):
        log.info("running %s", spec.run_id)
        if spec.probe is not None:
            return execute_probe(config, spec, backend)
        return execute_loop_run(config, spec, backend)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(one, specs))
    else:
        results = [one(s) for s in specs]
    outcomes = {o.run_id: o for o, _ in results}
    runs = sorted((s for _, s in results), key=lambda s: (s["point"], s["repeat"]))
    return ProtocolResult(config, runs, outcomes)


def task_kinds(config: ExperimentConfig) -> set[str]:
    """Kinds of task ("tsp", "continuous") a config will hand to its backend."""
    if config.protocol == "baseline":
        return {"tsp" if e["type"] == "tsp" else "continuous" for e in config.params["problems"]}
    if config.protocol in ("coord_heuristics", "cityname_heuristics"):
        return {"tsp"}
    return {"continuous"}


def check_backend(config: ExperimentConfig, backend) -> None:
    """Raise ConfigError if ``backend`` cannot serve every task of ``config``."""
    check = getattr(backend, "check_task", None)
    if check is not None:
        for kind in sorted(task_kinds(config)):
            check(kind)


def run_protocol(
    config: ExperimentConfig, backend=None, parallel: int = 1, points: set[int] | None = None
) -> ProtocolResult:
    """Plan and execute every run of ``config``; ``points`` restricts to those sweep points."""
    backend = backend if backend is not None else build_backend(config.backend)
    specs = PLANNERS[config.protocol](config)
    if points is not None:
        specs = [s for s in specs if s.point in points]
    check_backend(config, backend)
    return execute(config, specs, backend, parallel)


def run_baseline(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "baseline"), backend, parallel)


def run_precision_sweep(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "precision_sweep"), backend, parallel)


def run_dimension_scaling(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "dimension_scaling"), backend, parallel)


def run_shift_sweep(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "shift_sweep"), backend, parallel)


def run_sampling_probe(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "sampling_probe"), backend, parallel)


def run_coord_heuristics(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "coord_heuristics"), backend, parallel)


def run_cityname_heuristics(config: ExperimentConfig, backend=None, parallel: int = 1) -> ProtocolResult:
    return run_protocol(_as(config, "cityname_heuristics"), backend, parallel)


def _as(config: ExperimentConfig, protocol: str) -> ExperimentConfig:
    if config.protocol != protocol:
        raise ValueError(f"config describes protocol {config.protocol!r}, not {protocol!r}")
    return config


# -- on-disk experiments -----------------------------------------------------


def write_run_artifacts(out_dir: Path, result: ProtocolResult) -> None:
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    config_hash = result.config.hash()
    for summary in result.runs:
        outcome = result.outcomes[summary["run_id"]]
        if outcome.records:
            record_transcript(outcome, runs_dir / f"{summary['run_id']}.jsonl", config_hash)
        text = json.dumps(summary, indent=1, sort_keys=True) + "\n"
        (runs_dir / f"{summary['run_id']}.json").write_text(text, encoding="utf-8")


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, backend=None, parallel: int = 1
) -> ProtocolResult:
    """Execute a protocol and lay out config.json, runs/, summary.csv and plotdata/."""
    from .reporting import write_reports

    backend = backend if backend is not None else build_backend(config.backend)
    check_backend(config, backend)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    result = run_protocol(config, backend, parallel)
    write_run_artifacts(out_dir, result)
    write_reports(out_dir)
    return result


def replay_experiment(run_dir: str | Path, out_dir: str | Path, parallel: int = 1) -> ProtocolResult:
    """Re-execute a recorded experiment from its transcripts instead of its backend."""
    from .config import validate_config

    run_dir = Path(run_dir)
    config = validate_config(json.loads((run_dir / "config.json").read_text(encoding="utf-8")))
    transcripts = (run_dir / "runs").resolve()
    backend = ReplayBackend(transcripts, config_hash=config.hash())
    config = replace(config, backend={"kind": "replay", "transcript_dir": str(transcripts)})
    return run_experiment(config, out_dir, backend=backend, parallel=parallel)
