"""Summaries and plot-ready data built from the run files of an output directory.

Everything here reads ``runs/*.json`` and writes CSV; nothing is drawn. Floats
are written with ``repr`` so files are locale-independent and round-trip
exactly.
"""

from __future__ import annotations

import csv
import io
import json
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import problems as P
from .errors import DimensionError

SUMMARY_COLUMNS = (
    "protocol",
    "problem",
    "arm",
    "metric",
    "mean",
    "values",
    "repeats",
    "failure_count",
    "failure_rate",
    "retrials_mean",
    "cell",
)

# metrics that only make sense for runs that finished
_LOOP_METRICS = {"gap_percent", "tour_length", "best_fitness"}


@dataclass(frozen=True)
class SummaryRow:
    protocol: str
    point: int
    problem: str
    arm: str
    metric: str
    values: tuple[float | None, ...]
    failure_count: int
    retrials_mean: float | None

    @property
    def repeats(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float | None:
        present = [v for v in self.values if v is not None]
        return statistics.fmean(present) if present else None

    @property
    def failure_rate(self) -> float:
        return self.failure_count / self.repeats

    @property
    def cell(self) -> str:
        """Table-style cell: metric before the slash, failure rate or retrials after it."""
        mean = self.mean
        if mean is None:
            return "-"
        if self.metric == "gap_percent":
            return f"{mean:.2f}% / {self.failure_rate:g}"
        if self.metric == "tour_length":
            return f"{mean:.2f} / {self.failure_rate:g}"
        if self.metric == "best_fitness":
            retrials = "-" if self.retrials_mean is None else f"{self.retrials_mean:.2f}"
            return f"{mean:.5g} / {retrials}"
        return f"{mean:.5g}"


def _num(x: Any) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def load_runs(out_dir: str | Path) -> list[dict[str, Any]]:
    runs_dir = Path(out_dir) / "runs"
    runs = [json.loads(p.read_text(encoding="utf-8")) for p in runs_dir.glob("*.json")]
    if not runs:
        raise FileNotFoundError(f"no run summaries under {runs_dir}")
    return sorted(runs, key=lambda r: (r["point"], r["repeat"], r["run_id"]))


def _metrics_for(group: Sequence[dict[str, Any]], protocol: str) -> list[str]:
    kind = group[0]["kind"]
    if kind == "probe":
        return ["chi2", "grid_score", "mean_distance_to_best", "valid_fraction"]
    if kind == "tsp":
        gap = ["gap_percent"] if all(r.get("optimal_length") is not None for r in group) else []
        return gap + ["tour_length"]
    metrics = ["best_fitness"]
    if protocol == "dimension_scaling":
        metrics += ["prompt_chars", "context_length_errors"]
    return metrics


def _metric_value(run: dict[str, Any], metric: str) -> float | None:
    if metric in _LOOP_METRICS and run["status"] != "Completed":
        return None
    key = "best_fitness" if metric == "tour_length" else metric
    value = run.get(key)
    return None if value is None else float(value)


def summarize(runs: Iterable[dict[str, Any]]) -> list[SummaryRow]:
    """One row per (sweep point, metric), ordered by point index."""
    groups: dict[int, list[dict[str, Any]]] = {}
    for run in sorted(runs, key=lambda r: (r["point"], r["repeat"])):
        groups.setdefault(run["point"], []).append(run)
    if not groups:
        raise ValueError("need at least one run")
    rows = []
    for point in sorted(groups):
        group = groups[point]
        first = group[0]
        done = [r for r in group if r["status"] == "Completed"]
        failed = len(group) - len(done)
        retrials = statistics.fmean(r["total_retries"] for r in done) if done else None
        for metric in _metrics_for(group, first["protocol"]):
            rows.append(
                SummaryRow(
                    protocol=first["protocol"],
                    point=point,
                    problem=first["problem"],
                    arm=first["arm"],
                    metric=metric,
                    values=tuple(_metric_value(r, metric) for r in group),
                    failure_count=failed,
                    retrials_mean=retrials,
                )
            )
    return rows


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_summary(rows: Sequence[SummaryRow], path: str | Path) -> Path:
    path = Path(path)
    _write_csv(
        path,
        SUMMARY_COLUMNS,
        (
            (r.protocol, r.problem, r.arm, r.metric, r.mean, ";".join(_num(v) for v in r.values),
             r.repeats, r.failure_count, r.failure_rate, r.retrials_mean, r.cell)
            for r in rows
        ),
    )
    return path


# -- plot data ---------------------------------------------------------------


def landscape_grid(
    problem: P.ContinuousProblem, resolution: int = 101, log_scale: bool | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample a 2-D problem on a resolution x resolution lattice over its box.

    ``log_scale`` defaults to True for Rosenbrock, where values become log(1 + f).
    Returns (xs, ys, values) with ``values[j, i] = f(xs[i], ys[j])``.
    """
    if problem.dimension != 2:
        raise DimensionError("landscapes are only defined for 2-D problems")
    if log_scale is None:
        log_scale = problem.name is P.FunctionName.ROSENBROCK
    axis = np.linspace(problem.lower_bound, problem.upper_bound, resolution)
    xx, yy = np.meshgrid(axis, axis)
    values = P.evaluate_batch(problem, np.stack([xx, yy], axis=-1))
    if log_scale:
        values = np.log1p(values)
    return axis, axis.copy(), values


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_") or "x"


def emit_plotdata(out_dir: str | Path, runs: Sequence[dict[str, Any]], rows: Sequence[SummaryRow]) -> list[Path]:
    """Write plotdata/*.csv, named ``<analysis>_<arm>.csv``; returns the files written."""
    plot_dir = Path(out_dir) / "plotdata"
    plot_dir.mkdir(parents=True, exist_ok=True)
    for old in plot_dir.glob("*.csv"):
        old.unlink()
    written: list[Path] = []

    def emit(name: str, header: Sequence[str], data: Iterable[Sequence[Any]]) -> None:
        path = plot_dir / f"{name}.csv"
        _write_csv(path, header, data)
        written.append(path)

    protocol = runs[0]["protocol"]
    by_arm: dict[str, list[dict[str, Any]]] = {}
    for run in runs:
        by_arm.setdefault(run["arm"], []).append(run)

    if protocol == "baseline":
        seen = set()
        for run in runs:
            task = run["task"]
            if task["type"] != "continuous" or task["dimension"] != 2 or run["problem"] in seen:
                continue
            seen.add(run["problem"])
            problem = P.problem_from_dict(task)
            xs, ys, values = landscape_grid(problem)
            emit(
                f"landscape_{_slug(run['problem'])}",
                ("x", "y", "value", "log_scale"),
                ((float(x), float(y), float(values[j, i]), int(problem.name is P.FunctionName.ROSENBROCK))
                 for j, y in enumerate(ys) for i, x in enumerate(xs)),
            )

    if protocol == "sampling_probe":
        emit(
            "probe_stats_all",
            ("arm", "repeat", "prompt_sha256", "valid_count", "excluded_count", "chi2", "chi2_p_value",
             "chi2_critical", "grid_score", "mean_distance_to_best"),
            ((r["arm"], r["repeat"], r["prompt_sha256"], r["valid_count"], r["excluded_count"], r["chi2"],
              r["chi2_p_value"], r["chi2_critical"], r["grid_score"], r["mean_distance_to_best"]) for r in runs),
        )
        for arm, group in by_arm.items():
            emit(f"probe_scatter_{_slug(arm)}", ("repeat", "x", "y"),
                 ((r["repeat"], x, y) for r in group for x, y in r["samples"]))
            emit(f"probe_distance_{_slug(arm)}", ("repeat", "distance"),
                 ((r["repeat"], d) for r in group for d in r["distances"]))
            emit(
                f"probe_hist_{_slug(arm)}",
                ("repeat", "x_low", "x_high", "y_low", "y_high", "count"),
                _hist_rows(group),
            )
            emit(f"probe_archive_{_slug(arm)}", ("x", "y", "value"),
                 ((s[0], s[1], f) for s, f in group[0]["archive"]))
    else:
        for arm, group in by_arm.items():
            emit(
                f"convergence_{_slug(arm)}",
                ("problem", "repeat", "iteration", "best_fitness", "status"),
                ((r["problem"], r["repeat"], i, v, r["status"]) for r in group for i, v in enumerate(r["best_trace"])),
            )
        primary: dict[int, SummaryRow] = {}
        for row in rows:
            if row.metric in _LOOP_METRICS:
                primary.setdefault(row.point, row)
        sweep_values = {r["point"]: r.get("sweep_value") for r in runs}
        analysis = "bars" if protocol in ("baseline", "coord_heuristics", "cityname_heuristics") else "sweep"
        emit(
            f"{analysis}_{protocol}",
            ("problem", "arm", "sweep_value", "metric", "mean", "failure_rate", "retrials_mean", "values"),
            ((row.problem, row.arm, sweep_values[p], row.metric, row.mean, row.failure_rate, row.retrials_mean,
              ";".join(_num(v) for v in row.values)) for p, row in sorted(primary.items())),
        )
        if protocol == "dimension_scaling":
            emit("prompt_size_dimension_scaling", ("dimension", "repeat", "prompt_chars", "context_length_errors"),
                 ((r["sweep_value"], r["repeat"], r["prompt_chars"], r["context_length_errors"]) for r in runs))
    return written


def _hist_rows(group: Sequence[dict[str, Any]]):
    for r in group:
        h = r["histogram"]
        xe, ye, counts = h["x_edges"], h["y_edges"], h["counts"]
        for i in range(len(xe) - 1):
            for j in range(len(ye) - 1):
                yield (r["repeat"], xe[i], xe[i + 1], ye[j], ye[j + 1], counts[i][j])


def write_reports(out_dir: str | Path) -> list[SummaryRow]:
    """Regenerate summary.csv and plotdata/ from the run files alone."""
    runs = load_runs(out_dir)
    rows = summarize(runs)
    write_summary(rows, Path(out_dir) / "summary.csv")
    emit_plotdata(out_dir, runs, rows)
    return rows
