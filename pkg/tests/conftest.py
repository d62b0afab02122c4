from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from llmopt.engine import Archive, GenerationContext, archive_update
from llmopt.prompting import NumberFormat

GOLDEN = Path(__file__).parent / "golden"
REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


def make_ctx(task, entries=None, seed=0, fmt=None, run_id="t"):
    """GenerationContext with an archive built from ``entries`` (or one random solution)."""
    rng = np.random.default_rng(seed)
    if entries is None:
        sol = task.random_solution(rng)
        entries = [(sol, task.evaluate(sol))]
    archive = archive_update(Archive(max(16, len(entries))), entries)
    return GenerationContext(run_id, task, fmt or NumberFormat(5), rng, archive, iteration=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
