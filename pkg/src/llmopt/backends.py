"""Solution generators: remote chat models, scripted/replay stand-ins, classical baselines.

A backend exposes ``generate(prompt, ctx) -> str`` and raises ``BackendError``
when no reply could be obtained. Backends keep no per-run state of their own;
anything that must persist between queries of one run lives in ``ctx.state``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import httpx
import numpy as np

from .engine import GenerationContext, RunOutcome
from .errors import BackendError, ConfigError, MissingApiKeyError
from .oracle import held_karp_tsp
from .problems import optimum_location
from .prompting import format_number
from .tsp import nearest_neighbor_tour

log = logging.getLogger(__name__)

INVALID_REPLY = "I am unable to produce a solution."


def _render(ctx: GenerationContext, solution) -> str:
    return ctx.task.render_solution(solution)


def _check_prompt_size(prompt: str, limit: int | None) -> None:
    if limit is not None and len(prompt) > limit:
        raise BackendError("ContextLength", f"prompt of {len(prompt)} chars exceeds {limit}")


# -- scripted ----------------------------------------------------------------

_CITY_RE = re.compile(r"\((\d+)\): [^(,]*?\(\s*(-?\d+(?:\.\d+)?),\s*(-?\d+(?:\.\d+)?)\)")


def displayed_coordinates(prompt: str) -> list[tuple[float, float]] | None:
    """Recover the "(i): (x, y)" city listing from a TSP prompt, if it has one."""
    found = {int(i): (float(x), float(y)) for i, x, y in _CITY_RE.findall(prompt)}
    if not found:
        return None
    return [found[i] for i in range(len(found))]


def _policy_echo_best(prompt, ctx, params):
    return _render(ctx, ctx.archive.best[0])


def _policy_halving(prompt, ctx, params):
    factor = params.get("factor", 0.5)
    return _render(ctx, [v * factor for v in ctx.archive.best[0]])


def _policy_always_invalid(prompt, ctx, params):
    return params.get("reply", INVALID_REPLY)


def _policy_invalid_then_valid(prompt, ctx, params):
    k = params.get("invalid_count", 2)
    count = ctx.state.get("scripted_calls", 0)
    if count % (k + 1) < k:
        return params.get("reply", INVALID_REPLY)
    return _render(ctx, ctx.archive.best[0])


def _policy_optimal_tour(prompt, ctx, params):
    if "optimal_tour" not in ctx.state:
        ctx.state["optimal_tour"] = held_karp_tsp(ctx.task.instance).optimal_tour
    return _render(ctx, ctx.state["optimal_tour"])


def _policy_nearest_neighbor(prompt, ctx, params):
    coords = displayed_coordinates(prompt)
    if coords is None or len(coords) != ctx.task.dimension:
        return _render(ctx, range(ctx.task.dimension))
    return _render(ctx, nearest_neighbor_tour(coords, params.get("start", 0)))


def _policy_truncated_target(prompt, ctx, params):
    # the optimum, but only as precise as the prompt's number format allows
    target = optimum_location(ctx.task.problem)
    return "<solution>" + ",".join(format_number(v, ctx.fmt) for v in target) + "</solution>"


def _policy_exact_target(prompt, ctx, params):
    return _render(ctx, optimum_location(ctx.task.problem))


def _policy_uniform(prompt, ctx, params):
    problem = ctx.task.problem
    pts = ctx.rng.uniform(problem.lower_bound, problem.upper_bound, size=problem.dimension)
    return _render(ctx, pts.tolist())


def _policy_cycle(prompt, ctx, params):
    replies = params["replies"]
    return replies[ctx.state.get("scripted_calls", 0) % len(replies)]


POLICIES: dict[str, Callable[[str, GenerationContext, dict], str]] = {
    "echo_best": _policy_echo_best,
    "point_mass": _policy_echo_best,
    "halving": _policy_halving,
    "always_invalid": _policy_always_invalid,
    "invalid_then_valid": _policy_invalid_then_valid,
    "optimal_tour": _policy_optimal_tour,
    "nearest_neighbor": _policy_nearest_neighbor,
    "truncated_target": _policy_truncated_target,
    "exact_target": _policy_exact_target,
    "uniform": _policy_uniform,
    "cycle": _policy_cycle,
}

# policies that only make sense for one kind of task; the rest handle both
POLICY_KINDS: dict[str, frozenset[str]] = {
    "optimal_tour": frozenset({"tsp"}),
    "nearest_neighbor": frozenset({"tsp"}),
    "halving": frozenset({"continuous"}),
    "truncated_target": frozenset({"continuous"}),
    "exact_target": frozenset({"continuous"}),
    "uniform": frozenset({"continuous"}),
}


class ScriptedBackend:
    """Deterministic generator driven by a named policy.

    ``max_prompt_chars`` simulates a context window: longer prompts fail with
    ``ContextLength`` before the policy runs.
    """

    def __init__(self, policy: str, max_prompt_chars: int | None = None, **params: Any):
        if policy not in POLICIES:
            raise ConfigError(f"unknown scripted policy {policy!r}", field="backend.policy")
        if policy == "cycle" and not params.get("replies"):
            raise ConfigError("the cycle policy needs a non-empty 'replies' list", field="backend.replies")
        self.policy = policy
        self.max_prompt_chars = max_prompt_chars
        self.params = params

    def check_task(self, kind: str) -> None:
        allowed = POLICY_KINDS.get(self.policy)
        if allowed is not None and kind not in allowed:
            raise ConfigError(f"policy {self.policy!r} cannot drive a {kind} task", field="backend.policy")

    def generate(self, prompt: str, ctx: GenerationContext) -> str:
        self.check_task(ctx.task.kind)
        _check_prompt_size(prompt, self.max_prompt_chars)
        try:
            return POLICIES[self.policy](prompt, ctx, self.params)
        finally:
            ctx.state["scripted_calls"] = ctx.state.get("scripted_calls", 0) + 1


# -- classical baselines -----------------------------------------------------


class RandomSearchBackend:
    def __init__(self, max_prompt_chars: int | None = None):
        self.max_prompt_chars = max_prompt_chars

    def generate(self, prompt: str, ctx: GenerationContext) -> str:
        _check_prompt_size(prompt, self.max_prompt_chars)
        return _render(ctx, ctx.task.random_solution(ctx.rng))


class HillClimbBackend:
    """Perturbs the archive best: Gaussian noise for vectors, a random 2-opt move for tours."""

    def __init__(self, sigma: float = 0.1, max_prompt_chars: int | None = None):
        if sigma <= 0:
            raise ConfigError("sigma must be positive", field="backend.sigma")
        self.sigma = sigma
        self.max_prompt_chars = max_prompt_chars

    def generate(self, prompt: str, ctx: GenerationContext) -> str:
        _check_prompt_size(prompt, self.max_prompt_chars)
        best = ctx.archive.best[0]
        if ctx.task.kind == "tsp":
            n = len(best)
            i, j = sorted(ctx.rng.choice(n, size=2, replace=False).tolist())
            tour = list(best)
            tour[i : j + 1] = tour[i : j + 1][::-1]
            return _render(ctx, tour)
        lo, hi = ctx.task.problem.bounds
        step = np.asarray(best) + ctx.rng.normal(0.0, self.sigma, size=len(best))
        return _render(ctx, np.clip(step, lo, hi).tolist())


# -- transcripts and replay --------------------------------------------------


def _record_to_json(rec, previous_prompt: str | None) -> dict[str, Any]:
    data = {
        "type": "record",
        "iteration": rec.iteration,
        "slot": rec.slot,
        "attempt_index": rec.attempt_index,
        "prompt_sha256": hashlib.sha256(rec.prompt_text.encode("utf-8")).hexdigest(),
        "raw_response": rec.raw_response,
        "outcome": rec.outcome.value,
        "error_kind": rec.error_kind,
        "solution": None if rec.solution is None else list(rec.solution),
        "fitness": rec.fitness,
        "elapsed": rec.elapsed,
    }
    # prompts repeat across the attempts of an iteration; store the text once
    if rec.prompt_text != previous_prompt:
        data["prompt_text"] = rec.prompt_text
    return data


def record_transcript(run: RunOutcome, path: str | Path, config_hash: str | None = None) -> Path:
    """Write a run's queries as JSONL: one header line, then one line per record."""
    if not run.records:
        raise ValueError(f"run {run.run_id!r} has no records to write")
    path = Path(path)
    lines = [json.dumps({"type": "header", "run_id": run.run_id, "config_hash": config_hash})]
    previous = None
    for rec in run.records:
        lines.append(json.dumps(_record_to_json(rec, previous)))
        previous = rec.prompt_text
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_transcript(path: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    header: dict[str, Any] = {}
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("type") == "header":
            header = obj
        else:
            records.append(obj)
    return header, records


class ReplayBackend:
    """Re-serves recorded replies in query order.

    Transcripts are looked up per run as ``<transcript_dir>/<run_id>.jsonl``;
    ``transcripts`` may instead map run ids to reply lists directly.
    """

    def __init__(
        self,
        transcript_dir: str | Path | None = None,
        transcripts: dict[str, list[dict[str, Any]]] | None = None,
        config_hash: str | None = None,
    ):
        self.transcript_dir = None if transcript_dir is None else Path(transcript_dir)
        self.config_hash = config_hash
        self._cache: dict[str, list[dict[str, Any]]] = dict(transcripts or {})
        self._lock = threading.Lock()

    def _records(self, run_id: str) -> list[dict[str, Any]]:
        with self._lock:
            if run_id not in self._cache:
                if self.transcript_dir is None:
                    raise BackendError("Exhausted", f"no transcript for run {run_id!r}")
                path = self.transcript_dir / f"{run_id}.jsonl"
                if not path.exists():
                    raise BackendError("Exhausted", f"missing transcript {path}")
                header, records = load_transcript(path)
                recorded = header.get("config_hash")
                if self.config_hash and recorded and recorded != self.config_hash:
                    warnings.warn(
                        f"transcript {path.name} was recorded under config {recorded[:12]}, "
                        f"replaying under {self.config_hash[:12]}",
                        stacklevel=3,
                    )
                self._cache[run_id] = records
            return self._cache[run_id]

    def generate(self, prompt: str, ctx: GenerationContext) -> str:
        records = self._records(ctx.run_id)
        idx = ctx.state.get("replay_index", 0)
        if idx >= len(records):
            raise BackendError("Exhausted", f"transcript for {ctx.run_id!r} has {len(records)} replies")
        ctx.state["replay_index"] = idx + 1
        rec = records[idx]
        if isinstance(rec, str):
            return rec
        if rec.get("outcome") == "BackendError":
            raise BackendError(rec.get("error_kind") or "Api", "replayed failure")
        return rec["raw_response"]


# -- remote chat -------------------------------------------------------------


class RateLimiter:
    """Token bucket shared by all runs using one backend."""

    def __init__(self, qps: float | None, burst: int = 1, clock=time.monotonic, sleep=time.sleep):
        self.qps = qps
        self.capacity = max(1, burst)
        self._tokens = float(self.capacity)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.qps:
            return
        with self._lock:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.qps)
            self._last = now
            if self._tokens < 1:
                wait = (1 - self._tokens) / self.qps
                self._sleep(wait)
                self._last = self._clock()
                self._tokens = 0.0
            else:
                self._tokens -= 1


@dataclass(frozen=True)
class RemoteChatConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = "OPENAI_API_KEY"
    temperature: float | None = None
    nucleus_p: float | None = None
    timeout: float = 60.0
    max_response_tokens: int | None = None
    qps: float | None = None
    transport_retries: int = 3
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.nucleus_p is not None and not 0 < self.nucleus_p <= 1:
            raise ConfigError("must lie in (0, 1]", field="backend.top_p")


_CONTEXT_MARKERS = ("context_length_exceeded", "context length", "maximum context", "too many tokens")


class RemoteChatBackend:
    """Single-turn chat-completions client.

    Transport failures (and 429/5xx) are retried with exponential backoff
    inside ``generate``; only the final failure surfaces as a ``BackendError``.
    """

    def __init__(
        self,
        config: RemoteChatConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        api_key = os.environ.get(config.api_key_env_var, "").strip()
        if not api_key:
            raise MissingApiKeyError(
                f"environment variable {config.api_key_env_var} is not set", field="backend.api_key_env"
            )
        self.config = config
        self._headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._limiter = RateLimiter(config.qps, sleep=sleep)

    def request_body(self, prompt: str) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
        }
        if self.config.temperature is not None:
            body["temperature"] = self.config.temperature
        if self.config.nucleus_p is not None:
            body["top_p"] = self.config.nucleus_p
        if self.config.max_response_tokens is not None:
            body["max_tokens"] = self.config.max_response_tokens
        return body

    def generate(self, prompt: str, ctx: GenerationContext | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        body = self.request_body(prompt)
        last = ""
        for attempt in range(self.config.transport_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            self._limiter.acquire()
            try:
                resp = self._client.post(url, json=body, headers=self._headers)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("chat request failed (%s), attempt %d", last, attempt + 1)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            return self._parse_response(resp)
        raise BackendError("Transport", last)

    @staticmethod
    def _parse_response(resp: httpx.Response) -> str:
        text = resp.text
        if resp.status_code >= 400:
            lowered = text.lower()
            if any(marker in lowered for marker in _CONTEXT_MARKERS):
                raise BackendError("ContextLength", text[:200])
            raise BackendError("Api", f"HTTP {resp.status_code}: {text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise BackendError("Api", f"unexpected response body: {text[:200]}") from None
        if content is None:
            raise BackendError("Api", "response has no message content")
        return str(content)


# -- factory -----------------------------------------------------------------

BACKEND_KINDS = ("scripted", "replay", "random_search", "hill_climb", "remote_chat")


def build_backend(spec: dict[str, Any]):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "scripted":
        policy = spec.pop("policy", None)
        if policy is None:
            raise ConfigError("scripted backend needs a 'policy'", field="backend.policy")
        return ScriptedBackend(policy, **spec)
    if kind == "random_search":
        return RandomSearchBackend(spec.get("max_prompt_chars"))
    if kind == "hill_climb":
        return HillClimbBackend(float(spec.get("sigma", 0.1)), spec.get("max_prompt_chars"))
    if kind == "replay":
        if "transcript_dir" not in spec:
            raise ConfigError("replay backend needs 'transcript_dir'", field="backend.transcript_dir")
        return ReplayBackend(spec["transcript_dir"], config_hash=spec.get("config_hash"))
    if kind == "remote_chat":
        try:
            cfg = RemoteChatConfig(
                base_url=spec["base_url"],
                model_name=spec["model"],
                api_key_env_var=spec.get("api_key_env", "OPENAI_API_KEY"),
                temperature=spec.get("temperature"),
                nucleus_p=spec.get("top_p"),
                timeout=float(spec.get("timeout", 60.0)),
                max_response_tokens=spec.get("max_tokens"),
                qps=spec.get("qps"),
            )
        except KeyError as exc:
            raise ConfigError("missing required key", field=f"backend.{exc.args[0]}") from None
        return RemoteChatBackend(cfg)
    raise ConfigError(f"unknown backend kind {kind!r}; choose from {', '.join(BACKEND_KINDS)}", field="backend.kind")
