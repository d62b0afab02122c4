import json
import warnings

import httpx
import pytest

from llmopt.backends import (
    HillClimbBackend,
    RandomSearchBackend,
    RateLimiter,
    RemoteChatBackend,
    RemoteChatConfig,
    ReplayBackend,
    ScriptedBackend,
    build_backend,
    displayed_coordinates,
    load_transcript,
    record_transcript,
)
from llmopt.engine import GenerationContext, LoopConfig, RunOutcome, RunStatus, run_loop
from llmopt.errors import BackendError, ConfigError, MissingApiKeyError
from llmopt.oracle import held_karp_tsp
from llmopt.problems import make_problem
from llmopt.prompting import NumberFormat, PromptBuilder, get_template
from llmopt.tasks import ContinuousTask, TspTask
from llmopt.tsp import load_fixture, make_view, nearest_neighbor_tour, random_instance

from conftest import make_ctx

SPHERE = ContinuousTask(make_problem("sphere", 2))


def builder(task, digits=5):
    fmt = NumberFormat(digits)
    template = get_template(task.kind)
    return PromptBuilder(task.render_task(fmt, template), template, fmt)


def test_echo_policy():
    ctx = make_ctx(SPHERE, [((0.5, -1.25), 1.8125)])
    assert ScriptedBackend("echo_best").generate("p", ctx) == "<solution>0.5,-1.25</solution>"


def test_scripted_counter_is_per_run():
    backend = ScriptedBackend("cycle", replies=["a", "b"])
    c1, c2 = make_ctx(SPHERE), make_ctx(SPHERE)
    assert [backend.generate("p", c1) for _ in range(3)] == ["a", "b", "a"]
    assert backend.generate("p", c2) == "a"


def test_unknown_policy():
    with pytest.raises(ConfigError):
        ScriptedBackend("telepathy")


def test_random_search_in_bounds():
    ctx = make_ctx(SPHERE, seed=3)
    backend = RandomSearchBackend()
    for _ in range(50):
        out = SPHERE.parse(backend.generate("p", ctx))
        assert out.ok and all(-5.12 <= v <= 5.12 for v in out.payload)


def test_hill_climb_vector_and_tour():
    ctx = make_ctx(SPHERE, [((5.12, 0.0), 26.2144)])
    out = SPHERE.parse(HillClimbBackend(0.5).generate("p", ctx))
    assert out.ok  # clipped back into the box
    task = TspTask(random_instance(7, 0))
    ctx = make_ctx(task, [(tuple(range(7)), task.evaluate(range(7)))])
    assert task.parse(HillClimbBackend().generate("p", ctx)).ok
    with pytest.raises(ConfigError):
        HillClimbBackend(0.0)


def test_optimal_tour_policy():
    task = TspTask(random_instance(9, 4))
    ctx = make_ctx(task)
    tour = task.parse(ScriptedBackend("optimal_tour").generate("p", ctx)).payload
    assert task.evaluate(tour) == held_karp_tsp(task.instance).optimal_length


def test_nearest_neighbor_reads_displayed_coordinates():
    inst = random_instance(10, 2)
    for mode in ("true", "shifted", "masked"):
        task = TspTask(inst, make_view(inst, mode, 5))
        prompt = builder(task)([((tuple(range(10))), 1.0)])
        coords = displayed_coordinates(prompt)
        assert coords == [tuple(c) for c in task.view.displayed_coordinates]
        reply = ScriptedBackend("nearest_neighbor").generate(prompt, make_ctx(task))
        assert task.parse(reply).payload == nearest_neighbor_tour(coords)


def test_nearest_neighbor_without_coordinates_is_identity():
    inst = load_fixture("us_cities15")
    task = TspTask(inst, make_view(inst, "names_only"))
    prompt = builder(task)([((tuple(range(15))), 1.0)])
    assert displayed_coordinates(prompt) is None
    reply = ScriptedBackend("nearest_neighbor").generate(prompt, make_ctx(task))
    assert task.parse(reply).payload == tuple(range(15))


def test_truncated_target_rounds_to_prompt_digits():
    task = ContinuousTask(make_problem("sphere", 2, shift=(0.0123456, -0.0987654)))
    ctx = make_ctx(task, fmt=NumberFormat(3))
    assert ScriptedBackend("truncated_target").generate("p", ctx) == "<solution>0.012,-0.099</solution>"


def test_context_length_limit():
    with pytest.raises(BackendError) as err:
        ScriptedBackend("echo_best", max_prompt_chars=3).generate("long prompt", make_ctx(SPHERE))
    assert err.value.kind == "ContextLength"


def test_backend_error_kinds():
    with pytest.raises(ValueError):
        BackendError("Weird")


# -- transcripts -------------------------------------------------------------


def scripted_run(run_id="r0", backend=None, iterations=5):
    config = LoopConfig(n=8, m=2, max_iterations=iterations, rng_seed=3)
    backend = backend or ScriptedBackend("invalid_then_valid", invalid_count=1)
    return run_loop(SPHERE, backend, builder(SPHERE), config, run_id=run_id)


def test_record_then_replay_is_identical(tmp_path):
    original = scripted_run()
    record_transcript(original, tmp_path / "r0.jsonl", config_hash="abc")
    header, records = load_transcript(tmp_path / "r0.jsonl")
    assert header["config_hash"] == "abc" and len(records) == len(original.records)
    replayed = scripted_run(backend=ReplayBackend(tmp_path, config_hash="abc"))
    assert replayed == original


def test_replay_reraises_backend_errors(tmp_path):
    original = scripted_run(backend=ScriptedBackend("echo_best", max_prompt_chars=5), iterations=1)
    assert original.status is RunStatus.FAILED
    record_transcript(original, tmp_path / "r0.jsonl")
    assert scripted_run(backend=ReplayBackend(tmp_path), iterations=1) == original


def test_empty_run_cannot_be_recorded(tmp_path):
    empty = RunOutcome("e", RunStatus.COMPLETED, (0.0, 0.0), 0.0, 0, (), (0.0,), ())
    with pytest.raises(ValueError):
        record_transcript(empty, tmp_path / "e.jsonl")


def test_replay_exhausted_after_three():
    backend = ReplayBackend(transcripts={"t": ["a", "b", "c"]})
    ctx = make_ctx(SPHERE, run_id="t")
    assert [backend.generate("p", ctx) for _ in range(3)] == ["a", "b", "c"]
    with pytest.raises(BackendError) as err:
        backend.generate("p", ctx)
    assert err.value.kind == "Exhausted"


def test_replay_missing_transcript(tmp_path):
    with pytest.raises(BackendError):
        ReplayBackend(tmp_path).generate("p", make_ctx(SPHERE, run_id="nope"))


def test_replay_hash_mismatch_warns(tmp_path):
    record_transcript(scripted_run(), tmp_path / "r0.jsonl", config_hash="a" * 64)
    backend = ReplayBackend(tmp_path, config_hash="b" * 64)
    with pytest.warns(UserWarning, match="recorded under config"):
        backend.generate("p", make_ctx(SPHERE, run_id="r0"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ReplayBackend(tmp_path, config_hash="a" * 64).generate("p", make_ctx(SPHERE, run_id="r0"))


# -- remote chat -------------------------------------------------------------


def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def remote(handler, monkeypatch, **cfg):
    monkeypatch.setenv("TEST_KEY", "sk-test")
    config = RemoteChatConfig(base_url="https://example.test/v1", model_name="m", api_key_env_var="TEST_KEY", **cfg)
    client = httpx.Client(transport=httpx.MockTransport(handler))
    sleeps = []
    return RemoteChatBackend(config, client=client, sleep=sleeps.append), sleeps


def test_remote_request_shape(monkeypatch):
    seen = []

    def handler(request):
        seen.append(request)
        return chat_reply("<solution>1,2</solution>")

    backend, _ = remote(handler, monkeypatch)
    assert backend.generate("hello") == "<solution>1,2</solution>"
    req = seen[0]
    body = json.loads(req.content)
    assert str(req.url) == "https://example.test/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer sk-test"
    assert body == {"model": "m", "messages": [{"role": "user", "content": "hello"}]}


def test_remote_sampling_fields(monkeypatch):
    seen = []
    backend, _ = remote(lambda r: seen.append(json.loads(r.content)) or chat_reply("x"), monkeypatch,
                        temperature=0.7, nucleus_p=0.95, max_response_tokens=64)
    backend.generate("a")
    backend.generate("b")
    assert seen[0]["top_p"] == 0.95 and seen[0]["temperature"] == 0.7 and seen[0]["max_tokens"] == 64
    # every query is a fresh single-turn conversation
    assert seen[1]["messages"] == [{"role": "user", "content": "b"}]


def test_remote_retries_transport_then_succeeds(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("boom")
        if len(calls) == 2:
            return httpx.Response(503, text="busy")
        return chat_reply("ok")

    backend, sleeps = remote(handler, monkeypatch, backoff_base=0.5)
    assert backend.generate("p") == "ok"
    assert sleeps == [0.5, 1.0]


def test_remote_transport_exhausted(monkeypatch):
    def handler(request):
        raise httpx.ReadTimeout("slow")

    backend, sleeps = remote(handler, monkeypatch, transport_retries=2)
    with pytest.raises(BackendError) as err:
        backend.generate("p")
    assert err.value.kind == "Transport" and len(sleeps) == 2


@pytest.mark.parametrize(
    "status,body,kind",
    [
        (400, '{"error": {"code": "context_length_exceeded"}}', "ContextLength"),
        (400, '{"error": "This model\'s maximum context length is 4097 tokens"}', "ContextLength"),
        (401, '{"error": "bad key"}', "Api"),
        (200, '{"nothing": true}', "Api"),
        (200, "not json", "Api"),
    ],
)
def test_remote_error_classification(monkeypatch, status, body, kind):
    backend, _ = remote(lambda r: httpx.Response(status, text=body), monkeypatch)
    with pytest.raises(BackendError) as err:
        backend.generate("p")
    assert err.value.kind == kind


def test_remote_needs_api_key(monkeypatch):
    monkeypatch.delenv("ABSENT_KEY", raising=False)
    cfg = RemoteChatConfig(base_url="https://x", model_name="m", api_key_env_var="ABSENT_KEY")
    with pytest.raises(MissingApiKeyError):
        RemoteChatBackend(cfg, client=httpx.Client(transport=httpx.MockTransport(lambda r: chat_reply("x"))))


def test_remote_rejects_empty_prompt(monkeypatch):
    backend, _ = remote(lambda r: chat_reply("x"), monkeypatch)
    with pytest.raises(ValueError):
        backend.generate("")


def test_nucleus_range():
    with pytest.raises(ConfigError):
        RemoteChatConfig(base_url="u", model_name="m", nucleus_p=0.0)
    with pytest.raises(ConfigError):
        RemoteChatConfig(base_url="u", model_name="m", nucleus_p=1.5)


def test_rate_limiter_waits():
    t = [0.0]
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        t[0] += s

    limiter = RateLimiter(2.0, clock=lambda: t[0], sleep=sleep)
    for _ in range(3):
        limiter.acquire()
    assert sleeps == [0.5, 0.5]
    RateLimiter(None, sleep=sleep).acquire()
    assert len(sleeps) == 2


def test_build_backend(monkeypatch):
    assert isinstance(build_backend({"kind": "scripted", "policy": "uniform"}), ScriptedBackend)
    assert isinstance(build_backend({"kind": "random_search"}), RandomSearchBackend)
    assert build_backend({"kind": "hill_climb", "sigma": 0.2}).sigma == 0.2
    assert isinstance(build_backend({"kind": "replay", "transcript_dir": "."}), ReplayBackend)
    monkeypatch.setenv("K", "v")
    rc = build_backend({"kind": "remote_chat", "base_url": "u", "model": "m", "api_key_env": "K", "top_p": 0.95})
    assert rc.config.nucleus_p == 0.95
    monkeypatch.delenv("K")
    with pytest.raises(MissingApiKeyError):
        build_backend({"kind": "remote_chat", "base_url": "u", "model": "m", "api_key_env": "K"})
    for bad in ({"kind": "scripted"}, {"kind": "replay"}, {"kind": "oracle"}, {"kind": "remote_chat", "model": "m"}):
        with pytest.raises(ConfigError):
            build_backend(bad)


def test_generation_context_defaults():
    ctx = GenerationContext("r", SPHERE, None, None)
    assert ctx.state == {} and ctx.archive is None


def test_policy_task_mismatch_is_config_error():
    with pytest.raises(ConfigError, match="backend.policy"):
        ScriptedBackend("uniform").check_task("tsp")
    with pytest.raises(ConfigError):
        ScriptedBackend("nearest_neighbor").generate("", make_ctx(SPHERE))
    ScriptedBackend("echo_best").check_task("tsp")
    ScriptedBackend("optimal_tour").generate("", make_ctx(TspTask(random_instance(5, 0))))


def test_cycle_needs_replies():
    with pytest.raises(ConfigError, match="replies"):
        ScriptedBackend("cycle")
