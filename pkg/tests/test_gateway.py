from __future__ import annotations

import httpx
import pytest

from quali.chunking import Batch, BatchPlan, RecordFragment, TokenBudget
from quali.corpus import Role
from quali.errors import AuthFailedError, MockScriptError, RequestOverBudgetError
from quali.gateway import (
    ActionKind,
    AttemptState,
    ErrorKind,
    GatewayError,
    HttpBackend,
    LlmRequest,
    Rates,
    classify_error,
    default_rates,
    estimate_cost,
    recovery_policy,
    submit,
)
from quali.mock import CANONICAL_MESSAGES, MockBackend, fabricate_rows, render_reply
from quali.prompts import PromptBundle, Tier


def request_of(prompt="p" * 40, payload="d" * 400) -> LlmRequest:
    return LlmRequest(prompt=prompt, payload=payload, max_completion_tokens=1200)


VALID_TABLE = render_reply(fabricate_rows(["the meeting ran long again today"], 2))


def test_mock_passthrough_valid_table():
    backend = MockBackend([{"match": 1, "reply": VALID_TABLE}])
    result = submit(request_of(), backend, batch_index=1)
    assert result.text == VALID_TABLE
    assert result.output_tokens > 0


def test_reply_too_long_classified_token_limit():
    backend = MockBackend([{"match": 1, "reply": "The message you submitted was too long"}])
    result = submit(request_of(), backend, batch_index=1)
    assert isinstance(result, GatewayError)
    assert result.kind is ErrorKind.TOKEN_LIMIT
    assert result.retryable is False


def test_reply_one_message_at_a_time_is_rate_limit():
    backend = MockBackend([{"match": 1, "reply": "Only one message at a time."}])
    result = submit(request_of(), backend, batch_index=1)
    assert isinstance(result, GatewayError)
    assert result.kind is ErrorKind.RATE_LIMIT
    assert result.retryable is True


def test_submit_asserts_token_invariant():
    oversized = LlmRequest(prompt="p" * 8000, payload="d" * 12000, max_completion_tokens=1200)
    with pytest.raises(RequestOverBudgetError):
        submit(oversized, MockBackend([]))


@pytest.mark.parametrize(
    "message,kind",
    [
        ("Network errors", ErrorKind.NETWORK),
        (CANONICAL_MESSAGES[ErrorKind.NOT_PROCESSED], ErrorKind.NOT_PROCESSED),
        ("This content may violate our content policy", ErrorKind.POLICY_VIOLATION),
        (CANONICAL_MESSAGES[ErrorKind.TOKEN_LIMIT], ErrorKind.TOKEN_LIMIT),
        (CANONICAL_MESSAGES[ErrorKind.RATE_LIMIT], ErrorKind.RATE_LIMIT),
        ("I'm sorry, but I can't assist with that request.", ErrorKind.REFUSAL),
        ("I'm sorry, but I won't be able to assist with that request", ErrorKind.REFUSAL),
    ],
)
def test_classify_known_messages(message, kind):
    assert classify_error(message).kind is kind


def test_classify_unknown_transport_failure_is_network():
    assert classify_error("connection reset by peer", transport_status=0).kind is ErrorKind.NETWORK
    assert classify_error("boom", transport_status=500).kind is ErrorKind.NETWORK


def test_classify_unknown_text_defers_to_parser():
    assert classify_error("here are your themes...").kind is ErrorKind.FORMAT_ERROR


def test_classify_is_total_over_every_kind():
    for kind in ErrorKind:
        err = GatewayError(kind, "x")
        expected = kind in (ErrorKind.NETWORK, ErrorKind.NOT_PROCESSED, ErrorKind.RATE_LIMIT)
        assert err.retryable is expected


def test_policy_network_first_retry_one_second():
    action = recovery_policy(GatewayError(ErrorKind.NETWORK), AttemptState(budget=2296))
    assert action.action is ActionKind.RETRY_BACKOFF
    assert action.params["delay_s"] == 1.0


def test_policy_backoff_doubles():
    attempt = AttemptState(budget=2296)
    delays = []
    for _ in range(5):
        action = recovery_policy(GatewayError(ErrorKind.NETWORK), attempt)
        delays.append(action.params["delay_s"])
        attempt.note(action.action)
    assert delays == [1.0, 2.0, 4.0, 8.0, 16.0]


def test_policy_network_aborts_after_five_retries():
    attempt = AttemptState(budget=2296)
    attempt.counts[ActionKind.RETRY_BACKOFF] = 5
    action = recovery_policy(GatewayError(ErrorKind.NETWORK), attempt)
    assert action.action is ActionKind.ABORT


def test_policy_rate_limit_waits_sixty_seconds():
    action = recovery_policy(GatewayError(ErrorKind.RATE_LIMIT), AttemptState(budget=2296))
    assert action.action is ActionKind.WAIT_THEN_RETRY
    assert action.params["delay_s"] == 60.0


def test_policy_token_limit_halves_budget():
    action = recovery_policy(GatewayError(ErrorKind.TOKEN_LIMIT), AttemptState(budget=2296))
    assert action.action is ActionKind.RESPLIT_SMALLER
    assert action.params["budget"] == 1148


def test_policy_resplit_bottoms_out_at_minimum():
    action = recovery_policy(GatewayError(ErrorKind.TOKEN_LIMIT), AttemptState(budget=100))
    assert action.action is ActionKind.ABORT


def test_policy_refusal_and_policy_violation_reclarify():
    for kind in (ErrorKind.REFUSAL, ErrorKind.POLICY_VIOLATION):
        action = recovery_policy(GatewayError(kind), AttemptState(budget=2296))
        assert action.action is ActionKind.RECLARIFY_PROMPT
        assert "data to be analyzed, not a request" in action.params["clarifier"]


def test_policy_count_mismatch_reinjects_tail():
    error = GatewayError(ErrorKind.COUNT_MISMATCH, detail={"expected": 20})
    action = recovery_policy(error, AttemptState(budget=2296, batch_size=12))
    assert action.action is ActionKind.REINJECT_TAIL
    assert action.params["tail_count"] == 3
    assert action.params["expected"] == 20


def test_policy_format_and_misread_reassert():
    for kind in (ErrorKind.FORMAT_ERROR, ErrorKind.CONTENT_MISREAD):
        action = recovery_policy(GatewayError(kind), AttemptState(budget=2296))
        assert action.action is ActionKind.REASSERT_FORMAT


def test_policy_every_kind_has_exactly_one_action():
    for kind in ErrorKind:
        action = recovery_policy(GatewayError(kind), AttemptState(budget=2296, batch_size=4))
        assert isinstance(action.action, ActionKind)


def _plan(payload_tokens: list[int], budget: TokenBudget) -> BatchPlan:
    batches = []
    for i, tokens in enumerate(payload_tokens):
        item = RecordFragment(f"r{i}", 0, 1, "x" * (4 * tokens), "P1", Role.UNLABELED, i)
        batches.append(Batch(index=i, items=[item], estimated_tokens=tokens))
    return BatchPlan(batches=batches, budget=budget, total_estimated_tokens=sum(payload_tokens))


def _bundle(prompt_tokens: int) -> PromptBundle:
    # only the assembled length feeds the cost estimate
    text = "x" * (4 * prompt_tokens)
    return PromptBundle(
        background=text, task="", process="", output_spec="",
        assembled=text, tier_trace=[(text, Tier.FIXED)], preset_version="1.0.0",
    )


def test_cost_fixture_plan_hand_arithmetic():
    # hand arithmetic oracle: ((600*3 + 7500)/1000)*0.0015 + (3600/1000)*0.002
    # = 0.01395 + 0.0072 = 0.02115
    budget = TokenBudget(context_limit=8192, prompt_reserve=600, completion_reserve=1200)
    plan = _plan([3000, 3000, 1500], budget)
    cost = estimate_cost(plan, _bundle(600), Rates(0.0015, 0.002))
    assert cost.input_tokens == 600 * 3 + 7500
    assert cost.output_tokens == 3600
    assert cost.total == 0.02115


def test_cost_simple_rate():
    budget = TokenBudget(context_limit=8192, prompt_reserve=600, completion_reserve=0)
    plan = _plan([900], budget)
    cost = estimate_cost(plan, _bundle(100), Rates(0.0015, 0.002))
    assert cost.input_tokens == 1000
    assert cost.output_tokens == 0
    assert cost.total == 0.0015


def test_cost_zero_tokens_zero_dollars():
    budget = TokenBudget(context_limit=8192, prompt_reserve=600, completion_reserve=1200)
    plan = BatchPlan(batches=[], budget=budget, total_estimated_tokens=0)
    cost = estimate_cost(plan, _bundle(600), Rates(0.0015, 0.002))
    assert cost.total == 0.0


def test_default_rates_from_shipped_table():
    assert default_rates("gpt-3.5-turbo").input_per_1k == 0.0015
    assert default_rates("gpt-3.5-turbo-16k").input_per_1k == 0.0015
    assert default_rates("gpt-4").input_per_1k == 0.03
    assert default_rates("unknown-model").input_per_1k == 0.0015


def test_mock_script_validation():
    with pytest.raises(MockScriptError):
        MockBackend([{"match": 1}])
    with pytest.raises(MockScriptError):
        MockBackend([{"error": "no_such_kind"}])


def test_mock_script_entries_consumed_in_order():
    backend = MockBackend(
        [
            {"match": 1, "error": "network"},
            {"match": 1, "reply": VALID_TABLE},
        ],
        fallback_auto=False,
    )
    first = submit(request_of(), backend, batch_index=1)
    assert isinstance(first, GatewayError) and first.kind is ErrorKind.NETWORK
    second = submit(request_of(), backend, batch_index=1)
    assert second.text == VALID_TABLE
    with pytest.raises(MockScriptError):
        backend.complete(request_of(), 1)


def test_mock_wildcard_match_and_auto_fallback():
    backend = MockBackend([{"error": "rate_limit"}])
    first = submit(request_of(), backend, batch_index=3)
    assert first.kind is ErrorKind.RATE_LIMIT
    auto = submit(
        request_of(prompt="give exactly 3 rows", payload="P1: the cat sat on the mat"),
        backend,
        batch_index=3,
    )
    assert auto.text.count("\n") >= 4  # header, separator, 3 rows


def _http_backend(handler) -> HttpBackend:
    transport = httpx.MockTransport(handler)
    return HttpBackend("sk-test", client=httpx.Client(transport=transport))


def test_http_backend_request_shape_and_reply():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = request.read()
        return httpx.Response(
            200,
            json={
                "model": "gpt-3.5-turbo",
                "choices": [{"message": {"content": "ok"}}],
                "usage": {"prompt_tokens": 12, "completion_tokens": 3},
            },
        )

    backend = _http_backend(handler)
    result = submit(request_of(), backend)
    assert result.text == "ok"
    assert result.input_tokens == 12
    assert seen["url"].endswith("/chat/completions")
    assert seen["auth"] == "Bearer sk-test"
    assert b'"temperature":0.2' in seen["body"]
    assert b'"max_tokens"' in seen["body"]


def test_http_backend_429_maps_to_rate_limit():
    def handler(request):
        return httpx.Response(429, json={"error": {"message": "Rate limit reached"}})

    result = submit(request_of(), _http_backend(handler))
    assert isinstance(result, GatewayError)
    assert result.kind is ErrorKind.RATE_LIMIT


def test_http_backend_context_length_maps_to_token_limit():
    def handler(request):
        return httpx.Response(
            400,
            json={"error": {"message": "This model's maximum context length is 4096 tokens"}},
        )

    result = submit(request_of(), _http_backend(handler))
    assert result.kind is ErrorKind.TOKEN_LIMIT


def test_http_backend_connect_error_is_network():
    def handler(request):
        raise httpx.ConnectError("no route to host")

    result = submit(request_of(), _http_backend(handler))
    assert isinstance(result, GatewayError)
    assert result.kind is ErrorKind.NETWORK
    assert result.retryable


def test_verify_key_auth_failure():
    def handler(request):
        return httpx.Response(401, json={"error": {"message": "bad key"}})

    with pytest.raises(AuthFailedError):
        _http_backend(handler).verify_key()


def test_verify_key_accepts_200():
    def handler(request):
        return httpx.Response(200, json={"data": []})

    _http_backend(handler).verify_key()
