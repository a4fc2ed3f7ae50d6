"""Backend contract: scripted determinism, HTTP stub, budget gating."""

import json
import threading
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
import requests

from sanrepair.errors import BackendError, BudgetExhausted, TranscriptExhausted
from sanrepair.oracle import (
    Budget,
    ChatTurn,
    HttpBackend,
    PriceTable,
    ScriptedBackend,
    has_budget,
)

HISTORY = [ChatTurn("system", "be terse"), ChatTurn("user", "hello")]


# --- ChatTurn / Budget basics ---

def test_chat_turn_estimates_tokens_from_length():
    turn = ChatTurn("user", "x" * 40)
    assert turn.token_estimate == 10


def test_chat_turn_keeps_explicit_estimate_and_rejects_bad_role():
    assert ChatTurn("user", "hi", token_estimate=7).token_estimate == 7
    with pytest.raises(ValueError):
        ChatTurn("oracle", "hi")


def test_budget_defaults_match_configuration():
    budget = Budget()
    assert budget.max_iterations == 75
    assert budget.temperature == Decimal("0.0")
    assert budget.max_cost_usd == Decimal("1.00")


@pytest.mark.parametrize(
    "used_iters,max_iters,used_cost,max_cost,expected",
    [
        (0, 75, "0", "1.00", True),
        (75, 75, "0", "1.00", False),
        (10, 75, "1.00", "1.00", False),
        (74, 75, "0.99", "1.00", True),
    ],
)
def test_has_budget_truth_table(used_iters, max_iters, used_cost, max_cost, expected):
    budget = Budget(
        max_iterations=max_iters,
        iterations_used=used_iters,
        max_cost_usd=Decimal(max_cost),
        cost_used_usd=Decimal(used_cost),
    )
    assert has_budget(budget) is expected


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget(max_iterations=0)
    with pytest.raises(ValueError):
        Budget(temperature=Decimal("1.5"))


# --- scripted backend ---

def test_scripted_messages_in_order_then_exhausted():
    backend = ScriptedBackend([f"msg {i}" for i in range(5)])
    budget = Budget()
    got = [backend.query(HISTORY, budget)[0] for _ in range(5)]
    assert got == [f"msg {i}" for i in range(5)]
    with pytest.raises(TranscriptExhausted):
        backend.query(HISTORY, budget)
    assert budget.iterations_used == 5
    assert budget.cost_used_usd == Decimal("0")


def test_iteration_cap_raises_before_popping_transcript():
    backend = ScriptedBackend(["a", "b", "c", "d", "e"])
    budget = Budget(max_iterations=2)
    backend.query(HISTORY, budget)
    backend.query(HISTORY, budget)
    with pytest.raises(BudgetExhausted):
        backend.query(HISTORY, budget)
    assert backend.remaining == 3
    assert budget.iterations_used == 2


def test_scripted_from_file(tmp_path):
    path = tmp_path / "transcript.jsonl"
    path.write_text(
        json.dumps({"role": "assistant", "content": "first"})
        + "\n\n"
        + json.dumps({"role": "user", "content": "ignored"})
        + "\n"
        + json.dumps({"content": "second"})
        + "\n",
        encoding="utf-8",
    )
    backend = ScriptedBackend.from_file(path)
    budget = Budget()
    assert backend.query(HISTORY, budget)[0] == "first"
    assert backend.query(HISTORY, budget)[0] == "second"
    assert backend.remaining == 0


def test_scripted_from_file_rejects_bad_records(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"content": "ok"}\nnot json\n', encoding="utf-8")
    with pytest.raises(BackendError):
        ScriptedBackend.from_file(path)


# --- HTTP backend against an in-thread stub ---

class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append(
            {"path": self.path, "body": body, "auth": self.headers.get("Authorization")}
        )
        if self.server.failures_left > 0:
            self.server.failures_left -= 1
            self.send_response(503)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        payload = self.server.response_factory(body)
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *_args):
        pass


def _reply(content, prompt_tokens, completion_tokens):
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        },
    }


@pytest.fixture
def stub():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.requests = []
    server.failures_left = 0
    server.response_factory = lambda body: _reply("stub reply", 100, 50)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def _backend(stub, **kwargs):
    session = requests.Session()
    session.trust_env = False  # keep proxies out of the localhost loop
    kwargs.setdefault("backoff_seconds", 0.01)
    return HttpBackend(
        base_url=f"http://127.0.0.1:{stub.server_address[1]}/v1",
        model="test-model",
        session=session,
        **kwargs,
    )


def test_http_echo_body_and_cost_from_usage(stub):
    prices = PriceTable.from_mapping(
        {"test-model": {"input_per_mtok": "3.00", "output_per_mtok": "15.00"}}
    )
    backend = _backend(stub, price_table=prices, api_key="sk-test")
    budget = Budget()
    text, usage = backend.query(HISTORY, budget)
    assert text == "stub reply"
    assert (usage.prompt_tokens, usage.completion_tokens) == (100, 50)
    assert usage.cost_usd == Decimal("0.00105")
    assert budget.cost_used_usd == Decimal("0.00105")
    sent = stub.requests[0]
    assert sent["path"].endswith("/chat/completions")
    assert sent["auth"] == "Bearer sk-test"
    assert sent["body"]["temperature"] == 0.0
    assert [m["role"] for m in sent["body"]["messages"]] == ["system", "user"]


def test_tool_turns_travel_as_user_messages(stub):
    backend = _backend(stub)
    history = HISTORY + [ChatTurn("assistant", "ok"), ChatTurn("tool", "distilled output")]
    backend.query(history, Budget())
    roles = [m["role"] for m in stub.requests[0]["body"]["messages"]]
    assert roles == ["system", "user", "assistant", "user"]


def test_cost_cap_halts_at_dollar_boundary(stub):
    stub.response_factory = lambda body: _reply("next step", 0, 250_000)
    prices = PriceTable.from_mapping(
        {"test-model": {"input_per_mtok": "0", "output_per_mtok": "1.00"}}
    )
    backend = _backend(stub, price_table=prices)
    budget = Budget()  # $1.00 cap, each query costs exactly $0.25
    for index in range(4):
        backend.query(HISTORY, budget)
        assert budget.cost_used_usd == Decimal("0.25") * (index + 1)
    assert not has_budget(budget)
    with pytest.raises(BudgetExhausted):
        backend.query(HISTORY, budget)
    assert len(stub.requests) == 4
    assert budget.cost_used_usd == Decimal("1.00")


def test_transient_failure_retried_then_succeeds(stub):
    stub.failures_left = 2
    backend = _backend(stub)
    text, _usage = backend.query(HISTORY, Budget())
    assert text == "stub reply"
    assert len(stub.requests) == 3


def test_persistent_failure_surfaces_after_retries(stub):
    stub.failures_left = 99
    backend = _backend(stub, max_retries=2)
    with pytest.raises(BackendError, match="after 3 attempts"):
        backend.query(HISTORY, Budget())
    assert len(stub.requests) == 3


def test_unpriced_model_costs_nothing(stub):
    backend = _backend(stub, price_table=PriceTable(prices={}))
    budget = Budget()
    _text, usage = backend.query(HISTORY, budget)
    assert usage.cost_usd == Decimal("0")
    assert budget.cost_used_usd == Decimal("0")
