"""Chat-completion backend abstraction with budget accounting.

Two interchangeable backends sit behind one `query` interface: a scripted
backend that replays canned assistant messages for deterministic runs, and
an HTTP backend speaking the OpenAI-compatible chat-completions protocol.
Every query consumes one iteration; HTTP queries also consume dollars
according to a per-model price table.
"""

import dataclasses
import json
import time
from decimal import Decimal
from typing import Iterable, Mapping, Optional, Sequence

import requests

from .errors import BackendError, BudgetExhausted, TranscriptExhausted

ROLES = ("system", "user", "assistant", "tool")

DEFAULT_MAX_ITERATIONS = 75
DEFAULT_TEMPERATURE = Decimal("0.0")
DEFAULT_MAX_COST_USD = Decimal("1.00")

_ZERO = Decimal("0")
_MTOK = Decimal(1_000_000)


def _approx_tokens(text: str) -> int:
    # Rough 4-chars-per-token heuristic; used only for bookkeeping, never gating.
    return (len(text) + 3) // 4


@dataclasses.dataclass(frozen=True)
class ChatTurn:
    """One message of the transcript."""

    role: str
    content: str
    token_estimate: int = -1  # -1 means "estimate from content length"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.token_estimate < 0:
            object.__setattr__(self, "token_estimate", _approx_tokens(self.content))


def _as_decimal(value) -> Decimal:
    if isinstance(value, Decimal):
        return value
    return Decimal(str(value))


@dataclasses.dataclass
class Budget:
    """Iteration and dollar ceilings for one repair task."""

    max_iterations: int = DEFAULT_MAX_ITERATIONS
    iterations_used: int = 0
    max_cost_usd: Decimal = DEFAULT_MAX_COST_USD
    cost_used_usd: Decimal = _ZERO
    temperature: Decimal = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.max_cost_usd = _as_decimal(self.max_cost_usd)
        self.cost_used_usd = _as_decimal(self.cost_used_usd)
        self.temperature = _as_decimal(self.temperature)
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not (_ZERO <= self.temperature <= Decimal(1)):
            raise ValueError("temperature must be in [0, 1]")
        if self.iterations_used < 0 or self.cost_used_usd < _ZERO:
            raise ValueError("usage counters must be non-negative")

    def charge(self, cost_usd: Decimal = _ZERO) -> None:
        """Account one completed query. Monotone; overshoot clamps to the cap."""
        cost_usd = _as_decimal(cost_usd)
        if cost_usd < _ZERO:
            raise ValueError("cost cannot be negative")
        self.iterations_used = min(self.iterations_used + 1, self.max_iterations)
        self.cost_used_usd = min(self.cost_used_usd + cost_usd, self.max_cost_usd)


def has_budget(budget: Budget) -> bool:
    return (
        budget.iterations_used < budget.max_iterations
        and budget.cost_used_usd < budget.max_cost_usd
    )


@dataclasses.dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int
    cost_usd: Decimal


@dataclasses.dataclass(frozen=True)
class PriceTable:
    """USD per million tokens, keyed by model name."""

    prices: Mapping[str, tuple]  # model -> (input_per_mtok, output_per_mtok)

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "PriceTable":
        prices = {}
        for model, entry in raw.items():
            prices[model] = (
                _as_decimal(entry["input_per_mtok"]),
                _as_decimal(entry["output_per_mtok"]),
            )
        return cls(prices=prices)

    def cost(self, model: str, prompt_tokens: int, completion_tokens: int) -> Decimal:
        if model not in self.prices:
            return _ZERO  # unpriced model: cost gate defers to the iteration cap
        inp, out = self.prices[model]
        return (Decimal(prompt_tokens) * inp + Decimal(completion_tokens) * out) / _MTOK


class ChatBackend:
    """Shared query discipline: gate on budget, charge atomically with return."""

    def query(self, history: Sequence[ChatTurn], budget: Budget):
        if not has_budget(budget):
            raise BudgetExhausted(
                f"budget exhausted: {budget.iterations_used}/{budget.max_iterations} "
                f"iterations, ${budget.cost_used_usd}/${budget.max_cost_usd}"
            )
        text, usage = self._complete(history, budget.temperature)
        budget.charge(usage.cost_usd)
        return text, usage

    def _complete(self, history, temperature):
        raise NotImplementedError


class ScriptedBackend(ChatBackend):
    """Replays canned assistant messages in order at zero cost.

    Transcript files are line-delimited JSON records, one assistant message
    per record: {"role": "assistant", "content": "..."}. Blank lines and
    records for other roles are skipped.
    """

    def __init__(self, messages: Iterable[str]):
        self._messages = list(messages)
        self._cursor = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        messages = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except ValueError as exc:
                    raise BackendError(f"{path}:{lineno}: bad transcript record: {exc}")
                if not isinstance(record, dict) or "content" not in record:
                    raise BackendError(f"{path}:{lineno}: record lacks 'content'")
                if record.get("role", "assistant") != "assistant":
                    continue
                messages.append(record["content"])
        return cls(messages)

    @property
    def remaining(self) -> int:
        return len(self._messages) - self._cursor

    def _complete(self, history, temperature):
        if self._cursor >= len(self._messages):
            raise TranscriptExhausted(
                f"scripted transcript exhausted after {self._cursor} messages"
            )
        text = self._messages[self._cursor]
        self._cursor += 1
        return text, Usage(0, _approx_tokens(text), _ZERO)


class HttpBackend(ChatBackend):
    """OpenAI-compatible chat-completions client with retry and cost accounting."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        price_table: Optional[PriceTable] = None,
        timeout: float = 120.0,
        max_retries: int = 2,
        backoff_seconds: float = 1.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.price_table = price_table or PriceTable(prices={})
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self._session = session or requests.Session()

    @staticmethod
    def _wire_role(role: str) -> str:
        # The completions API has no free-standing tool role; distilled tool
        # output travels as a user message.
        return "user" if role == "tool" else role

    def _complete(self, history, temperature):
        payload = {
            "model": self.model,
            "temperature": float(temperature),
            "messages": [
                {"role": self._wire_role(t.role), "content": t.content} for t in history
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = self.base_url + "/chat/completions"
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.timeout
                )
                if resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                    continue
                resp.raise_for_status()
                data = resp.json()
                return self._unpack(data)
            except (requests.RequestException, ValueError, KeyError, IndexError) as exc:
                last_error = repr(exc)
        raise BackendError(f"chat request failed after {self.max_retries + 1} attempts: {last_error}")

    def _unpack(self, data):
        text = data["choices"][0]["message"]["content"]
        usage = data.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", 0))
        completion_tokens = int(usage.get("completion_tokens", 0))
        cost = self.price_table.cost(self.model, prompt_tokens, completion_tokens)
        return text, Usage(prompt_tokens, completion_tokens, cost)
