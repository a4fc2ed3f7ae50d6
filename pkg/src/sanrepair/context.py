"""Agent transcript state, action-envelope parsing, and output compaction.

The assistant declares exactly one tool action per reply inside a fenced
```action block holding a single JSON object. Raw tool output re-enters the
transcript only after distillation: verbatim when small, via an
agent-emitted sandboxed script when one is supplied, otherwise as a
head/tail excerpt with an elision marker. This keeps per-iteration context
growth bounded regardless of how much the tools print.
"""

import dataclasses
import json
import re
from typing import List, Optional, Tuple

from .errors import ProtocolError, ScriptFailed
from .oracle import ChatTurn
from .sandbox import run_summary_script

INLINE_CAP = 4096
HEAD_FRACTION = 0.6  # sanitizer-style output front-loads the error, back-loads the summary
DEFAULT_RADIUS = 30

ACTION_KINDS = ("view_source", "debug", "script", "patch", "conclude", "hypothesis")

_FENCE_RE = re.compile(r"^[ \t]*```action[ \t]*\n(.*?)^[ \t]*```", re.DOTALL | re.MULTILINE)


@dataclasses.dataclass(frozen=True)
class ActionEnvelope:
    """One parsed assistant action. Payload keys are kind-specific."""

    kind: str
    payload: dict
    # Parser notes (ignored blocks, skipped malformed fences); not part of identity.
    warnings: Tuple[str, ...] = dataclasses.field(default=(), compare=False)


def _reject(reason: str) -> ProtocolError:
    return ProtocolError(reason)


def _require_str(body: dict, key: str, kind: str) -> str:
    value = body.get(key)
    if not isinstance(value, str) or not value.strip():
        raise _reject(f"{kind} action requires a non-empty string {key!r}")
    return value


def _validate_body(body) -> ActionEnvelope:
    if not isinstance(body, dict):
        raise _reject("action body must be a JSON object")
    kind = body.get("kind")
    if kind not in ACTION_KINDS:
        raise _reject(
            f"unknown action kind {kind!r}; expected one of {', '.join(ACTION_KINDS)}"
        )
    if kind == "view_source":
        path = _require_str(body, "path", kind)
        line = body.get("line")
        if not isinstance(line, int) or isinstance(line, bool) or line < 1:
            raise _reject("view_source action requires an integer 'line' >= 1")
        radius = body.get("radius", DEFAULT_RADIUS)
        if not isinstance(radius, int) or isinstance(radius, bool) or radius < 0:
            raise _reject("view_source 'radius' must be a non-negative integer")
        payload = {"path": path, "line": line, "radius": radius}
    elif kind == "debug":
        commands = body.get("commands")
        if (
            not isinstance(commands, list)
            or not commands
            or not all(isinstance(c, str) and c.strip() for c in commands)
        ):
            raise _reject("debug action requires a non-empty 'commands' list of strings")
        payload = {"commands": list(commands)}
    elif kind == "script":
        payload = {"program": _require_str(body, "program", kind)}
    elif kind == "patch":
        payload = {
            "root_cause": _require_str(body, "root_cause", kind),
            "diff": _require_str(body, "diff", kind),
        }
    elif kind == "conclude":
        payload = {"rationale": _require_str(body, "rationale", kind)}
    else:  # hypothesis
        payload = {"text": _require_str(body, "text", kind)}
    return ActionEnvelope(kind=kind, payload=payload)


def parse_action(assistant_text: str) -> ActionEnvelope:
    """Extract the first well-formed action envelope from assistant text.

    Later fences and malformed earlier fences are reported via
    envelope.warnings so the orchestrator can feed them back. ProtocolError
    when no fence parses; the caller appends the reason to the transcript.
    """
    fences = _FENCE_RE.findall(assistant_text or "")
    if not fences:
        raise _reject("no action envelope found")
    first_failure: Optional[str] = None
    for index, fence in enumerate(fences):
        try:
            body = json.loads(fence)
        except ValueError as exc:
            if first_failure is None:
                first_failure = f"action body is not valid JSON: {exc}"
            continue
        try:
            envelope = _validate_body(body)
        except ProtocolError as exc:
            if first_failure is None:
                first_failure = exc.reason
            continue
        warnings = []
        if index:
            warnings.append(
                f"skipped {index} malformed action block(s) before the one executed"
            )
        extra = len(fences) - index - 1
        if extra:
            warnings.append(
                f"ignored {extra} extra action block(s): only the first action per reply is executed"
            )
        return dataclasses.replace(envelope, warnings=tuple(warnings))
    raise _reject(first_failure or "no action envelope found")


def render_action(envelope: ActionEnvelope) -> str:
    """Inverse of parse_action for valid envelopes (round-trip property)."""
    body = {"kind": envelope.kind}
    body.update(envelope.payload)
    return "```action\n" + json.dumps(body, indent=2, sort_keys=True) + "\n```"


class AgentContext:
    """The evolving transcript of one repair task.

    hypothesis_stated flips true at most once and never back;
    debug_evidence_count counts accepted debug/view actions. Both feed the
    orchestrator's gate that rejects patches proposed before any dynamic
    investigation.
    """

    def __init__(self):
        self.turns: List[ChatTurn] = []
        self.notes: List[str] = []
        self.char_estimate = 0
        self._hypothesis_stated = False
        self.debug_evidence_count = 0

    @property
    def hypothesis_stated(self) -> bool:
        return self._hypothesis_stated

    def state_hypothesis(self, text: str) -> None:
        self._hypothesis_stated = True
        self.notes.append(f"hypothesis: {text}")

    def record_evidence(self) -> None:
        self.debug_evidence_count += 1

    def append_turn(self, role: str, content: str) -> ChatTurn:
        turn = ChatTurn(role=role, content=content)
        self.turns.append(turn)
        self.char_estimate += len(content)
        return turn

    def history(self) -> List[ChatTurn]:
        return list(self.turns)


def _head_tail_excerpt(raw: bytes, cap: int) -> str:
    head_len = int(cap * HEAD_FRACTION)
    tail_len = cap - head_len
    head = raw[:head_len].decode("utf-8", errors="replace")
    tail = raw[-tail_len:].decode("utf-8", errors="replace")
    elided = len(raw) - head_len - tail_len
    marker = f"\n[... {elided} of {len(raw)} bytes elided ...]\n"
    return head + marker + tail


def distill(
    ctx: AgentContext,
    raw_output,
    script: Optional[str] = None,
    *,
    inline_cap: int = INLINE_CAP,
) -> str:
    """Compact raw tool output and append it to ctx as a tool turn.

    Script path: run the agent's summarizer under the sandbox and use its
    stdout. Script failure falls back to mechanical truncation with a
    failure note so the agent learns what went wrong. No script: verbatim
    under the inline cap, head/tail excerpt above it.
    """
    if isinstance(raw_output, str):
        raw_bytes = raw_output.encode("utf-8", errors="replace")
    else:
        raw_bytes = bytes(raw_output)
    summary = None
    failure_note = ""
    if script is not None:
        try:
            summary = run_summary_script(script, raw_bytes)
        except ScriptFailed as exc:
            failure_note = (
                f"[summary script failed ({type(exc).__name__}): {exc.reason}; "
                "falling back to truncation]\n"
            )
            if exc.stderr_tail:
                failure_note += f"[script stderr tail]\n{exc.stderr_tail}\n"
    if summary is None:
        if len(raw_bytes) <= inline_cap:
            summary = failure_note + raw_bytes.decode("utf-8", errors="replace")
        else:
            summary = failure_note + _head_tail_excerpt(raw_bytes, inline_cap)
        if failure_note:
            ctx.notes.append(failure_note.splitlines()[0])
    ctx.notes.append(summary if len(summary) <= 200 else summary[:200] + "...")
    ctx.append_turn("tool", summary)
    return summary
