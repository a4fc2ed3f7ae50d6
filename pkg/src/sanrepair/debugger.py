"""Interactive debugging sessions with validated commands and bounded output.

Three backends share one session surface: forward (plain gdb), replay
(gdb inside a record/replay tool, enabling reverse execution), and fake
(a canned command->output transcript that makes the whole agent loop
testable with no toolchain). Agent-issued commands pass a whitelist and a
metacharacter screen before touching the debugger, and all captured output
is capped.
"""

import dataclasses
import hashlib
import json
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
from typing import Dict, FrozenSet, List, Optional, Tuple

from . import gdbmi
from .errors import LaunchFailure, RecordFailure, RejectedCommand, SessionDead

OUTPUT_CAP = 64 * 1024
RUN_TIMEOUT = 120.0
COMMAND_TIMEOUT = 30.0
MAX_RESTARTS = 3

# Session states
NOT_STARTED = "NotStarted"
AT_TRAP = "AtTrap"
STOPPED = "Stopped"
RUNNING = "Running"
EXITED = "Exited"

# Capabilities
REVERSE_EXEC = "reverse_exec"
HEAP_INTROSPECTION = "heap_introspection"

# Sanitizer runtime options pinned so traps become catchable signals and
# exit codes are reliable gates (shared with the validate module).
PINNED_SANITIZER_ENV = {
    "ASAN_OPTIONS": "abort_on_error=1:detect_leaks=1:symbolize=1",
    "UBSAN_OPTIONS": "abort_on_error=1:print_stacktrace=1",
    "MSAN_OPTIONS": "abort_on_error=1",
    "LSAN_OPTIONS": "",
}

WHITELIST: Dict[str, str] = {}
for _verb in ("break", "tbreak", "watch", "rwatch", "awatch", "delete", "display"):
    WHITELIST[_verb] = "breakpoint"
for _verb in ("info", "print", "x", "backtrace", "bt", "frame", "up", "down",
              "list", "disassemble"):
    WHITELIST[_verb] = "inspect"
for _verb in ("continue", "step", "next", "finish", "until"):
    WHITELIST[_verb] = "control"
for _verb in ("reverse-continue", "reverse-step", "reverse-next", "reverse-finish"):
    WHITELIST[_verb] = "reverse"

# Characters that could escape the debugger into a host shell. gdb's pipe
# syntax ("print x | grep y") and backtick expansion are the attack surface.
_FORBIDDEN = ("`", "|", "$(", "\n", "\r", "\x00")

_SANITIZER_MARKS = (
    "ERROR: AddressSanitizer",
    "ERROR: LeakSanitizer",
    "WARNING: MemorySanitizer",
    "ERROR: MemorySanitizer",
    "UndefinedBehaviorSanitizer",
    "runtime error:",
    "SUMMARY: ",
)


@dataclasses.dataclass(frozen=True)
class DebugCommand:
    """One validated command line. verb keeps the token as issued
    (x/16xw stays x/16xw); the whitelist check uses its base before '/'."""

    verb: str
    argument_text: str
    category: str

    @property
    def text(self) -> str:
        return f"{self.verb} {self.argument_text}".strip()


@dataclasses.dataclass(frozen=True)
class DebuggerOutput:
    raw: str
    truncated: bool
    byte_count: int
    stop_reason: Optional[str]  # breakpoint|watchpoint|signal|sanitizer_trap|exited

    def __post_init__(self):
        if self.truncated and self.byte_count <= len(self.raw.encode("utf-8", "replace")):
            raise ValueError("truncated output must report a larger original size")


class _FakeScript:
    """Canned (pattern, output, stop_event) records driving the fake backend."""

    def __init__(self, spec: dict):
        self.capabilities = frozenset(spec.get("capabilities", ()))
        self.run_record = spec.get("run", {"output": "", "stop": "exited"})
        self.responses = [dict(r) for r in spec.get("responses", ())]
        self.default_output = spec.get("default_output", "")

    @staticmethod
    def _render(record: dict) -> str:
        repeat = record.get("output_repeat")
        if repeat:
            return repeat["unit"] * int(repeat["count"])
        return record.get("output", "")

    def lookup(self, command: str) -> Tuple[str, Optional[str]]:
        for record in self.responses:
            if record.get("consumed"):
                continue
            if re.search(record["pattern"], command):
                if record.get("once"):
                    record["consumed"] = True
                return self._render(record), record.get("stop")
        fallback = self.default_output or f'Undefined command: "{command.split()[0]}".'
        return fallback, None


@dataclasses.dataclass
class DebugSession:
    backend: str  # forward | replay | fake
    state: str
    target: str  # binary path (or transcript path for the fake backend)
    capabilities: FrozenSet[str]
    command_log: List[Tuple[str, str]] = dataclasses.field(default_factory=list)
    passthrough: FrozenSet[str] = frozenset()
    output_cap: int = OUTPUT_CAP
    restarts_used: int = 0
    run_line: str = ""
    mi: Optional[gdbmi.MiSession] = None
    fake: Optional[_FakeScript] = None

    def close(self) -> None:
        if self.mi is not None:
            self.mi.close()


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8", errors="replace")).hexdigest()[:12]


def _pinned_env() -> dict:
    env = dict(os.environ)
    env.update(PINNED_SANITIZER_ENV)
    return env


def _check_executable(path: str) -> None:
    if not os.path.isfile(path):
        raise LaunchFailure(f"target binary {path!r} does not exist")
    if not os.access(path, os.X_OK):
        raise LaunchFailure(f"target binary {path!r} is not executable")


def _run_line(task) -> str:
    """Build the console run invocation from the PoC delivery mode."""
    poc = os.path.abspath(task.poc_path)
    mode = task.poc_mode
    if mode == "stdin":
        return f"run < {shlex.quote(poc)}"
    if mode == "file-arg":
        return f"run {shlex.quote(poc)}"
    if mode == "argv":
        with open(poc, encoding="utf-8", errors="replace") as fh:
            content = fh.read().rstrip("\n")
        return f"run {shlex.quote(content)}"
    raise LaunchFailure(f"unknown poc delivery mode {mode!r}")


def _record_replay(task, rr_path: str, recording_root: Optional[str]) -> str:
    """Record the PoC execution once, keyed by binary hash; return trace dir."""
    binary = os.path.abspath(task.target_binary)
    with open(binary, "rb") as fh:
        key = hashlib.sha256(fh.read()).hexdigest()[:16]
    root = recording_root or os.path.join(tempfile.gettempdir(), "sanrepair-rr")
    trace_dir = os.path.join(root, key)
    if os.path.isdir(trace_dir) and os.listdir(trace_dir):
        return trace_dir  # recordings are per-binary-hash; rebuilds change the key
    os.makedirs(root, exist_ok=True)
    argv = [rr_path, "record", "-o", trace_dir, binary]
    stdin = subprocess.DEVNULL
    if task.poc_mode == "stdin":
        stdin = open(task.poc_path, "rb")
    elif task.poc_mode == "file-arg":
        argv.append(os.path.abspath(task.poc_path))
    elif task.poc_mode == "argv":
        with open(task.poc_path, encoding="utf-8", errors="replace") as fh:
            argv.append(fh.read().rstrip("\n"))
    try:
        # A crashing exit status is the expected outcome; only a missing
        # trace directory means the recording failed.
        proc = subprocess.run(
            argv, stdin=stdin, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
            env=_pinned_env(), timeout=RUN_TIMEOUT,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise RecordFailure(f"recording pass failed: {exc}")
    finally:
        if stdin is not subprocess.DEVNULL:
            stdin.close()
    if not (os.path.isdir(trace_dir) and os.listdir(trace_dir)):
        tail = proc.stdout.decode("utf-8", errors="replace")[-500:]
        raise RecordFailure(f"recording produced no trace: {tail}")
    return trace_dir


def init_session(
    task,
    backend: str = "forward",
    *,
    passthrough=(),
    output_cap: int = OUTPUT_CAP,
    gdb_path: str = "gdb",
    rr_path: str = "rr",
    fake_script=None,
    recording_root: Optional[str] = None,
) -> DebugSession:
    """Launch a debugger on the task's target; session starts NotStarted."""
    passthrough = frozenset(passthrough)
    if backend == "fake":
        path = fake_script
        if path is None:
            raise LaunchFailure("fake backend requires a transcript file")
        with open(path, encoding="utf-8") as fh:
            script = _FakeScript(json.load(fh))
        return DebugSession(
            backend="fake", state=NOT_STARTED, target=str(path),
            capabilities=script.capabilities, passthrough=passthrough,
            output_cap=output_cap, fake=script,
        )

    binary = os.path.abspath(task.target_binary)
    _check_executable(binary)
    if backend == "replay":
        if shutil.which(rr_path) is None:
            raise RecordFailure(f"record/replay tool {rr_path!r} not found on PATH")
        trace_dir = _record_replay(task, rr_path, recording_root)
        argv = [rr_path, "replay", trace_dir, "--", "--interpreter=mi2", "--quiet", "--nx"]
        capabilities = frozenset({REVERSE_EXEC} | ({HEAP_INTROSPECTION} if passthrough else set()))
        run_line = "continue"  # replay starts at entry; continue reaches the trap
    elif backend == "forward":
        argv = [gdb_path, "--interpreter=mi2", "--quiet", "--nx", binary]
        capabilities = frozenset({HEAP_INTROSPECTION} if passthrough else set())
        run_line = _run_line(task)
    else:
        raise LaunchFailure(f"unknown debugger backend {backend!r}")

    mi = gdbmi.MiSession(argv, env=_pinned_env(), cwd=str(task.project_root))
    for setup in ("set confirm off", "set pagination off"):
        mi.send_console(setup, timeout=10.0, cap=output_cap)
    return DebugSession(
        backend=backend, state=NOT_STARTED, target=binary,
        capabilities=capabilities, passthrough=passthrough,
        output_cap=output_cap, run_line=run_line, mi=mi,
    )


def _classify_stop(stop: Dict[str, str], captured: str) -> Tuple[str, Optional[str]]:
    """Map an MI *stopped record to (session state, stop_reason)."""
    reason = stop.get("reason", "")
    if reason.startswith("exited"):
        if reason == "exited-signalled":
            return EXITED, "signal"
        return EXITED, "exited"
    if reason == "breakpoint-hit":
        return STOPPED, "breakpoint"
    if "watchpoint" in reason:
        return STOPPED, "watchpoint"
    if reason == "signal-received":
        if any(mark in captured for mark in _SANITIZER_MARKS):
            return AT_TRAP, "sanitizer_trap"
        return AT_TRAP, "signal"
    return STOPPED, None  # stepping stops and friends


def _finish_output(session: DebugSession, response: gdbmi.MiResponse) -> DebuggerOutput:
    stop_reason = None
    if response.stops:
        session.state, stop_reason = _classify_stop(response.stops[-1], response.text)
    return DebuggerOutput(
        raw=response.text,
        truncated=response.truncated,
        byte_count=response.byte_count,
        stop_reason=stop_reason,
    )


def run_to_trap(session: DebugSession, timeout: float = RUN_TIMEOUT) -> DebuggerOutput:
    """Run the target on the PoC until trap, exit, or timeout (not an error)."""
    if session.state != NOT_STARTED:
        raise ValueError(f"run_to_trap requires a fresh session, state={session.state}")
    if session.backend == "fake":
        record = session.fake.run_record
        output = _FakeScript._render(record)
        stop = record.get("stop")
        session.state = {
            "sanitizer_trap": AT_TRAP, "signal": AT_TRAP,
            "breakpoint": STOPPED, "watchpoint": STOPPED,
        }.get(stop, EXITED)
        session.command_log.append(("run", _digest(output)))
        return DebuggerOutput(
            raw=output, truncated=False,
            byte_count=len(output.encode("utf-8", "replace")), stop_reason=stop,
        )

    deadline = time.monotonic() + timeout
    try:
        response = session.mi.send_console(
            session.run_line, timeout=timeout, cap=session.output_cap
        )
        if not response.stops:
            remaining = max(deadline - time.monotonic(), 0.1)
            if not session.mi.wait_stopped(remaining, session.output_cap, into=response):
                session.mi.kill()
                session.state = EXITED
                marker = f"\n[target still running after {timeout:.0f}s; session killed]\n"
                output = DebuggerOutput(
                    raw=response.text + marker,
                    truncated=response.truncated,
                    byte_count=response.byte_count + len(marker.encode()),
                    stop_reason="exited",
                )
                session.command_log.append(("run", _digest(output.raw)))
                return output
    except SessionDead as exc:
        # A wedged launch is reported like a timeout, not raised: the agent
        # loop treats irreproduction as an outcome, not a crash.
        session.state = EXITED
        note = f"[debugger session died during run: {exc}]\n"
        output = DebuggerOutput(
            raw=note, truncated=False, byte_count=len(note.encode()), stop_reason="exited"
        )
        session.command_log.append(("run", _digest(output.raw)))
        return output
    output = _finish_output(session, response)
    session.command_log.append(("run", _digest(output.raw)))
    return output


def validate_command(
    text: str,
    *,
    capabilities: FrozenSet[str] = frozenset(),
    passthrough: FrozenSet[str] = frozenset(),
) -> DebugCommand:
    """Screen one agent-issued command line; RejectedCommand carries the reason."""
    line = (text or "").strip()
    if not line:
        raise RejectedCommand("empty command")
    for bad in _FORBIDDEN:
        if bad in line:
            raise RejectedCommand(
                f"command contains forbidden sequence {bad!r}; "
                "shell escapes are not available"
            )
    parts = line.split(None, 1)
    verb = parts[0]
    argument_text = parts[1] if len(parts) > 1 else ""
    base = verb.split("/", 1)[0]
    if base in WHITELIST:
        category = WHITELIST[base]
        if category == "reverse" and REVERSE_EXEC not in capabilities:
            raise RejectedCommand(
                f"{base} requires reverse execution, but this session lacks the "
                "reverse_exec capability (forward-only backend)"
            )
        return DebugCommand(verb=verb, argument_text=argument_text, category=category)
    if base in passthrough:
        return DebugCommand(verb=verb, argument_text=argument_text, category="passthrough")
    allowed = ", ".join(sorted(set(WHITELIST) | set(passthrough)))
    raise RejectedCommand(f"command verb {base!r} is not whitelisted; allowed: {allowed}")


def execute(
    session: DebugSession, cmd: DebugCommand, timeout: float = COMMAND_TIMEOUT
) -> DebuggerOutput:
    """Execute a validated command; capped output; state follows stop records."""
    if session.state not in (AT_TRAP, STOPPED):
        raise SessionDead(
            f"no stopped inferior to command (state={session.state}); restart the session"
        )
    full = cmd.text
    if session.backend == "fake":
        raw, stop = session.fake.lookup(full)
        data = raw.encode("utf-8", errors="replace")
        truncated = len(data) > session.output_cap
        if truncated:
            raw = data[: session.output_cap].decode("utf-8", errors="replace")
        if stop:
            session.state = {
                "sanitizer_trap": AT_TRAP, "signal": AT_TRAP, "exited": EXITED,
                "breakpoint": STOPPED, "watchpoint": STOPPED,
            }.get(stop, STOPPED)
        session.command_log.append((full, _digest(raw)))
        return DebuggerOutput(
            raw=raw, truncated=truncated, byte_count=len(data), stop_reason=stop
        )

    response = session.mi.send_console(full, timeout=timeout, cap=session.output_cap)
    if cmd.category in ("control", "reverse") and not response.stops:
        if not session.mi.wait_stopped(timeout, session.output_cap, into=response):
            session.mi.kill()
            session.state = EXITED
            raise SessionDead(f"target did not stop within {timeout:.0f}s after {full!r}")
    output = _finish_output(session, response)
    session.command_log.append((full, _digest(output.raw)))
    return output


def restart_session(session: DebugSession, task, **kwargs) -> DebugSession:
    """Fresh session after a death; at most MAX_RESTARTS per repair task."""
    if session.restarts_used >= MAX_RESTARTS:
        raise LaunchFailure(f"restart budget exhausted ({MAX_RESTARTS} restarts)")
    session.close()
    if session.backend == "fake":
        kwargs.setdefault("fake_script", session.target)
    fresh = init_session(
        task, session.backend,
        passthrough=session.passthrough, output_cap=session.output_cap, **kwargs,
    )
    fresh.restarts_used = session.restarts_used + 1
    return fresh
