"""Minimal GDB machine-interface (MI) transport.

Speaks MI2 over the debugger's pipes: console commands are wrapped in
-interpreter-exec so the human syntax stays available while stop reasons
and result codes arrive as unambiguous MI records. Inferior stdout/stderr
share the pipe and surface as unprefixed lines (sanitizer reports arrive
this way); a strict record grammar keeps them apart from MI traffic.
"""

import os
import queue
import re
import shutil
import signal
import subprocess
import threading
import time
from typing import Dict, List, Optional

from .errors import LaunchFailure, SessionDead

PROMPT = "(gdb)"

_RESULT_RE = re.compile(r"^\d*\^([a-z-]+)(?:,(.*))?$")
_EXEC_ASYNC_RE = re.compile(r"^\d*\*([a-z-]+)(?:,(.*))?$")
_NOTIFY_RE = re.compile(r"^=([a-zA-Z][a-zA-Z0-9-]*)(?:,(.*))?$")
_STATUS_RE = re.compile(r"^\d*\+([a-z-]+)(?:,(.*))?$")
_STREAM_RE = re.compile(r'^([~&@])"(.*)"$')
_FIELD_RE = re.compile(r'([a-z-]+)="((?:[^"\\]|\\.)*)"')


_SIMPLE_ESCAPES = {
    "n": b"\n", "t": b"\t", "r": b"\r", '"': b'"', "\\": b"\\",
    "f": b"\f", "b": b"\b", "a": b"\a", "v": b"\v", "e": b"\x1b",
}


def unescape(text: str) -> str:
    """Undo MI c-string escaping (simple escapes plus octal byte escapes)."""
    out = bytearray()
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\" and i + 1 < n:
            simple = _SIMPLE_ESCAPES.get(text[i + 1])
            if simple is not None:
                out += simple
                i += 2
                continue
            j = i + 1
            digits = ""
            while j < n and len(digits) < 3 and text[j] in "01234567":
                digits += text[j]
                j += 1
            if digits:
                out.append(int(digits, 8) & 0xFF)
                i = j
                continue
        out += ch.encode("utf-8")
        i += 1
    return out.decode("utf-8", errors="replace")


def fields(payload: Optional[str]) -> Dict[str, str]:
    """Extract top-level key="value" pairs from an MI record payload."""
    if not payload:
        return {}
    return {key: unescape(value) for key, value in _FIELD_RE.findall(payload)}


class MiEvent:
    __slots__ = ("kind", "name", "payload", "text")

    def __init__(self, kind: str, name: str = "", payload: str = "", text: str = ""):
        self.kind = kind  # result | exec | notify | status | console | log | target | raw | prompt
        self.name = name
        self.payload = payload
        self.text = text


def parse_line(line: str) -> MiEvent:
    if line.startswith(PROMPT):
        return MiEvent("prompt")
    m = _STREAM_RE.match(line)
    if m:
        kind = {"~": "console", "&": "log", "@": "target"}[m.group(1)]
        return MiEvent(kind, text=unescape(m.group(2)))
    m = _RESULT_RE.match(line)
    if m:
        return MiEvent("result", name=m.group(1), payload=m.group(2) or "")
    m = _EXEC_ASYNC_RE.match(line)
    if m:
        return MiEvent("exec", name=m.group(1), payload=m.group(2) or "")
    m = _NOTIFY_RE.match(line)
    if m:
        return MiEvent("notify", name=m.group(1), payload=m.group(2) or "")
    m = _STATUS_RE.match(line)
    if m:
        return MiEvent("status", name=m.group(1), payload=m.group(2) or "")
    # Anything else is inferior output sharing the pipe (e.g. an ASan report).
    return MiEvent("raw", text=line)


class MiResponse:
    """Everything observed while one command ran, up to the closing prompt."""

    def __init__(self):
        self.result_class: Optional[str] = None
        self.result_payload: str = ""
        self.stops: List[Dict[str, str]] = []
        self.chunks: List[str] = []  # console/target/raw text in arrival order
        self.byte_count = 0
        self.truncated = False

    def add_text(self, text: str, cap: int) -> None:
        data = text.encode("utf-8", errors="replace")
        self.byte_count += len(data)
        if self.truncated:
            return
        if self.byte_count > cap:
            keep = cap - (self.byte_count - len(data))
            if keep > 0:
                self.chunks.append(data[:keep].decode("utf-8", errors="replace"))
            self.truncated = True
        else:
            self.chunks.append(text)

    @property
    def text(self) -> str:
        return "".join(self.chunks)


class MiSession:
    """One gdb child process plus a dedicated pipe reader."""

    def __init__(self, argv: List[str], env: Optional[dict] = None, cwd=None):
        if shutil.which(argv[0]) is None:
            raise LaunchFailure(f"debugger binary {argv[0]!r} not found on PATH")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                env=env,
                cwd=cwd,
                start_new_session=True,
            )
        except OSError as exc:
            raise LaunchFailure(f"could not launch {argv[0]!r}: {exc}")
        self._events: "queue.Queue[Optional[MiEvent]]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        # Swallow the banner up to the first prompt; errors here mean a bad target.
        self._collect(timeout=30.0, cap=64 * 1024)

    def _pump(self) -> None:
        stream = self._proc.stdout
        while True:
            chunk = stream.readline()
            if not chunk:
                break
            line = chunk.decode("utf-8", errors="replace").rstrip("\r\n")
            self._events.put(parse_line(line))
        self._events.put(None)  # EOF sentinel

    @property
    def alive(self) -> bool:
        return self._proc.poll() is None

    def _next_event(self, deadline: float) -> Optional[MiEvent]:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise TimeoutError
        try:
            return self._events.get(timeout=remaining)
        except queue.Empty:
            raise TimeoutError

    def _collect(self, timeout: float, cap: int, into: Optional[MiResponse] = None) -> MiResponse:
        """Consume events until the prompt; fold streams into the response."""
        response = into or MiResponse()
        deadline = time.monotonic() + timeout
        while True:
            event = self._next_event(deadline)
            if event is None:
                raise SessionDead("debugger closed its pipe")
            if event.kind == "prompt":
                return response
            if event.kind == "result":
                response.result_class = event.name
                response.result_payload = event.payload
                if event.name == "error":
                    message = fields(event.payload).get("msg", "")
                    if message:
                        response.add_text(message + "\n", cap)
            elif event.kind == "exec" and event.name == "stopped":
                response.stops.append(fields(event.payload))
            elif event.kind in ("console", "target"):
                response.add_text(event.text, cap)
            elif event.kind == "raw":
                response.add_text(event.text + "\n", cap)
            # log and notify records are protocol chatter; not agent-visible

    def send_console(self, command: str, timeout: float, cap: int) -> MiResponse:
        """Run one human-syntax command via -interpreter-exec and collect output."""
        if not self.alive:
            raise SessionDead("debugger process has exited")
        escaped = command.replace("\\", "\\\\").replace('"', '\\"')
        wire = f'-interpreter-exec console "{escaped}"\n'
        try:
            self._proc.stdin.write(wire.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise SessionDead("debugger stdin pipe is broken")
        try:
            return self._collect(timeout=timeout, cap=cap)
        except TimeoutError:
            self.kill()
            raise SessionDead(f"command {command!r} timed out after {timeout:.0f}s")

    def wait_stopped(self, timeout: float, cap: int, into: MiResponse) -> bool:
        """After a resume, wait for *stopped. False on timeout (caller decides)."""
        deadline = time.monotonic() + timeout
        while True:
            try:
                event = self._next_event(deadline)
            except TimeoutError:
                return False
            if event is None:
                raise SessionDead("debugger closed its pipe")
            if event.kind == "exec" and event.name == "stopped":
                into.stops.append(fields(event.payload))
                break
            if event.kind in ("console", "target"):
                into.add_text(event.text, cap)
            elif event.kind == "raw":
                into.add_text(event.text + "\n", cap)
            elif event.kind == "notify" and event.name == "thread-group-exited":
                # Clean exit produces no *stopped in some gdb builds.
                into.stops.append({"reason": "exited-normally"})
                break
        # The stop batch ends with its own prompt; drain it so the next
        # command does not return early on a stale prompt.
        try:
            grace = min(5.0, max(deadline - time.monotonic(), 0.5))
            self._collect(timeout=grace, cap=cap, into=into)
        except TimeoutError:
            pass
        return True

    def kill(self) -> None:
        try:
            self._proc.kill()
        except OSError:
            pass
        self._proc.wait()

    def close(self) -> None:
        if self.alive:
            try:
                self._proc.stdin.write(b"-gdb-exit\n")
                self._proc.stdin.flush()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.kill()
        self._reader.join(timeout=5)

    def interrupt(self) -> None:
        """SIGINT the process group so a running inferior stops."""
        try:
            os.killpg(self._proc.pid, signal.SIGINT)
        except (OSError, ProcessLookupError):
            pass
