"""Closed-loop patch validation: rebuild, re-run the PoC, run the tests.

Three sequential gates with pinned sanitizer options and an allowlisted
environment so statuses are reproducible: a nonzero build fails compile, a
sanitizer abort or fatal signal on the PoC means the crash persists (the
fresh report is re-classified through the report parser), and a nonzero
test command fails functionally. Failures are distilled mechanically into
bounded transcript feedback.
"""

import dataclasses
import os
import re
import shlex
import subprocess
from typing import Optional, Tuple

from .debugger import PINNED_SANITIZER_ENV
from .errors import NoErrorHeader
from .report import VulnClass, parse_report, trapping_frame

BUILD_TIMEOUT = 600.0
POC_TIMEOUT = 120.0
TESTS_TIMEOUT = 600.0
FEEDBACK_CAP = 6 * 1024
COMPILE_ERROR_LINES = 20

PASS = "Pass"
COMPILE_FAIL = "CompileFail"
CRASH_PERSISTS = "CrashPersists"
TESTS_FAIL = "TestsFail"
TIMEOUT = "Timeout"

ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "TERM", "TMPDIR", "USER", "SHELL")

_SANITIZER_MARKS = ("ERROR: ", "WARNING: MemorySanitizer", "runtime error:", "SUMMARY: ")

_FAIL_PATTERNS = (
    re.compile(r"^not ok\s+\d+\s*-?\s*(.+)$"),          # TAP
    re.compile(r"^FAIL(?:ED)?[:\s]+(.+)$"),              # FAIL: name / FAILED name
    re.compile(r"^(.+?)\s+\.\.\.\s*FAIL(?:ED)?\s*$"),    # name ... FAILED
)


@dataclasses.dataclass(frozen=True)
class ValidationResult:
    status: str
    feedback: str
    build_log_path: Optional[str] = None
    run_log_path: Optional[str] = None

    def __post_init__(self):
        if self.status == PASS:
            if self.feedback:
                raise ValueError("Pass carries no feedback")
        else:
            if not self.feedback:
                raise ValueError(f"{self.status} requires feedback")
            if len(self.feedback.encode("utf-8", "replace")) > FEEDBACK_CAP:
                raise ValueError("feedback exceeds the cap")


def hermetic_env() -> dict:
    env = {key: os.environ[key] for key in ENV_ALLOWLIST if key in os.environ}
    env.update(PINNED_SANITIZER_ENV)
    return env


def _cap(text: str, limit: int = FEEDBACK_CAP) -> str:
    data = text.encode("utf-8", errors="replace")
    if len(data) <= limit:
        return text
    marker = "\n[feedback truncated]"
    keep = limit - len(marker.encode())
    return data[:keep].decode("utf-8", errors="replace") + marker


def _rebase(path: str, old_root: str, new_root: str) -> str:
    """Map a task path into the working copy it is being validated in."""
    path = os.path.abspath(path)
    old_root = os.path.abspath(old_root)
    if path == old_root or path.startswith(old_root + os.sep):
        return os.path.join(new_root, os.path.relpath(path, old_root))
    return path


def _write_log(log_dir: str, name: str, text: str) -> str:
    os.makedirs(log_dir, exist_ok=True)
    path = os.path.join(log_dir, name)
    with open(path, "w", encoding="utf-8", errors="replace") as fh:
        fh.write(text)
    return path


def _merged_output(proc: subprocess.CompletedProcess) -> str:
    out = proc.stdout.decode("utf-8", errors="replace") if proc.stdout else ""
    err = proc.stderr.decode("utf-8", errors="replace") if proc.stderr else ""
    return out + ("\n" if out and err else "") + err


def compile_feedback(output: str) -> str:
    """First N compiler error lines, with an elision note for the rest."""
    lines = output.splitlines()
    errors = [ln for ln in lines if re.search(r"\berror\b", ln, re.IGNORECASE)]
    if not errors:
        errors = lines
    shown = errors[:COMPILE_ERROR_LINES]
    text = "build failed; compiler diagnostics:\n" + "\n".join(shown)
    if len(errors) > COMPILE_ERROR_LINES:
        text += f"\n[... {len(errors) - COMPILE_ERROR_LINES} more error lines elided]"
    return _cap(text)


def _scrub_volatile(line: str) -> str:
    """Drop PIDs and addresses so identical crashes produce identical text."""
    line = re.sub(r"==\d+==", "", line)
    line = re.sub(r"0x[0-9a-fA-F]+", "0x?", line)
    return line.strip()


def crash_feedback(output: str, original_class=None) -> Tuple[str, Optional[VulnClass]]:
    """Summary + trapping frame + class-change note from a fresh crash."""
    try:
        report = parse_report(output)
    except NoErrorHeader:
        return _cap(
            "the PoC still dies with a fatal signal, but no sanitizer report "
            "was produced; output tail:\n" + output[-1500:]
        ), None
    pieces = ["the PoC still crashes after this patch."]
    if report.summary_line:
        pieces.append(f"summary: {_scrub_volatile(report.summary_line)}")
    else:
        pieces.append(f"tool: {report.tool}")
    try:
        frame = trapping_frame(report)
        where = frame.function
        if frame.file:
            where += f" at {frame.file}:{frame.line}"
        pieces.append(f"trapping frame: {where}")
    except Exception:
        pass
    new_class = report.vuln_class
    if original_class is not None:
        original_value = original_class.value if isinstance(original_class, VulnClass) else str(original_class)
        if original_value != new_class.value:
            pieces.append(
                f"note: the vulnerability class changed from {original_value} "
                f"to {new_class.value} under this patch."
            )
        else:
            pieces.append(f"the vulnerability class is unchanged ({new_class.value}).")
    return _cap("\n".join(pieces)), new_class


def tests_feedback(output: str) -> str:
    """Failing test identifiers, or a plain tail when none are recognizable."""
    names = []
    for line in output.splitlines():
        for pattern in _FAIL_PATTERNS:
            m = pattern.match(line.strip())
            if m:
                names.append(m.group(1).strip())
                break
    if names:
        listing = "\n".join(f"  - {name}" for name in names[:50])
        text = f"functional tests failed ({len(names)} failing):\n{listing}"
        if len(names) > 50:
            text += f"\n[... {len(names) - 50} more failing tests elided]"
    else:
        text = "functional tests failed; output tail:\n" + "\n".join(output.splitlines()[-20:])
    return _cap(text)


def _poc_argv_stdin(task, root: str):
    binary = _rebase(task.target_binary, task.project_root, root)
    poc = os.path.abspath(task.poc_path)
    if task.poc_mode == "stdin":
        return [binary], poc
    if task.poc_mode == "file-arg":
        return [binary, poc], None
    if task.poc_mode == "argv":
        with open(poc, encoding="utf-8", errors="replace") as fh:
            return [binary, fh.read().rstrip("\n")], None
    raise ValueError(f"unknown poc delivery mode {task.poc_mode!r}")


def run_poc(task, root: str, timeout: float = POC_TIMEOUT) -> subprocess.CompletedProcess:
    """Run the PoC against the (re)built binary under pinned sanitizer env."""
    argv, stdin_path = _poc_argv_stdin(task, root)
    stdin = open(stdin_path, "rb") if stdin_path else subprocess.DEVNULL
    try:
        return subprocess.run(
            argv, stdin=stdin, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            cwd=root, env=hermetic_env(), timeout=timeout,
        )
    finally:
        if stdin is not subprocess.DEVNULL:
            stdin.close()


def validate(
    task,
    working_root: Optional[str] = None,
    *,
    original_class=None,
    log_dir: Optional[str] = None,
    build_timeout: float = BUILD_TIMEOUT,
    poc_timeout: float = POC_TIMEOUT,
    tests_timeout: float = TESTS_TIMEOUT,
) -> ValidationResult:
    """Sequential gates: build, PoC re-run, functional tests."""
    root = os.path.abspath(working_root or task.project_root)
    log_dir = log_dir or os.path.join(root, ".sanrepair", "logs")
    env = hermetic_env()

    # Gate 1: rebuild.
    try:
        built = subprocess.run(
            task.build_command, shell=True, cwd=root, env=env,
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, timeout=build_timeout,
        )
    except subprocess.TimeoutExpired:
        return ValidationResult(
            status=TIMEOUT,
            feedback=f"build timed out after {build_timeout:.0f}s",
            build_log_path=_write_log(log_dir, "build.log", "[timed out]"),
        )
    build_log = _write_log(log_dir, "build.log", _merged_output(built))
    if built.returncode != 0:
        return ValidationResult(
            status=COMPILE_FAIL,
            feedback=compile_feedback(_merged_output(built)),
            build_log_path=build_log,
        )
    binary = _rebase(task.target_binary, task.project_root, root)
    if not os.path.isfile(binary):
        return ValidationResult(
            status=COMPILE_FAIL,
            feedback=f"build succeeded but produced no target binary at {binary}",
            build_log_path=build_log,
        )

    # Gate 2: the PoC must no longer trap.
    try:
        poc_proc = run_poc(task, root, timeout=poc_timeout)
    except subprocess.TimeoutExpired:
        return ValidationResult(
            status=TIMEOUT,
            feedback=f"PoC run timed out after {poc_timeout:.0f}s",
            build_log_path=build_log,
            run_log_path=_write_log(log_dir, "run.log", "[poc timed out]"),
        )
    poc_output = _merged_output(poc_proc)
    run_log_text = f"$ {shlex.join(_poc_argv_stdin(task, root)[0])}\n{poc_output}\n"
    sanitizer_hit = any(mark in poc_output for mark in _SANITIZER_MARKS)
    fatal_signal = poc_proc.returncode < 0
    if sanitizer_hit or fatal_signal:
        feedback, _new_class = crash_feedback(poc_output, original_class)
        return ValidationResult(
            status=CRASH_PERSISTS,
            feedback=feedback,
            build_log_path=build_log,
            run_log_path=_write_log(log_dir, "run.log", run_log_text),
        )

    # Gate 3: functional tests.
    try:
        tests = subprocess.run(
            task.test_command, shell=True, cwd=root, env=env,
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, timeout=tests_timeout,
        )
    except subprocess.TimeoutExpired:
        return ValidationResult(
            status=TIMEOUT,
            feedback=f"test suite timed out after {tests_timeout:.0f}s",
            build_log_path=build_log,
            run_log_path=_write_log(log_dir, "run.log", run_log_text + "\n[tests timed out]"),
        )
    tests_output = _merged_output(tests)
    run_log = _write_log(
        log_dir, "run.log", run_log_text + f"\n$ {task.test_command}\n{tests_output}\n"
    )
    if tests.returncode != 0:
        return ValidationResult(
            status=TESTS_FAIL,
            feedback=tests_feedback(tests_output),
            build_log_path=build_log,
            run_log_path=run_log,
        )
    return ValidationResult(
        status=PASS, feedback="", build_log_path=build_log, run_log_path=run_log
    )


def distill_feedback(result: ValidationResult) -> str:
    """Transcript text for a failed validation (mechanical path)."""
    if result.status == PASS:
        raise ValueError("Pass needs no feedback")
    return _cap(f"validation result: {result.status}\n{result.feedback}")
