"""Sandboxed execution of agent-emitted summarization scripts.

Scripts are untrusted python3 programs whose only legitimate job is to read
a large tool output from stdin and print a short summary. The sandbox
denies network access, process spawning, and writes outside a private
scratch directory via an audit hook, and bounds CPU time, address space,
program size, and stdout volume.
"""

import os
import resource
import shutil
import signal
import subprocess
import sys
import tempfile

from .errors import NonZeroExit, SandboxViolation, ScriptTimeout

SCRIPT_CAP = 8 * 1024
STDOUT_CAP = 4 * 1024
CPU_SECONDS = 5
MEMORY_BYTES = 256 * 1024 * 1024
WALL_SECONDS = 10.0
_STDERR_TAIL = 2048

_VIOLATION_MARK = "SANDBOX-VIOLATION"

# Runs before the script inside the child: installs an irremovable audit
# hook, then executes the script file with stdin left untouched. Best-effort
# containment for buggy agent-emitted code, not a boundary against a
# determined adversary (the rlimits and wall clock are the hard stops).
_PRELUDE = r"""
import os
import sys
scratch = sys.argv[1]
script_path = sys.argv[2]
denied_socket = {
    "socket.__new__", "socket.bind", "socket.connect",
    "socket.getaddrinfo", "socket.gethostbyname", "socket.sendto",
}
denied_spawn = {
    "subprocess.Popen", "os.system", "os.exec", "os.posix_spawn",
    "os.fork", "os.forkpty", "os.spawn", "ctypes.dlopen",
}
denied_always = {"os.symlink", "os.link"}
scoped_mutations = {"os.remove", "os.rename", "os.rmdir", "os.mkdir", "os.chmod", "os.truncate"}
WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC
def _inside_scratch(path):
    if isinstance(path, int):
        return True
    p = os.fsdecode(path)
    if not os.path.isabs(p):
        p = os.path.join(os.getcwd(), p)
    p = os.path.normpath(p)
    return p == scratch or p.startswith(scratch + os.sep)
def _gate(event, args):
    if event in denied_socket:
        raise RuntimeError("SANDBOX-VIOLATION network access denied: " + event)
    if event in denied_spawn:
        raise RuntimeError("SANDBOX-VIOLATION process spawn denied: " + event)
    if event in denied_always:
        raise RuntimeError("SANDBOX-VIOLATION filesystem linking denied: " + event)
    if event in scoped_mutations and args and not _inside_scratch(args[0]):
        raise RuntimeError("SANDBOX-VIOLATION mutation outside scratch denied: " + event)
    if event == "open":
        path, mode, flags = args[0], args[1], args[2]
        writing = bool(flags & WRITE_FLAGS) if mode is None else any(f in mode for f in "wax+")
        if writing and not _inside_scratch(path):
            raise RuntimeError("SANDBOX-VIOLATION write outside scratch denied")
with open(script_path, encoding="utf-8") as fh:
    source = fh.read()
sys.addaudithook(_gate)
exec(compile(source, "<summary-script>", "exec"), {"__name__": "__main__"})
"""


def _child_limits():
    os.setsid()
    resource.setrlimit(resource.RLIMIT_CPU, (CPU_SECONDS, CPU_SECONDS))
    resource.setrlimit(resource.RLIMIT_AS, (MEMORY_BYTES, MEMORY_BYTES))


def run_summary_script(
    script_text: str,
    stdin_data: bytes,
    *,
    wall_seconds: float = WALL_SECONDS,
) -> str:
    """Run an untrusted summarizer; return its stdout capped at 4 KiB.

    Raises SandboxViolation, ScriptTimeout, or NonZeroExit (all ScriptFailed
    subclasses) so callers can fall back to mechanical truncation.
    """
    if len(script_text.encode("utf-8", errors="replace")) > SCRIPT_CAP:
        raise NonZeroExit(f"script exceeds {SCRIPT_CAP} byte cap")
    if isinstance(stdin_data, str):
        stdin_data = stdin_data.encode("utf-8", errors="replace")
    scratch = tempfile.mkdtemp(prefix="sanrepair-sbx-")
    try:
        script_path = os.path.join(scratch, "summary_script.py")
        with open(script_path, "w", encoding="utf-8") as fh:
            fh.write(script_text)
        proc = subprocess.Popen(
            [sys.executable, "-I", "-c", _PRELUDE, scratch, script_path],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=scratch,
            preexec_fn=_child_limits,
        )
        try:
            stdout, stderr = proc.communicate(stdin_data, timeout=wall_seconds)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.wait()
            raise ScriptTimeout(f"script exceeded {wall_seconds:.0f}s wall clock")
        tail = stderr.decode("utf-8", errors="replace")[-_STDERR_TAIL:]
        if proc.returncode != 0:
            if _VIOLATION_MARK in tail:
                raise SandboxViolation("script attempted a forbidden operation", tail)
            if proc.returncode in (-signal.SIGKILL, -signal.SIGXCPU):
                raise ScriptTimeout(
                    f"script killed by cpu limit, status {proc.returncode}", tail
                )
            raise NonZeroExit(f"script exited with status {proc.returncode}", tail)
        text = stdout.decode("utf-8", errors="replace")
        if len(text) > STDOUT_CAP:
            text = text[:STDOUT_CAP] + f"\n[stdout truncated at {STDOUT_CAP} bytes]"
        return text
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
