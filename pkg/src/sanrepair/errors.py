"""Exception types shared across the harness.

Most of these are recoverable and end up as feedback in the agent
transcript rather than aborting the repair loop.
"""


class SanRepairError(Exception):
    """Base class for all harness errors."""


# --- report parsing ---

class NoErrorHeader(SanRepairError):
    """Input text contains no sanitizer ERROR/SUMMARY header."""


class EmptyTrace(SanRepairError):
    """A report has no primary stack trace to pick a frame from."""


# --- debugger ---

class LaunchFailure(SanRepairError):
    """Debugger or target could not be started."""


class RecordFailure(SanRepairError):
    """Record/replay tool missing or the recording pass failed."""


class RejectedCommand(SanRepairError):
    """Agent-issued debugger command failed validation.

    The reason string is relayed into the transcript; never fatal.
    """

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class SessionDead(SanRepairError):
    """The debugger process is gone; caller may restart the session."""


# --- source navigation ---

class BuildFailed(SanRepairError):
    def __init__(self, status: int, stderr_tail: str):
        super().__init__(f"build exited with status {status}")
        self.status = status
        self.stderr_tail = stderr_tail


class NoSuchFile(SanRepairError):
    """Requested source path does not exist under the project root."""


class PathEscapesRoot(SanRepairError):
    """Requested path resolves outside the project root."""


class ServerUnavailable(SanRepairError):
    """Language server missing or failed; callers fall back to grep."""


# --- LLM backend ---

class BackendError(SanRepairError):
    """Chat backend failed after retries."""


class TranscriptExhausted(SanRepairError):
    """Scripted backend ran out of canned messages."""


class BudgetExhausted(SanRepairError):
    """Iteration or cost cap reached; no further queries allowed."""


# --- action protocol / sandbox ---

class ProtocolError(SanRepairError):
    """Assistant text carried no usable action envelope.

    Non-fatal: the reason is appended to the transcript so the agent can
    self-correct on the next turn.
    """

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ScriptFailed(SanRepairError):
    """Summarization script did not produce usable output."""

    def __init__(self, reason: str, stderr_tail: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.stderr_tail = stderr_tail


class SandboxViolation(ScriptFailed):
    """Script attempted a forbidden operation (network, stray write, spawn)."""


class ScriptTimeout(ScriptFailed):
    """Script exceeded its CPU or wall-clock allowance."""


class NonZeroExit(ScriptFailed):
    """Script exited with a nonzero status."""


# --- patching ---

class UnparseableDiff(SanRepairError):
    """No unified-diff hunk header found in the proposed patch."""


class EmptyTarget(SanRepairError):
    """Hunk has no context or delete lines to anchor on."""


class NoPlausibleLocation(SanRepairError):
    """No window in the file matches the hunk within the cost threshold."""

    def __init__(self, message: str, best_position: int = 0, best_cost: float = 0.0):
        super().__init__(message)
        self.best_position = best_position
        self.best_cost = best_cost


class CorrectionFailed(SanRepairError):
    """A hunk could not be relocated; the whole diff is rejected."""

    def __init__(self, hunk_index: int, reason: str):
        super().__init__(f"hunk {hunk_index}: {reason}")
        self.hunk_index = hunk_index
        self.reason = reason


class ApplyConflict(SanRepairError):
    """Corrected diff no longer matches the file; internal bug."""


# --- cli ---

class ManifestError(SanRepairError):
    """Task manifest or configuration file is invalid."""
