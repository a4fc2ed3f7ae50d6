"""Repair orchestrator: the query -> act -> distill -> validate control loop.

One task is one single-threaded loop owning a chat backend, a debugger
session, a context transcript, and per-attempt working copies of the
project. Patch envelopes are gated behind a stated hypothesis plus at
least one piece of dynamic or source evidence; every tool failure is
converted into transcript feedback rather than raised. The loop ends on
a validated patch, budget exhaustion, an explicit conclude action, or a
scripted backend running dry.
"""

import dataclasses
import hashlib
import json
import os
import shutil
import tempfile
from decimal import Decimal
from typing import Callable, Optional, Tuple

from . import nav, patch
from .context import ActionEnvelope, AgentContext, distill, parse_action
from .debugger import execute, init_session, restart_session, run_to_trap, validate_command
from .errors import (
    BackendError,
    BudgetExhausted,
    LaunchFailure,
    ManifestError,
    NoSuchFile,
    PathEscapesRoot,
    ProtocolError,
    RecordFailure,
    RejectedCommand,
    SanRepairError,
    SessionDead,
    TranscriptExhausted,
)
from .oracle import Budget, ChatTurn, has_budget
from .playbook import assemble_prompt, guidelines_for
from .report import parse_report
from .validate import PASS, distill_feedback, validate

RESOLVED = "Resolved"
BUDGET_EXHAUSTED = "BudgetExhausted"
GAVE_UP = "GaveUp"
IRREPRODUCIBLE = "Irreproducible"

POC_MODES = ("stdin", "argv", "file-arg")

HYPOTHESIS_GATE_FEEDBACK = (
    "patch rejected by the rules of engagement: before proposing a patch you "
    "must (1) state a concrete hypothesis regarding the root cause via a "
    "hypothesis action and (2) gather at least one piece of evidence with a "
    "debug or view_source action. Investigate first, then patch."
)


@dataclasses.dataclass
class RepairTask:
    """Everything needed to reproduce, investigate, and validate one crash."""

    project_root: str
    build_command: str
    test_command: str
    poc_path: str
    poc_mode: str
    report_path: str
    target_binary: str

    @classmethod
    def from_manifest(cls, manifest_path: str) -> "RepairTask":
        """Load a JSON task manifest, resolving paths against its directory."""
        try:
            with open(manifest_path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ManifestError(f"cannot read task manifest: {exc}") from exc
        except ValueError as exc:
            raise ManifestError(f"task manifest is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ManifestError("task manifest must be a JSON object")
        base = os.path.dirname(os.path.abspath(manifest_path))

        def need(field: str):
            if field not in doc:
                raise ManifestError(f"task manifest missing required field '{field}'")
            return doc[field]

        def resolve(path: str) -> str:
            return path if os.path.isabs(path) else os.path.join(base, path)

        poc = need("poc")
        if not isinstance(poc, dict) or "path" not in poc or "mode" not in poc:
            raise ManifestError("field 'poc' must be an object with 'path' and 'mode'")
        if poc["mode"] not in POC_MODES:
            raise ManifestError(
                f"field 'poc.mode' must be one of {POC_MODES}, got {poc['mode']!r}"
            )
        project_root = resolve(need("project_root"))
        target = need("target_binary")
        task = cls(
            project_root=project_root,
            build_command=need("build_command"),
            test_command=need("test_command"),
            poc_path=resolve(poc["path"]),
            poc_mode=poc["mode"],
            report_path=resolve(need("report_path")),
            target_binary=target if os.path.isabs(target) else os.path.join(project_root, target),
        )
        if not os.path.isdir(task.project_root):
            raise ManifestError(f"field 'project_root' is not a directory: {task.project_root}")
        if not os.path.isfile(task.poc_path):
            raise ManifestError(f"field 'poc.path' does not exist: {task.poc_path}")
        if not os.path.isfile(task.report_path):
            raise ManifestError(f"field 'report_path' does not exist: {task.report_path}")
        return task


@dataclasses.dataclass(frozen=True)
class Outcome:
    status: str
    final_patch: Optional[patch.UnifiedDiff]
    iterations: int
    cost_usd: Decimal
    transcript_path: Optional[str] = None

    def __post_init__(self):
        if self.status == RESOLVED and self.final_patch is None:
            raise ValueError("Resolved requires a final patch")


class _Archive:
    """Line-delimited transcript archive; deterministic, no wall-clock data."""

    def __init__(self, path: Optional[str]):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def record(self, event: str, **fields) -> None:
        if self._fh is None:
            return
        doc = {"event": event}
        for key, value in fields.items():
            doc[key] = str(value) if isinstance(value, Decimal) else value
        self._fh.write(json.dumps(doc, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8", "replace")).hexdigest()[:12]


def _cfg(config, name, default):
    value = getattr(config, name, default)
    return default if value is None else value


def render_snippet(snippet: nav.SourceSnippet) -> str:
    header = f"{snippet.path}:{snippet.start_line}-{snippet.end_line}"
    text = f"{header}\n{snippet.numbered_lines}"
    if snippet.elided:
        text += "\n[window clipped at file or size bounds]"
    return text


@dataclasses.dataclass
class DispatchResult:
    """What a non-terminal action changed: raw-output memory and session."""

    last_raw: Optional[str]
    session: object


def dispatch(
    envelope: ActionEnvelope,
    session,
    ctx: AgentContext,
    task: RepairTask,
    *,
    passthrough=frozenset(),
    command_timeout: float = 30.0,
    inline_cap: Optional[int] = None,
    last_raw: Optional[str] = None,
    reopen: Optional[Callable[[object], object]] = None,
    archive: Optional[_Archive] = None,
) -> DispatchResult:
    """Run one investigation action and append its transcript additions.

    Handles view_source, debug, script, and hypothesis. Patch and conclude
    are terminal-stage actions owned by run_repair. Debug command batches
    are fail-fast: the first rejected command stops the batch with the
    rejection reason appended.
    """
    kw = {"inline_cap": inline_cap} if inline_cap else {}

    if envelope.kind == "hypothesis":
        ctx.state_hypothesis(envelope.payload["text"])
        ctx.append_turn("user", "hypothesis recorded; proceed with the investigation.")
        return DispatchResult(last_raw, session)

    if envelope.kind == "view_source":
        payload = envelope.payload
        try:
            snippet = nav.view_source(
                task.project_root, payload["path"], payload["line"],
                radius=payload.get("radius", nav.DEFAULT_RADIUS),
            )
        except (NoSuchFile, PathEscapesRoot) as exc:
            ctx.append_turn("user", f"view_source failed: {exc}")
            return DispatchResult(last_raw, session)
        rendered = render_snippet(snippet)
        ctx.append_turn("tool", rendered)
        ctx.record_evidence()
        if archive:
            archive.record("tool_output", action="view_source",
                           digest=_digest(rendered), bytes=len(rendered))
        return DispatchResult(rendered, session)

    if envelope.kind == "debug":
        if session is None:
            ctx.append_turn("user", "no debugger session is available for this task.")
            return DispatchResult(last_raw, session)
        for text in envelope.payload["commands"]:
            try:
                cmd = validate_command(
                    text, capabilities=session.capabilities, passthrough=passthrough
                )
            except RejectedCommand as exc:
                ctx.append_turn("user", f"debugger command rejected: {exc}")
                break
            try:
                out = execute(session, cmd, timeout=command_timeout)
            except SessionDead as exc:
                note = f"debugger session died on {text!r}: {exc}"
                if reopen is not None:
                    try:
                        session = reopen(session)
                        note += " The session was restarted; re-run setup commands."
                    except (LaunchFailure, RecordFailure) as rexc:
                        note += f" Restart failed: {rexc}"
                ctx.append_turn("user", note)
                break
            distill(ctx, out.raw, **kw)
            ctx.record_evidence()
            last_raw = out.raw
            if archive:
                archive.record("tool_output", action="debug", command=text,
                               digest=_digest(out.raw), bytes=out.byte_count,
                               stop_reason=out.stop_reason)
        return DispatchResult(last_raw, session)

    if envelope.kind == "script":
        if last_raw is None:
            ctx.append_turn("user", "no raw output to summarize; run a tool first.")
            return DispatchResult(last_raw, session)
        distill(ctx, last_raw, script=envelope.payload["program"], **kw)
        if archive:
            archive.record("tool_output", action="script", digest=_digest(last_raw))
        return DispatchResult(last_raw, session)

    raise ValueError(f"dispatch cannot handle action kind {envelope.kind!r}")


def _preflight(task, config, archive) -> Tuple[Optional[object], Optional[Callable], bool]:
    """Reproduce the crash once; returns (session, reopen, reproduced)."""
    backend = _cfg(config, "debugger_backend", "forward")
    kwargs = {
        "passthrough": frozenset(_cfg(config, "passthrough", ())),
        "output_cap": _cfg(config, "debugger_output_cap", 64 * 1024),
        "fake_script": getattr(config, "fake_script", None),
        "recording_root": getattr(config, "recording_root", None),
    }

    restart_kwargs = {
        key: kwargs[key]
        for key in ("fake_script", "recording_root")
        if kwargs.get(key) is not None
    }

    def reopen(dead_session):
        fresh = restart_session(dead_session, task, **restart_kwargs)
        run_to_trap(fresh, timeout=_cfg(config, "run_timeout", 120.0))
        return fresh

    try:
        session = init_session(task, backend=backend, **kwargs)
        out = run_to_trap(session, timeout=_cfg(config, "run_timeout", 120.0))
    except (LaunchFailure, RecordFailure) as exc:
        archive.record("preflight", error=str(exc))
        return None, None, False
    archive.record("preflight", stop_reason=out.stop_reason,
                   digest=_digest(out.raw), bytes=out.byte_count)
    reproduced = out.stop_reason in ("sanitizer_trap", "signal")
    return session, reopen, reproduced


def run_repair(task: RepairTask, config) -> Outcome:
    """Drive one repair task to an Outcome.

    `config` is duck-typed: backend (chat backend), budget (Budget),
    output_dir, debugger_backend, fake_script, passthrough, timeouts,
    max_frames, inline_cap, feedback_distillation. Missing attributes
    fall back to library defaults.
    """
    budget: Budget = getattr(config, "budget", None) or Budget()
    backend = config.backend
    out_dir = getattr(config, "output_dir", None) or tempfile.mkdtemp(prefix="sanrepair-out-")
    os.makedirs(out_dir, exist_ok=True)
    archive = _Archive(os.path.join(out_dir, "transcript.jsonl"))
    archive.record("task", build_command=task.build_command,
                   test_command=task.test_command, poc_mode=task.poc_mode)

    session = None
    try:
        session, reopen, reproduced = _preflight(task, config, archive)
        if not reproduced:
            archive.record("outcome", status=IRREPRODUCIBLE)
            return Outcome(IRREPRODUCIBLE, None, budget.iterations_used,
                           budget.cost_used_usd, archive.path)

        with open(task.report_path, encoding="utf-8", errors="replace") as fh:
            report = parse_report(fh.read(), project_root=task.project_root)
        bundle = assemble_prompt(
            task, report, guidelines_for(report.vuln_class),
            max_frames=_cfg(config, "max_frames", 12),
        )
        ctx = AgentContext()
        ctx.append_turn("system", bundle.system_prompt)
        ctx.append_turn("user", bundle.initial_user_message)
        archive.record("prompt", vuln_class=report.vuln_class.value,
                       system_digest=_digest(bundle.system_prompt),
                       user_digest=_digest(bundle.initial_user_message))

        last_raw: Optional[str] = None
        attempt = 0
        status = BUDGET_EXHAUSTED
        final_patch = None

        while has_budget(budget):
            try:
                reply, usage = backend.query(ctx.history(), budget)
            except BudgetExhausted:
                break
            except TranscriptExhausted:
                archive.record("note", text="scripted transcript exhausted")
                status = GAVE_UP
                break
            except BackendError as exc:
                archive.record("note", text=f"backend failed: {exc}")
                status = GAVE_UP
                break
            ctx.append_turn("assistant", reply)
            archive.record("query", iteration=budget.iterations_used,
                           cost_usd=budget.cost_used_usd, response=reply,
                           completion_tokens=usage.completion_tokens)

            try:
                envelope = parse_action(reply)
            except ProtocolError as exc:
                ctx.append_turn("user", f"action protocol error: {exc.reason}. "
                                        "Reply with exactly one action block.")
                archive.record("action", kind="<protocol-error>", reason=exc.reason)
                continue
            archive.record("action", kind=envelope.kind, payload=envelope.payload)
            if envelope.warnings:
                ctx.append_turn("user", "protocol warnings: " + " ".join(envelope.warnings))

            if envelope.kind == "conclude":
                archive.record("note", text=f"agent concluded: {envelope.payload['rationale']}")
                status = GAVE_UP
                break

            if envelope.kind == "patch":
                if not (ctx.hypothesis_stated and ctx.debug_evidence_count >= 1):
                    ctx.append_turn("user", HYPOTHESIS_GATE_FEEDBACK)
                    archive.record("note", text="patch rejected: hypothesis gate")
                    continue
                attempt += 1
                done, final_patch = _attempt_patch(
                    task, config, budget, ctx, report, envelope, attempt, out_dir, archive
                )
                if done:
                    status = RESOLVED
                    break
                continue

            result = dispatch(
                envelope, session, ctx, task,
                passthrough=frozenset(_cfg(config, "passthrough", ())),
                command_timeout=_cfg(config, "command_timeout", 30.0),
                inline_cap=getattr(config, "inline_cap", None),
                last_raw=last_raw, reopen=reopen, archive=archive,
            )
            last_raw, session = result.last_raw, result.session

        archive.record("outcome", status=status,
                       iterations=budget.iterations_used, cost_usd=budget.cost_used_usd)
        return Outcome(status, final_patch, budget.iterations_used,
                       budget.cost_used_usd, archive.path)
    finally:
        if session is not None:
            session.close()
        archive.close()


def _attempt_patch(task, config, budget, ctx, report, envelope, attempt, out_dir, archive):
    """Stage 3: correct, apply to a fresh working copy, validate, feed back."""
    try:
        parsed = patch.parse_diff(envelope.payload["diff"])
        corrected = patch.correct_diff(parsed, task.project_root)
    except SanRepairError as exc:
        feedback = f"patch could not be applied: {exc}"
        ctx.append_turn("user", feedback)
        archive.record("validation", attempt=attempt, status="NotApplied", feedback=feedback)
        return False, None

    working = os.path.join(out_dir, f"attempt-{attempt}")
    shutil.copytree(
        task.project_root, working, symlinks=True,
        ignore=shutil.ignore_patterns(".git", ".sanrepair"),
    )
    patch.apply_patch(working, corrected)
    result = validate(
        task, working_root=working,
        original_class=report.vuln_class,
        log_dir=os.path.join(out_dir, f"attempt-{attempt}-logs"),
        build_timeout=_cfg(config, "build_timeout", 600.0),
        poc_timeout=_cfg(config, "poc_timeout", 120.0),
        tests_timeout=_cfg(config, "tests_timeout", 600.0),
    )
    archive.record("validation", attempt=attempt, status=result.status,
                   feedback=result.feedback,
                   root_cause=envelope.payload.get("root_cause", ""))
    if result.status == PASS:
        with open(os.path.join(out_dir, "fix.diff"), "w", encoding="utf-8") as fh:
            fh.write(patch.render(corrected))
        return True, corrected
    ctx.append_turn("user", _failure_feedback(config, budget, result))
    return False, None


def _failure_feedback(config, budget, result) -> str:
    """Mechanical distillation by default; optional LLM distillation."""
    text = distill_feedback(result)
    if getattr(config, "feedback_distillation", "mechanical") != "llm":
        return text
    try:
        prompt = ("Summarize the following validation failure in at most 10 "
                  "lines, keeping identifiers and line numbers:\n\n" + text)
        summary, _usage = config.backend.query([ChatTurn("user", prompt)], budget)
        return summary
    except SanRepairError:
        return text
