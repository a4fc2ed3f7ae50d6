"""Class-keyed troubleshooting guidelines and prompt assembly.

Guidelines ship as one JSON manifest per vulnerability class so they can be
edited without touching code. The assembled system prompt is a fixed
scaffold around the guideline text plus the action protocol; the initial
user message carries the crash summary and bounded trace excerpts.
"""

import functools
import json
from dataclasses import dataclass
from importlib import resources
from typing import List, Tuple

from .errors import ManifestError
from .report import SanitizerReport, StackFrame, VulnClass, trapping_frame

DEFAULT_MAX_FRAMES = 12
DEFAULT_CHAR_BUDGET = 16000

# The mechanical rules-of-engagement gate keys off this rule being present.
HYPOTHESIS_RULE_KEYWORD = "hypothesis"


@dataclass(frozen=True)
class Guideline:
    vuln_class: VulnClass
    common_root_causes: Tuple[str, ...]
    investigation_priorities: Tuple[str, ...]
    recommended_commands: Tuple[str, ...]
    rules_of_engagement: Tuple[str, ...]


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    initial_user_message: str
    action_protocol_doc: str


def _data(name: str) -> str:
    return resources.files("sanrepair").joinpath(f"data/{name}").read_text(encoding="utf-8")


@functools.lru_cache(maxsize=1)
def _common_rules() -> Tuple[str, ...]:
    doc = json.loads(_data("guidelines/common_rules.json"))
    rules = tuple(doc["rules_of_engagement"])
    if not any(HYPOTHESIS_RULE_KEYWORD in r for r in rules):
        raise ManifestError("common rules are missing the hypothesis-before-patch rule")
    return rules


@functools.lru_cache(maxsize=1)
def action_protocol() -> str:
    return _data("action_protocol.md")


@functools.lru_cache(maxsize=32)
def guidelines_for(vuln_class: VulnClass) -> Guideline:
    """Total lookup: every class resolves, Unclassified to the generic one."""
    name = "generic" if vuln_class is VulnClass.UNCLASSIFIED else vuln_class.value
    try:
        doc = json.loads(_data(f"guidelines/{name}.json"))
    except FileNotFoundError as exc:
        raise ManifestError(f"no guideline manifest for class {vuln_class.value}") from exc
    return Guideline(
        vuln_class=vuln_class,
        common_root_causes=tuple(doc["common_root_causes"]),
        investigation_priorities=tuple(doc["investigation_priorities"]),
        recommended_commands=tuple(doc["recommended_commands"]),
        rules_of_engagement=_common_rules() + tuple(doc.get("extra_rules", ())),
    )


def _bullets(items) -> str:
    return "\n".join(f"- {item}" for item in items)


def _numbered(items) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, 1))


GUIDELINE_BEGIN = "## Vulnerability-class guidance"
GUIDELINE_END = "## Action protocol"


def render_guideline(guideline: Guideline) -> str:
    return (
        f"{GUIDELINE_BEGIN}: {guideline.vuln_class.value}\n\n"
        "### Common root causes\n"
        f"{_bullets(guideline.common_root_causes)}\n\n"
        "### Investigation priorities, in order\n"
        f"{_numbered(guideline.investigation_priorities)}\n\n"
        "### Recommended commands\n"
        f"{_bullets(guideline.recommended_commands)}\n\n"
        "### Rules of engagement\n"
        f"{_bullets(guideline.rules_of_engagement)}\n"
    )


_SCAFFOLD = (
    "You are an autonomous repair engineer for memory-safety crashes in "
    "native programs. A sanitizer-instrumented build has trapped on a "
    "proof-of-concept input. You drive a debugger, a source viewer, a "
    "sandboxed output summarizer, and a patch validator through the action "
    "protocol; investigate the root cause with evidence, then propose a "
    "minimal patch and refine it on validation feedback.\n\n"
)


def _frame_line(frame: StackFrame) -> str:
    if frame.file is not None:
        where = frame.file if frame.line is None else f"{frame.file}:{frame.line}"
    else:
        where = frame.binary_offset or "?"
    return f"  #{frame.index} {frame.function} at {where}"


def _trace_block(name: str, frames: List[StackFrame], max_frames: int) -> str:
    shown = frames[:max_frames]
    lines = [f"{name} (showing {len(shown)} of {len(frames)} frames):"]
    lines += [_frame_line(f) for f in shown]
    if len(frames) > len(shown):
        lines.append(f"  [... {len(frames) - len(shown)} more frames elided]")
    return "\n".join(lines)


def assemble_prompt(
    task,
    report: SanitizerReport,
    guideline: Guideline,
    *,
    max_frames: int = DEFAULT_MAX_FRAMES,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> PromptBundle:
    """Deterministic prompt bundle for a classified crash.

    `task` supplies project_root, build_command, test_command and poc
    fields. When the bundle exceeds char_budget, trace tails are truncated
    frame by frame; guideline text is never cut.
    """
    protocol = action_protocol()
    system_prompt = (
        _SCAFFOLD
        + render_guideline(guideline)
        + "\n"
        + f"{GUIDELINE_END}\n\n"
        + protocol
    )

    try:
        trap = trapping_frame(report, project_root=getattr(task, "project_root", None))
        trap_line = _frame_line(trap).strip()
    except Exception:
        trap_line = "<no trace available>"

    def render_user(frames_cap: int) -> str:
        blocks = [
            "A sanitizer trapped the following crash.",
            f"Summary: {report.summary_line}",
            f"Classified as: {report.vuln_class.value}",
            f"Trapping frame: {trap_line}",
            _trace_block("Primary stack trace", report.primary_trace, frames_cap),
        ]
        for name, frames in report.auxiliary_traces:
            blocks.append(_trace_block(f'Auxiliary trace "{name}"', frames, frames_cap))
        blocks.append(
            "Task:\n"
            f"  project root: {getattr(task, 'project_root', '?')}\n"
            f"  build command: {getattr(task, 'build_command', '?')}\n"
            f"  test command: {getattr(task, 'test_command', '?')}\n"
            f"  PoC: {getattr(task, 'poc_path', '?')} "
            f"(delivered via {getattr(task, 'poc_mode', '?')})"
        )
        blocks.append("Begin your investigation.")
        return "\n\n".join(blocks)

    cap = max_frames
    user = render_user(cap)
    while len(system_prompt) + len(user) > char_budget and cap > 1:
        cap -= 1
        user = render_user(cap)
    if len(system_prompt) + len(user) > char_budget:
        keep = max(char_budget - len(system_prompt), 0)
        user = user[:keep] + "\n[message truncated]"
    return PromptBundle(
        system_prompt=system_prompt,
        initial_user_message=user,
        action_protocol_doc=protocol,
    )
