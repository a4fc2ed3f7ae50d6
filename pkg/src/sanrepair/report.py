"""Sanitizer report parsing and crash classification.

Turns raw ASan/LSan/UBSan/MSan console output into a structured crash
signature: the vulnerability class, the fault address, the primary stack
trace and any auxiliary traces (allocation/free sites, leak origins).
Everything here is a pure function over immutable inputs.
"""

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import PurePosixPath
from typing import List, Optional, Tuple, Union

from .errors import EmptyTrace, NoErrorHeader


class VulnClass(Enum):
    HEAP_BUFFER_OVERFLOW = "heap-buffer-overflow"
    STACK_BUFFER_OVERFLOW = "stack-buffer-overflow"
    GLOBAL_BUFFER_OVERFLOW = "global-buffer-overflow"
    USE_AFTER_FREE = "use-after-free"
    DOUBLE_FREE = "double-free"
    NULL_DEREFERENCE = "null-dereference"
    MEMORY_LEAK = "memory-leak"
    USE_OF_UNINITIALIZED = "use-of-uninitialized"
    INTEGER_OVERFLOW_UB = "integer-overflow-ub"
    SEGV = "segv"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class StackFrame:
    """One sanitizer stack frame.

    Unsymbolized frames keep only binary_offset; they never abort a parse.
    """

    index: int
    function: str = "<unknown>"
    file: Optional[str] = None
    line: Optional[int] = None
    column: Optional[int] = None
    binary_offset: Optional[str] = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        if self.function == "<unknown>" and self.binary_offset is None:
            raise ValueError("frame needs a symbol or a module+offset")
        if self.line is not None and self.file is None:
            raise ValueError("frame line without a file")

    def location(self) -> str:
        if self.file is not None:
            loc = self.file if self.line is None else f"{self.file}:{self.line}"
        else:
            loc = self.binary_offset or "?"
        return f"{self.function} {loc}"


@dataclass(frozen=True)
class SanitizerReport:
    raw_text: str
    tool: str  # address | leak | undefined-behavior | memory
    vuln_class: VulnClass
    fault_address: Optional[str]
    primary_trace: List[StackFrame]
    auxiliary_traces: List[Tuple[str, List[StackFrame]]]
    summary_line: str

    def auxiliary(self, name: str) -> Optional[List[StackFrame]]:
        for key, frames in self.auxiliary_traces:
            if key == name:
                return frames
        return None


_HEADER_RE = re.compile(r"\b(ERROR|WARNING|SUMMARY):\s+([A-Za-z]+)Sanitizer:?\s*(.*)")
_ADDRESS_RE = re.compile(r"\bon (?:unknown )?(?:address )?(0x[0-9a-fA-F]+)")

# Frame grammar: "#<n> 0x<addr> in <func> <file>:<line>[:<col>]" with
# tolerant fallbacks for missing symbols or missing source locations.
_FRAME_HEAD_RE = re.compile(r"^\s*#(\d+)\s+0x[0-9a-fA-F]+\s+(.*?)\s*$")
_LOCATION_RE = re.compile(r"\s(\S+?):(\d+)(?::(\d+))?$")
_MODULE_RE = re.compile(r"^\((.+\+0x[0-9a-fA-F]+)\)$")
_FUNC_MODULE_RE = re.compile(r"^(.*?)\s+\((.+\+0x[0-9a-fA-F]+)\)$")
_BUILDID_RE = re.compile(r"\s*\(BuildId: [0-9a-fA-F]+\)\s*$")

# Auxiliary-trace section headers, most specific first.
_SECTION_PATTERNS = [
    (re.compile(r"previously allocated by thread", re.I), "previously-allocated-by"),
    (re.compile(r"allocated by thread", re.I), "allocated-by"),
    (re.compile(r"freed by thread", re.I), "freed-by"),
    (re.compile(r"^\s*Direct leak of", re.I), "direct-leak"),
    (re.compile(r"^\s*Indirect leak of", re.I), "indirect-leak"),
    (re.compile(r"Uninitialized value was created", re.I), "origin"),
    (re.compile(r"Memory was marked as uninitialized", re.I), "origin"),
]
_GENERIC_SECTION_RE = re.compile(r"(here|from):\s*$")

_TOOL_NAMES = {
    "Address": "address",
    "Leak": "leak",
    "UndefinedBehavior": "undefined-behavior",
    "Memory": "memory",
}


def _load_keyword_table() -> List[Tuple[str, VulnClass]]:
    raw = resources.files("sanrepair").joinpath("data/classify_keywords.json").read_text()
    doc = json.loads(raw)
    table = []
    for entry in doc["keywords"]:
        table.append((entry["pattern"], VulnClass(entry["class"])))
    return table


_KEYWORD_TABLE = _load_keyword_table()


def keyword_table() -> List[Tuple[str, VulnClass]]:
    """The classification table (pattern, class), as shipped."""
    return list(_KEYWORD_TABLE)


def classify(header_line: str) -> VulnClass:
    """Map a sanitizer error/summary line to a vulnerability class.

    Longest matching keyword wins, so "heap-use-after-free" beats the
    generic "use-after-free" and a zero SEGV address beats plain SEGV.
    Total: anything unmatched is Unclassified.
    """
    haystack = header_line.lower()
    best: Optional[VulnClass] = None
    best_len = 0
    for pattern, vuln_class in _KEYWORD_TABLE:
        if len(pattern) > best_len and pattern.lower() in haystack:
            best = vuln_class
            best_len = len(pattern)
    return best if best is not None else VulnClass.UNCLASSIFIED


def _parse_frame(line: str) -> Optional[StackFrame]:
    m = _FRAME_HEAD_RE.match(line)
    if m is None:
        return None
    index = int(m.group(1))
    rest = _BUILDID_RE.sub("", m.group(2)).rstrip()

    if rest.startswith("in "):
        body = rest[3:].strip()
        loc = _LOCATION_RE.search(" " + body)
        if loc is not None:
            func = body[: loc.start() - 1].strip() or "<unknown>"
            try:
                return StackFrame(
                    index=index,
                    function=func,
                    file=loc.group(1),
                    line=int(loc.group(2)),
                    column=int(loc.group(3)) if loc.group(3) else None,
                )
            except ValueError:
                return None
        fm = _FUNC_MODULE_RE.match(body)
        if fm is not None:
            return StackFrame(index=index, function=fm.group(1).strip() or "<unknown>",
                              binary_offset=fm.group(2))
        if body:
            return StackFrame(index=index, function=body)
        return None

    mm = _MODULE_RE.match(rest)
    if mm is not None:
        return StackFrame(index=index, binary_offset=mm.group(1))
    return None


def _normalize_path(path: str, project_root: Optional[str]) -> str:
    path = re.sub(r"^\./", "", path)
    if project_root:
        root = project_root.rstrip("/") + "/"
        if path.startswith(root):
            return path[len(root):]
    return path


def _relocate(frame: StackFrame, project_root: Optional[str]) -> StackFrame:
    if frame.file is None or project_root is None:
        return frame
    new_file = _normalize_path(frame.file, project_root)
    if new_file == frame.file:
        return frame
    return StackFrame(index=frame.index, function=frame.function, file=new_file,
                      line=frame.line, column=frame.column, binary_offset=frame.binary_offset)


def _section_name(line: str) -> Optional[str]:
    for pattern, name in _SECTION_PATTERNS:
        if pattern.search(line):
            return name
    if _GENERIC_SECTION_RE.search(line) and not _FRAME_HEAD_RE.match(line):
        slug = re.sub(r"[^a-z0-9]+", "-", line.strip().lower()).strip("-")
        return slug or "section"
    return None


def parse_report(text: Union[str, bytes], project_root: Optional[str] = None) -> SanitizerReport:
    """Parse raw sanitizer output into a structured report.

    Accepts bytes (invalid UTF-8 replaced, never rejected). Raises
    NoErrorHeader when the input carries no "ERROR:/SUMMARY: <Tool>Sanitizer"
    line, which signals the input is not a sanitizer report at all.

    When project_root is given, source paths under it are rewritten
    project-relative so they make stable navigation keys.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")

    lines = text.splitlines()
    error_line = None
    summary_line_fallback = None
    tool = None
    for line in lines:
        m = _HEADER_RE.search(line)
        if m is None:
            continue
        if m.group(1) in ("ERROR", "WARNING") and error_line is None:
            error_line = line.strip()
            tool = _TOOL_NAMES.get(m.group(2), m.group(2).lower())
        elif m.group(1) == "SUMMARY" and summary_line_fallback is None:
            summary_line_fallback = line.strip()
            if tool is None:
                tool = _TOOL_NAMES.get(m.group(2), m.group(2).lower())
    header = error_line or summary_line_fallback
    if header is None or tool is None:
        raise NoErrorHeader("no 'ERROR:/SUMMARY: <Tool>Sanitizer' line found")

    addr_match = _ADDRESS_RE.search(header) or _ADDRESS_RE.search(text)
    fault_address = addr_match.group(1).lower() if addr_match else None
    vuln_class = classify(header)

    # Collect traces: frames accumulate into the section opened by the most
    # recent header line; a non-ascending frame index restarts a section.
    sections: List[Tuple[Optional[str], List[StackFrame]]] = []
    current_name: Optional[str] = None
    current: List[StackFrame] = []
    in_section = False

    def flush():
        nonlocal current, current_name, in_section
        if current:
            sections.append((current_name, current))
        current = []
        current_name = None
        in_section = False

    for line in lines:
        name = _section_name(line)
        if name is not None:
            flush()
            current_name = name
            in_section = True
            continue
        frame = _parse_frame(line)
        if frame is None:
            if current:
                flush()
            elif not in_section and current_name is None:
                pass
            continue
        frame = _relocate(frame, project_root)
        if current and frame.index <= current[-1].index:
            flush()
        current.append(frame)
    flush()

    primary: List[StackFrame] = []
    auxiliary: List[Tuple[str, List[StackFrame]]] = []
    anon_count = 0
    for name, frames in sections:
        if name is None:
            anon_count += 1
            if not primary:
                primary = frames
            else:
                auxiliary.append((f"trace-{anon_count}", frames))
        else:
            auxiliary.append((name, frames))
    if not primary and auxiliary:
        # Leak reports carry no anonymous trace; promote the first section.
        primary = auxiliary[0][1]
        auxiliary = auxiliary[1:]

    return SanitizerReport(
        raw_text=text,
        tool=tool,
        vuln_class=vuln_class,
        fault_address=fault_address,
        primary_trace=primary,
        auxiliary_traces=auxiliary,
        summary_line=header,
    )


# Frames owned by the sanitizer runtime or libc, never a repair target.
_RUNTIME_FUNC_RE = re.compile(
    r"^(__(interceptor|asan|lsan|msan|ubsan|sanitizer)|__libc_start|_start$|operator new|operator delete)"
)
_RUNTIME_FILE_RE = re.compile(
    r"(libsanitizer|sanitizer_common|asan_|lsan_|msan_|ubsan_|/sysdeps/|/csu/|libc-start|/glibc)"
)


def _is_runtime_frame(frame: StackFrame) -> bool:
    if _RUNTIME_FUNC_RE.match(frame.function):
        return True
    if frame.file is not None and _RUNTIME_FILE_RE.search(frame.file):
        return True
    return False


def trapping_frame(report: SanitizerReport, project_root: Optional[str] = None) -> StackFrame:
    """The innermost project-owned frame of the primary trace.

    Sanitizer-runtime and libc frames are skipped; when project_root is
    given, absolute paths outside it are skipped too. Falls back to the
    first frame when nothing qualifies.
    """
    if not report.primary_trace:
        raise EmptyTrace("report has no primary trace")
    for frame in report.primary_trace:
        if frame.file is None:
            continue
        if _is_runtime_frame(frame):
            continue
        if project_root is not None:
            p = PurePosixPath(frame.file)
            if p.is_absolute() and not str(p).startswith(project_root.rstrip("/") + "/"):
                continue
        return frame
    return report.primary_trace[0]
