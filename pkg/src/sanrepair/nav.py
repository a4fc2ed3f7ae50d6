"""Source navigation: compile-db capture, bounded source views, symbol lookup.

The compilation database is captured by shimming compiler driver names onto
PATH during one project build: each shim appends an invocation record and
exec's the real compiler, so build outputs are bit-identical to an
unshimmed build. Source views are gutter-numbered and clamped; symbol
resolution prefers a language server and degrades to a plain-text search
with a lower-confidence marker.
"""

import dataclasses
import json
import os
import re
import shlex
import shutil
import stat
import subprocess
import tempfile
from typing import List, Optional, Sequence, Tuple

from .errors import BuildFailed, NoSuchFile, PathEscapesRoot, ServerUnavailable

SNIPPET_CAP = 200
DEFAULT_RADIUS = 30
BUILD_TIMEOUT = 600.0
MAX_SYMBOL_HITS = 40

COMPILER_NAMES = ("cc", "gcc", "clang", "c++", "g++", "clang++")
_SOURCE_SUFFIXES = (".c", ".cc", ".cpp", ".cxx", ".C", ".m", ".mm", ".s", ".S")
_SEARCH_SUFFIXES = (".c", ".h", ".cc", ".hh", ".cpp", ".hpp", ".cxx", ".inc")


@dataclasses.dataclass(frozen=True)
class SourceSnippet:
    path: str  # project-relative
    start_line: int
    end_line: int
    numbered_lines: str  # "<line>\t<text>" per line
    elided: bool

    def __post_init__(self):
        if not (1 <= self.start_line <= self.end_line):
            raise ValueError("snippet range must be 1-based and non-empty")
        if self.end_line - self.start_line + 1 > SNIPPET_CAP:
            raise ValueError(f"snippet exceeds the {SNIPPET_CAP}-line cap")


@dataclasses.dataclass(frozen=True)
class CompilationDb:
    entries: Tuple[dict, ...]  # standard schema: directory, file, arguments
    project_root: str

    def path_for(self) -> str:
        return os.path.join(self.project_root, "compile_commands.json")


@dataclasses.dataclass(frozen=True)
class SymbolHit:
    path: str  # project-relative
    line: int  # 1-based
    kind: str  # definition | reference | text-match (lower confidence)


# --- compile-db capture ---

_SHIM_TEMPLATE = """#!/bin/sh
# Record this compile invocation, then run the real compiler untouched.
rec=$(mktemp "${{SANREPAIR_CC_DIR:?}}/rec.XXXXXXXX") || exit 1
{{
  printf '%s\\n' "$PWD"
  printf '%s\\n' {real_quoted}
  for arg in "$@"; do printf '%s\\n' "$arg"; done
}} > "$rec"
exec {real_quoted} "$@"
"""


def _make_shims(shim_dir: str) -> int:
    """Create wrapper executables for every compiler found on PATH."""
    created = 0
    for name in COMPILER_NAMES:
        real = shutil.which(name)
        if real is None:
            continue
        real = os.path.realpath(real)
        shim_path = os.path.join(shim_dir, name)
        with open(shim_path, "w", encoding="utf-8") as fh:
            fh.write(_SHIM_TEMPLATE.format(real_quoted=shlex.quote(real)))
        os.chmod(shim_path, os.stat(shim_path).st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
        created += 1
    return created


def _records_to_entries(record_dir: str, project_root: str) -> List[dict]:
    root_real = os.path.realpath(project_root)
    entries = []
    for name in os.listdir(record_dir):
        if not name.startswith("rec."):
            continue
        with open(os.path.join(record_dir, name), encoding="utf-8", errors="replace") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 2:
            continue
        cwd, argv = lines[0], lines[1:]
        for arg in argv[1:]:
            if not arg.endswith(_SOURCE_SUFFIXES) or arg.startswith("-"):
                continue
            source = arg if os.path.isabs(arg) else os.path.join(cwd, arg)
            source = os.path.realpath(source)
            # Only sources that live under the project at capture time count.
            if not source.startswith(root_real + os.sep) or not os.path.isfile(source):
                continue
            entries.append({"directory": cwd, "file": source, "arguments": list(argv)})
    entries.sort(key=lambda e: (e["file"], e["directory"], e["arguments"]))
    return entries


def capture_compile_db(project_root, build_command: str) -> CompilationDb:
    """Build once with shimmed compilers; serialize compile_commands.json."""
    project_root = os.path.abspath(project_root)
    with tempfile.TemporaryDirectory(prefix="sanrepair-shim-") as shim_dir, \
            tempfile.TemporaryDirectory(prefix="sanrepair-ccrec-") as record_dir:
        if _make_shims(shim_dir) == 0:
            raise BuildFailed(127, "no compiler drivers found on PATH to wrap")
        env = dict(os.environ)
        env["PATH"] = shim_dir + os.pathsep + env.get("PATH", "")
        env["SANREPAIR_CC_DIR"] = record_dir
        try:
            proc = subprocess.run(
                build_command,
                shell=True,
                cwd=project_root,
                env=env,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                timeout=BUILD_TIMEOUT,
            )
        except subprocess.TimeoutExpired:
            raise BuildFailed(124, f"build timed out after {BUILD_TIMEOUT:.0f}s")
        if proc.returncode != 0:
            tail = proc.stderr.decode("utf-8", errors="replace")[-4096:]
            raise BuildFailed(proc.returncode, tail)
        entries = _records_to_entries(record_dir, project_root)
    db = CompilationDb(entries=tuple(entries), project_root=project_root)
    with open(db.path_for(), "w", encoding="utf-8") as fh:
        json.dump(list(db.entries), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return db


# --- source views ---

def _resolve_under_root(project_root: str, path: str) -> str:
    root_real = os.path.realpath(project_root)
    candidate = path if os.path.isabs(path) else os.path.join(root_real, path)
    resolved = os.path.realpath(candidate)
    if resolved != root_real and not resolved.startswith(root_real + os.sep):
        raise PathEscapesRoot(f"{path!r} resolves outside the project root")
    return resolved


def view_source(
    project_root,
    path: str,
    line: int,
    radius: int = DEFAULT_RADIUS,
    cap: int = SNIPPET_CAP,
) -> SourceSnippet:
    """Lines [line-radius, line+radius], clamped to the file and the cap."""
    cap = min(cap, SNIPPET_CAP)  # the type enforces the hard ceiling
    project_root = os.path.abspath(project_root)
    resolved = _resolve_under_root(project_root, path)
    if not os.path.isfile(resolved):
        raise NoSuchFile(f"no source file at {path!r}")
    with open(resolved, encoding="utf-8", errors="replace") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        lines = [""]
    total = len(lines)
    center = min(max(line, 1), total)
    start = max(center - radius, 1)
    end = min(center + radius, total)
    elided = (start, end) != (line - radius, line + radius)
    if end - start + 1 > cap:
        # Shrink around the requested line, head-weighted like the window.
        start = max(center - cap // 2, 1)
        end = min(start + cap - 1, total)
        start = max(end - cap + 1, 1)
        elided = True
    numbered = "\n".join(f"{n}\t{lines[n - 1]}" for n in range(start, end + 1))
    rel = os.path.relpath(resolved, os.path.realpath(project_root))
    return SourceSnippet(
        path=rel, start_line=start, end_line=end, numbered_lines=numbered, elided=elided
    )


# --- symbol resolution ---

def _iter_search_files(project_root: str):
    for dirpath, dirnames, filenames in os.walk(project_root):
        dirnames[:] = sorted(d for d in dirnames if d not in (".git", ".sanrepair"))
        for name in sorted(filenames):
            if name.endswith(_SEARCH_SUFFIXES):
                yield os.path.join(dirpath, name)


def _grep_symbol(name: str, project_root: str, max_hits: int) -> List[SymbolHit]:
    pattern = re.compile(rf"\b{re.escape(name)}\b")
    hits: List[SymbolHit] = []
    for path in _iter_search_files(project_root):
        rel = os.path.relpath(path, project_root)
        try:
            with open(path, encoding="utf-8", errors="replace") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if pattern.search(line):
                        hits.append(SymbolHit(path=rel, line=lineno, kind="text-match"))
                        if len(hits) >= max_hits:
                            return hits
        except OSError:
            continue
    return hits


def resolve_symbol(
    name: str,
    project_root,
    client=None,
    max_hits: int = MAX_SYMBOL_HITS,
) -> List[SymbolHit]:
    """Definition/reference sites for a symbol name, project-relative.

    Uses the language server when one is supplied and healthy; otherwise a
    plain-text word search whose hits are marked text-match (lower
    confidence). Never raises for an unknown symbol: that is an empty list.
    """
    project_root = os.path.abspath(project_root)
    if client is not None:
        try:
            symbols = [s for s in client.workspace_symbols(name) if s["name"] == name]
            hits: List[SymbolHit] = []
            for sym in symbols:
                rel = os.path.relpath(sym["path"], project_root)
                if rel.startswith(".."):
                    continue
                hits.append(SymbolHit(path=rel, line=sym["line"] + 1, kind="definition"))
            for sym in symbols[:1]:
                try:
                    for ref in client.references(sym["path"], sym["line"], sym["character"]):
                        rel = os.path.relpath(ref["path"], project_root)
                        if rel.startswith(".."):
                            continue
                        hit = SymbolHit(path=rel, line=ref["line"] + 1, kind="reference")
                        if hit not in hits:
                            hits.append(hit)
                except ServerUnavailable:
                    break
            if hits:
                return hits[:max_hits]
            return []  # server answered; the symbol genuinely has no sites
        except ServerUnavailable:
            pass
    return _grep_symbol(name, project_root, max_hits)


def render_hits(name: str, hits: Sequence[SymbolHit]) -> str:
    """Transcript-ready rendering with the confidence marker."""
    if not hits:
        return f"symbol {name!r}: no definitions or references found"
    lines = [f"symbol {name!r}:"]
    if all(h.kind == "text-match" for h in hits):
        lines.append("(plain-text matches; no language server available, lower confidence)")
    for hit in hits:
        lines.append(f"  {hit.kind:<10} {hit.path}:{hit.line}")
    return "\n".join(lines)
