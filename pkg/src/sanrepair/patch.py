"""Unified-diff parsing, deterministic correction, and strict application.

LLM-proposed diffs routinely carry wrong line numbers, paraphrased context
lines, and broken hunk counts. This module parses such diffs tolerantly,
relocates every hunk by sliding its reconstructed target text across the
real file under a per-line edit-distance cost, rewrites context and delete
lines to the exact file contents, recomputes all headers, and only then
applies the result strictly.
"""

import functools
import os
import re
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .errors import (
    ApplyConflict,
    CorrectionFailed,
    EmptyTarget,
    NoPlausibleLocation,
    UnparseableDiff,
)

# Reject a window when its average per-line cost exceeds this.
DEFAULT_TAU = 0.35

CONTEXT = "context"
DELETE = "delete"
ADD = "add"

# Lines of synthesized context on each side of a pure-insertion hunk.
_INSERT_CONTEXT = 2


@dataclass
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    lines: List[Tuple[str, str]] = field(default_factory=list)

    def counts(self) -> Tuple[int, int]:
        old = sum(1 for tag, _ in self.lines if tag in (CONTEXT, DELETE))
        new = sum(1 for tag, _ in self.lines if tag in (CONTEXT, ADD))
        return old, new


@dataclass
class FilePatch:
    path: str
    hunks: List[Hunk] = field(default_factory=list)


@dataclass
class UnifiedDiff:
    file_patches: List[FilePatch] = field(default_factory=list)
    tolerances: List[str] = field(default_factory=list)


@dataclass
class PatchedProject:
    root: str
    touched_files: List[str]


_HUNK_RE = re.compile(r"^@@\s*-(\d+)(?:,(\d+))?\s+\+(\d+)(?:,(\d+))?\s*(@@.*)?$")
_GIT_RE = re.compile(r"^diff --git a/(\S+) b/(\S+)")
_META_RE = re.compile(r"^(index |new file mode|deleted file mode|old mode|new mode|similarity )")


def _strip_prefix(path: str) -> str:
    path = path.split("\t")[0].strip()
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def _is_file_header(lines: Sequence[str], i: int) -> bool:
    if not lines[i].startswith("--- "):
        return False
    for j in range(i + 1, min(i + 3, len(lines))):
        if lines[j].startswith("+++ "):
            return True
    return False


def parse_diff(text: str) -> UnifiedDiff:
    """Tolerantly parse unified-diff text.

    Accepts wrong hunk counts, headers with or without a/ b/ prefixes, and
    blank body lines whose leading space was stripped; every tolerance that
    fired is recorded on the result. Raises UnparseableDiff when no hunk
    header is present or no target path can be determined.
    """
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()

    diff = UnifiedDiff()
    tolerances: List[str] = []
    current_file: Optional[FilePatch] = None
    current_hunk: Optional[Hunk] = None
    pending_path: Optional[str] = None

    def note(t: str) -> None:
        if t not in tolerances:
            tolerances.append(t)

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        git = _GIT_RE.match(line)
        if git:
            pending_path = git.group(2)
            current_hunk = None
            i += 1
            continue
        if _META_RE.match(line):
            i += 1
            continue
        if _is_file_header(lines, i):
            old_path = _strip_prefix(line[4:])
            new_path = None
            j = i + 1
            while j < n and not lines[j].startswith("+++ "):
                j += 1
            if j < n:
                new_path = _strip_prefix(lines[j][4:])
                i = j + 1
            else:
                i += 1
            path = new_path if new_path and new_path != "/dev/null" else old_path
            if pending_path and path == "/dev/null":
                path = pending_path
            current_file = FilePatch(path=path)
            diff.file_patches.append(current_file)
            current_hunk = None
            pending_path = None
            continue
        m = _HUNK_RE.match(line)
        if m:
            if current_file is None:
                if pending_path is None:
                    raise UnparseableDiff("hunk found before any file header names a target path")
                current_file = FilePatch(path=pending_path)
                diff.file_patches.append(current_file)
                pending_path = None
                note("path-from-git-header")
            if m.group(5) is None:
                note("unterminated-hunk-header")
            old_start = int(m.group(1))
            old_count = int(m.group(2)) if m.group(2) is not None else 1
            new_start = int(m.group(3))
            new_count = int(m.group(4)) if m.group(4) is not None else 1
            current_hunk = Hunk(old_start, old_count, new_start, new_count)
            current_file.hunks.append(current_hunk)
            i += 1
            continue
        if current_hunk is not None:
            if line.startswith(" "):
                current_hunk.lines.append((CONTEXT, line[1:]))
            elif line.startswith("+"):
                current_hunk.lines.append((ADD, line[1:]))
            elif line.startswith("-"):
                current_hunk.lines.append((DELETE, line[1:]))
            elif line == "":
                current_hunk.lines.append((CONTEXT, ""))
                note("blank-line-as-context")
            elif line.startswith("\\"):
                note("no-newline-marker-ignored")
            else:
                # Prose or log noise terminates the hunk body.
                current_hunk = None
                note("noise-line-ended-hunk")
            i += 1
            continue
        i += 1

    diff.file_patches = [fp for fp in diff.file_patches if fp.hunks]
    if not diff.file_patches:
        raise UnparseableDiff("no hunk header (@@ -N,+M @@) found")
    for fp in diff.file_patches:
        fp.hunks = [h for h in fp.hunks if h.lines]
        for h in fp.hunks:
            old, new = h.counts()
            if old != h.old_count or new != h.new_count:
                note("header-count-mismatch")
    diff.tolerances = tolerances
    return diff


def reconstruct_target(hunk: Hunk) -> List[str]:
    """Context and delete line texts in original order (add lines dropped)."""
    target = [text for tag, text in hunk.lines if tag in (CONTEXT, DELETE)]
    if not target:
        raise EmptyTarget("hunk contains only insertions")
    return target


def _ws_normal(s: str) -> str:
    return " ".join(s.split())


def _levenshtein(a: str, b: str) -> int:
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    if lb > la:
        a, b, la, lb = b, a, lb, la
    prev = list(range(lb + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        left = i
        for j, cb in enumerate(b, 1):
            cost = prev[j - 1] if ca == cb else prev[j - 1] + 1
            d = prev[j] + 1
            if d < cost:
                cost = d
            d = left + 1
            if d < cost:
                cost = d
            append(cost)
            left = cost
        prev = cur
    return prev[lb]


@functools.lru_cache(maxsize=65536)
def line_cost(a: str, b: str) -> float:
    """0.0 on whitespace-normalized equality, else normalized edit distance."""
    if _ws_normal(a) == _ws_normal(b):
        return 0.0
    return _levenshtein(a, b) / max(len(a), len(b))


def locate_hunk(
    target: Sequence[str],
    file_lines: Sequence[str],
    declared_start: int,
    *,
    tau: float = DEFAULT_TAU,
    min_position: int = 1,
) -> Tuple[int, float]:
    """Slide the target across the file; return (1-based position, total cost).

    Ties on cost prefer the position closest to declared_start, then the
    smallest position. Raises NoPlausibleLocation when the best window's
    average per-line cost exceeds tau, naming the best candidate found.
    """
    if not target:
        raise EmptyTarget("empty target snippet")
    max_position = len(file_lines) - len(target) + 1
    if max_position < min_position:
        raise NoPlausibleLocation(
            "target longer than the searchable remainder of the file",
            best_position=None,
            best_cost=None,
        )
    best_total: Optional[float] = None
    champions: List[int] = []
    for p in range(min_position, max_position + 1):
        total = 0.0
        abandoned = False
        for i, t in enumerate(target):
            total += line_cost(t, file_lines[p - 1 + i])
            if best_total is not None and total > best_total:
                abandoned = True
                break
        if abandoned:
            continue
        if best_total is None or total < best_total:
            best_total = total
            champions = [p]
        elif total == best_total:
            champions.append(p)
    assert best_total is not None and champions
    position = min(champions, key=lambda p: (abs(p - declared_start), p))
    average = best_total / len(target)
    if average > tau:
        raise NoPlausibleLocation(
            f"best window at line {position} has average per-line cost "
            f"{average:.3f} > {tau}",
            best_position=position,
            best_cost=average,
        )
    return position, best_total


def _read_lines(path: str) -> Tuple[List[str], bool]:
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        text = fh.read()
    if text.endswith("\n"):
        return text[:-1].split("\n") if text[:-1] else [], True
    return text.split("\n") if text else [], False


def _write_lines(path: str, lines: Sequence[str], final_newline: bool) -> None:
    text = "\n".join(lines)
    if final_newline and lines:
        text += "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".patch-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", errors="surrogateescape") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _correct_insertion(
    hunk: Hunk, file_lines: Sequence[str], min_position: int, shift: int
) -> Tuple[Hunk, int]:
    """Anchor a pure-insertion hunk at its declared position.

    A zero-old-count hunk inserts after old_start per diff convention;
    the position is clamped to the file and to the non-overlap floor, and
    context is synthesized from the surrounding file lines.
    """
    insert_after = hunk.old_start if hunk.old_count == 0 else hunk.old_start - 1
    insert_after = max(min(insert_after, len(file_lines)), min_position - 1, 0)
    pre = list(file_lines[max(0, insert_after - _INSERT_CONTEXT): insert_after])
    post = list(file_lines[insert_after: insert_after + _INSERT_CONTEXT])
    adds = [text for tag, text in hunk.lines if tag == ADD]
    lines = (
        [(CONTEXT, t) for t in pre]
        + [(ADD, t) for t in adds]
        + [(CONTEXT, t) for t in post]
    )
    old_count = len(pre) + len(post)
    old_start = insert_after - len(pre) + 1 if old_count else 0
    # Zero-old-count headers name the line after which insertion happens,
    # so their new_start is one past the shifted old_start.
    new_start = old_start + shift + (0 if old_count else 1)
    corrected = Hunk(
        old_start=old_start,
        old_count=old_count,
        new_start=new_start,
        new_count=old_count + len(adds),
        lines=lines,
    )
    next_floor = insert_after + len(post) + 1
    return corrected, next_floor


def correct_diff(diff: UnifiedDiff, project_root: str, *, tau: float = DEFAULT_TAU) -> UnifiedDiff:
    """Relocate every hunk and rewrite it against the real file contents.

    Hunks are processed in declared order and may only land after the
    previous hunk's corrected window, so the output is ordered and
    non-overlapping with exact headers. Any hunk that cannot be placed
    rejects the whole diff.
    """
    corrected = UnifiedDiff()
    for fp in diff.file_patches:
        path = os.path.join(project_root, fp.path)
        if os.path.commonpath([os.path.abspath(project_root)]) != os.path.commonpath(
            [os.path.abspath(project_root), os.path.abspath(path)]
        ):
            raise CorrectionFailed(0, f"path escapes the project root: {fp.path}")
        if not os.path.isfile(path):
            raise CorrectionFailed(0, f"target file does not exist: {fp.path}")
        file_lines, _ = _read_lines(path)
        new_fp = FilePatch(path=fp.path)
        min_position = 1
        shift = 0
        for idx, hunk in enumerate(fp.hunks):
            try:
                target = reconstruct_target(hunk)
            except EmptyTarget:
                new_hunk, min_position = _correct_insertion(
                    hunk, file_lines, min_position, shift
                )
                shift += new_hunk.new_count - new_hunk.old_count
                new_fp.hunks.append(new_hunk)
                continue
            try:
                position, _ = locate_hunk(
                    target, file_lines, hunk.old_start,
                    tau=tau, min_position=min_position,
                )
            except NoPlausibleLocation as exc:
                raise CorrectionFailed(idx, f"{fp.path}: {exc}") from exc
            lines: List[Tuple[str, str]] = []
            offset = 0
            for tag, text in hunk.lines:
                if tag in (CONTEXT, DELETE):
                    lines.append((tag, file_lines[position - 1 + offset]))
                    offset += 1
                else:
                    lines.append((tag, text))
            new_hunk = Hunk(old_start=position, old_count=0, new_start=0, new_count=0, lines=lines)
            new_hunk.old_count, new_hunk.new_count = new_hunk.counts()
            new_hunk.new_start = position + shift
            shift += new_hunk.new_count - new_hunk.old_count
            min_position = position + new_hunk.old_count
            new_fp.hunks.append(new_hunk)
        corrected.file_patches.append(new_fp)
    return corrected


def apply_patch(project_root: str, diff: UnifiedDiff) -> PatchedProject:
    """Strictly apply a corrected diff; every old line must match exactly."""
    staged: List[Tuple[str, List[str], bool]] = []
    for fp in diff.file_patches:
        path = os.path.join(project_root, fp.path)
        file_lines, final_newline = _read_lines(path)
        result: List[str] = []
        cursor = 0  # 0-based index of the next unconsumed original line
        for hunk in fp.hunks:
            start = hunk.old_start if hunk.old_count else hunk.old_start + 1
            if start - 1 < cursor or start - 1 > len(file_lines):
                raise ApplyConflict(f"{fp.path}: hunk at {hunk.old_start} out of order")
            result.extend(file_lines[cursor: start - 1])
            cursor = start - 1
            for tag, text in hunk.lines:
                if tag == ADD:
                    result.append(text)
                    continue
                if cursor >= len(file_lines) or file_lines[cursor] != text:
                    found = file_lines[cursor] if cursor < len(file_lines) else "<eof>"
                    raise ApplyConflict(
                        f"{fp.path}:{cursor + 1}: expected {text!r}, found {found!r}"
                    )
                if tag == CONTEXT:
                    result.append(text)
                cursor += 1
        result.extend(file_lines[cursor:])
        keep_newline = final_newline or (bool(result) and not file_lines)
        staged.append((path, result, keep_newline))
    touched = []
    for path, result, final_newline in staged:
        _write_lines(path, result, final_newline)
        touched.append(path)
    return PatchedProject(root=project_root, touched_files=touched)


def reverse_diff(diff: UnifiedDiff) -> UnifiedDiff:
    """Swap add/delete roles so applying the result undoes the original."""
    reversed_diff = UnifiedDiff()
    for fp in diff.file_patches:
        new_fp = FilePatch(path=fp.path)
        for hunk in fp.hunks:
            lines = [
                (DELETE if tag == ADD else ADD if tag == DELETE else CONTEXT, text)
                for tag, text in hunk.lines
            ]
            new_fp.hunks.append(
                Hunk(
                    old_start=hunk.new_start,
                    old_count=hunk.new_count,
                    new_start=hunk.old_start,
                    new_count=hunk.old_count,
                    lines=lines,
                )
            )
        reversed_diff.file_patches.append(new_fp)
    return reversed_diff


def render(diff: UnifiedDiff) -> str:
    """Serialize back to standard unified-diff text (git-style headers)."""
    out: List[str] = []
    for fp in diff.file_patches:
        out.append(f"--- a/{fp.path}")
        out.append(f"+++ b/{fp.path}")
        for hunk in fp.hunks:
            old = str(hunk.old_start) + ("" if hunk.old_count == 1 else f",{hunk.old_count}")
            new = str(hunk.new_start) + ("" if hunk.new_count == 1 else f",{hunk.new_count}")
            out.append(f"@@ -{old} +{new} @@")
            for tag, text in hunk.lines:
                prefix = {CONTEXT: " ", DELETE: "-", ADD: "+"}[tag]
                out.append(prefix + text)
    return "\n".join(out) + "\n"
