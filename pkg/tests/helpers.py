"""Shared test utilities: independent oracles and randomized generators.

The oracles here deliberately re-derive results with the most literal
textbook implementations available (full-matrix edit distance, exhaustive
window scans, no pruning or caching) so the production code is checked
against something that cannot share its bugs.
"""

import difflib
import random
import re
from typing import List, Optional, Sequence, Tuple

# --- independent edit-distance / window-cost oracle ---


def oracle_levenshtein(a: str, b: str) -> int:
    rows = len(a) + 1
    cols = len(b) + 1
    m = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        m[i][0] = i
    for j in range(cols):
        m[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            sub = m[i - 1][j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            m[i][j] = min(m[i - 1][j] + 1, m[i][j - 1] + 1, sub)
    return m[rows - 1][cols - 1]


def oracle_line_cost(a: str, b: str) -> float:
    if " ".join(a.split()) == " ".join(b.split()):
        return 0.0
    return oracle_levenshtein(a, b) / max(len(a), len(b))


def oracle_locate(
    target: Sequence[str],
    file_lines: Sequence[str],
    declared_start: int,
    tau: float = 0.35,
    min_position: int = 1,
) -> Tuple[str, Optional[int], Optional[float]]:
    """Exhaustive all-window scan. Returns (verdict, position, total_or_avg).

    verdict "ok" carries (position, total cost); verdict "reject" carries the
    best candidate and its average per-line cost; verdict "nospace" means the
    target cannot fit at any allowed position.
    """
    max_position = len(file_lines) - len(target) + 1
    if max_position < min_position:
        return ("nospace", None, None)
    totals = {}
    for p in range(min_position, max_position + 1):
        total = 0.0
        for i in range(len(target)):
            total += oracle_line_cost(target[i], file_lines[p - 1 + i])
        totals[p] = total
    best = min(totals.values())
    champions = [p for p, t in totals.items() if t == best]
    champions.sort(key=lambda p: (abs(p - declared_start), p))
    position = champions[0]
    average = best / len(target)
    if average > tau:
        return ("reject", position, average)
    return ("ok", position, best)


# --- randomized instance generators ---

_WORDS = [
    "buf", "len", "ptr", "idx", "node", "next", "head", "size", "tmp",
    "count", "data", "out", "in", "ret", "err", "ctx", "val", "key",
]


def gen_line(rng: random.Random, salt: int = -1) -> str:
    kind = rng.random()
    if kind < 0.08:
        return ""
    if kind < 0.16:
        return rng.choice(["}", "{", "    }", "  break;", "  return ret;"])
    indent = " " * rng.choice([0, 2, 4, 8])
    words = [rng.choice(_WORDS) for _ in range(rng.randint(1, 4))]
    stmt = indent + " ".join(words) + rng.choice([";", " = 0;", "++;", "(x);"])
    if salt >= 0 and rng.random() < 0.7:
        stmt += f"  /* L{salt} */"
    return stmt


def gen_locate_instance(rng: random.Random):
    """(file_lines, target, declared_start) honoring the 200/20 size caps."""
    if rng.random() < 0.2:
        file_len = rng.randint(8, 200)
    else:
        file_len = rng.randint(8, 60)
    file_lines = [gen_line(rng) for _ in range(file_len)]
    target_len = rng.randint(1, min(20, file_len))
    start = rng.randint(1, file_len - target_len + 1)
    target = list(file_lines[start - 1: start - 1 + target_len])
    mode = rng.choice(["exact", "ws", "perturb", "garbage"])
    if mode == "ws":
        target = [t.replace("  ", " ") + "   " if t else t for t in target]
    elif mode == "perturb":
        for i in range(len(target)):
            if rng.random() < 0.4 and target[i]:
                chars = list(target[i])
                pos = rng.randrange(len(chars))
                chars[pos] = rng.choice("abcxyz_")
                target[i] = "".join(chars)
    elif mode == "garbage":
        target = [gen_line(rng) for _ in target]
    declared = start + rng.randint(-25, 25)
    return file_lines, target, declared


def gen_groundtruth_case(rng: random.Random):
    """Synthesize (orig_lines, new_lines, unified-diff text) with >=1 hunk.

    Edits stay away from file edges so every hunk keeps real context lines,
    and line bodies are salted with their index so windows are unambiguous.
    """
    n = rng.randint(40, 160)
    orig = [gen_line(rng, salt=i) for i in range(n)]
    new = list(orig)
    clusters = rng.randint(1, 3)
    # Pick cluster anchors far enough apart that hunks never merge ambiguity.
    anchors = sorted(rng.sample(range(6, n - 10), clusters))
    offset = 0
    for anchor in anchors:
        pos = anchor + offset
        op = rng.choice(["replace", "delete", "insert"])
        if op == "replace":
            k = rng.randint(1, 3)
            repl = [f"    fixed_stmt_{anchor}_{j}(x);" for j in range(rng.randint(1, 4))]
            new[pos: pos + k] = repl
            offset += len(repl) - k
        elif op == "delete":
            k = rng.randint(1, 3)
            del new[pos: pos + k]
            offset -= k
        else:
            ins = [f"    guard_check_{anchor}_{j}(p);" for j in range(rng.randint(1, 3))]
            new[pos:pos] = ins
            offset += len(ins)
    diff_lines = list(
        difflib.unified_diff(orig, new, fromfile="a/mod.c", tofile="b/mod.c", lineterm="")
    )
    return orig, new, "\n".join(diff_lines) + "\n"


_HDR_RE = re.compile(r"^@@ -(\d+)(,\d+)? \+(\d+)(,\d+)? @@")


def perturb_diff_starts(diff_text: str, rng: random.Random, max_delta: int = 25) -> str:
    """Shift every hunk header's line numbers by a random nonzero amount."""
    out = []
    for line in diff_text.split("\n"):
        m = _HDR_RE.match(line)
        if m:
            delta = rng.choice([-1, 1]) * rng.randint(1, max_delta)
            # keep the skewed numbers valid: line numbers start at 1
            old_start = max(1, int(m.group(1)) + delta)
            new_start = max(1, int(m.group(3)) + delta)
            oc = m.group(2) or ""
            nc = m.group(4) or ""
            line = f"@@ -{old_start}{oc} +{new_start}{nc} @@"
        out.append(line)
    return "\n".join(out)


def mutate_context_whitespace(diff_text: str, rng: random.Random) -> str:
    """Rewrite whitespace inside context/delete lines, tokens intact."""
    out = []
    for line in diff_text.split("\n"):
        if line.startswith((" ", "-")) and not line.startswith(("---", "+++")):
            tag, body = line[0], line[1:]
            if body.strip() and rng.random() < 0.8:
                choice = rng.random()
                if choice < 0.34:
                    body = "  " + body
                elif choice < 0.67:
                    body = body + "   "
                else:
                    body = body.replace(" ", "  ", 1)
            line = tag + body
        out.append(line)
    return "\n".join(out)
