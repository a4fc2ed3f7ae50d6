"""Fixture discovery, staging, and invariant checking.

Each fixture directory under data/ holds one small C program with a planted
memory-safety defect:

    sources/            program text (single file, well under 300 lines)
    poc/crash.txt       input that deterministically triggers the defect
    build.sh            sanitizer-instrumented build (lowest optimization)
    test.sh             functional checks on benign inputs, exit 0 on pass
    ground_truth/       fix.diff (reference patch) + meta.json (class, frames)
    transcript.jsonl    scripted assistant messages that repair the fixture

fixture_check verifies the three corpus invariants per fixture:

    1. the unpatched build plus the PoC reproduces exactly the declared
       vulnerability class under the sanitizer;
    2. the ground-truth patch brings closed-loop validation to Pass;
    3. the functional tests pass on both the unpatched build (benign
       inputs only) and the patched build.

Fixtures are never built in place: stage() copies the buildable pieces into
a scratch directory first, so the packaged data stays pristine.
"""

import dataclasses
import json
import os
import shutil
import subprocess
import tempfile
from typing import List, Optional, Tuple

from sanrepair.agent import POC_MODES, RepairTask
from sanrepair.errors import NoErrorHeader, SanRepairError
from sanrepair.patch import apply_patch, correct_diff, parse_diff
from sanrepair.report import VulnClass, parse_report, trapping_frame
from sanrepair.validate import PASS, hermetic_env, run_poc, validate

DATA_ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")

BUILD_TIMEOUT = 300.0
POC_TIMEOUT = 60.0
TESTS_TIMEOUT = 300.0

# Pieces copied into a staging directory; ground truth stays behind so the
# repair loop under test can never peek at the answer.
_STAGED_PIECES = ("sources", "poc", "build.sh", "test.sh")


class ToolchainMissing(RuntimeError):
    """The compiler a fixture needs is not on PATH."""


class FixtureError(RuntimeError):
    """A fixture violates its own packaging contract (bad build, silent PoC)."""


@dataclasses.dataclass(frozen=True)
class SourceLocation:
    file: str
    function: str
    line: Optional[int] = None

    def __str__(self) -> str:
        if self.line is None:
            return f"{self.function} {self.file}"
        return f"{self.function} {self.file}:{self.line}"


@dataclasses.dataclass(frozen=True)
class Fixture:
    name: str
    root: str
    vuln_class: VulnClass
    poc_mode: str
    build_command: str
    test_command: str
    target_binary: str
    compiler: str
    known_hard: bool
    trapping: Optional[SourceLocation]
    root_cause: SourceLocation
    notes: str

    @property
    def sources_dir(self) -> str:
        return os.path.join(self.root, "sources")

    @property
    def poc_path(self) -> str:
        return os.path.join(self.root, "poc", "crash.txt")

    @property
    def diff_path(self) -> str:
        return os.path.join(self.root, "ground_truth", "fix.diff")

    @property
    def meta_path(self) -> str:
        return os.path.join(self.root, "ground_truth", "meta.json")

    @property
    def transcript_path(self) -> str:
        return os.path.join(self.root, "transcript.jsonl")

    @property
    def reverse_transcript_path(self) -> str:
        """Variant transcript that leans on reverse execution (where present)."""
        return os.path.join(self.root, "transcript_rr.jsonl")

    def ground_truth_diff(self) -> str:
        with open(self.diff_path, encoding="utf-8") as fh:
            return fh.read()


@dataclasses.dataclass(frozen=True)
class InvariantResult:
    name: str
    passed: bool
    detail: str


@dataclasses.dataclass(frozen=True)
class FixtureReport:
    fixture: str
    results: Tuple[InvariantResult, ...]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def summary(self) -> str:
        lines = [f"{self.fixture}:"]
        for result in self.results:
            mark = "ok" if result.passed else "FAIL"
            lines.append(f"  {mark} {result.name}: {result.detail}")
        return "\n".join(lines)


def discover(data_root: str = DATA_ROOT) -> List[str]:
    """Names of all packaged fixtures, sorted for stable iteration."""
    names = []
    for entry in sorted(os.listdir(data_root)):
        if os.path.isfile(os.path.join(data_root, entry, "ground_truth", "meta.json")):
            names.append(entry)
    return names


def load(name: str, data_root: str = DATA_ROOT) -> Fixture:
    root = os.path.join(data_root, name)
    meta_path = os.path.join(root, "ground_truth", "meta.json")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise FixtureError(f"no such fixture {name!r}: {exc}") from exc
    except ValueError as exc:
        raise FixtureError(f"fixture {name!r} has invalid metadata: {exc}") from exc

    def location(doc) -> Optional[SourceLocation]:
        if doc is None:
            return None
        return SourceLocation(
            file=doc["file"], function=doc["function"], line=doc.get("line")
        )

    mode = meta["poc_mode"]
    if mode not in POC_MODES:
        raise FixtureError(f"fixture {name!r} declares unknown poc mode {mode!r}")
    root_cause = location(meta["root_cause"])
    if root_cause is None:
        raise FixtureError(f"fixture {name!r} lacks a root_cause location")
    return Fixture(
        name=meta["name"],
        root=root,
        vuln_class=VulnClass(meta["vuln_class"]),
        poc_mode=mode,
        build_command=meta["build_command"],
        test_command=meta["test_command"],
        target_binary=meta["target_binary"],
        compiler=meta["compiler"],
        known_hard=bool(meta.get("known_hard", False)),
        trapping=location(meta.get("trapping")),
        root_cause=root_cause,
        notes=meta.get("notes", ""),
    )


def require_toolchain(fixture: Fixture) -> None:
    if shutil.which(fixture.compiler) is None:
        raise ToolchainMissing(
            f"fixture {fixture.name!r} needs {fixture.compiler!r} on PATH"
        )


def stage(fixture: Fixture, dest: str) -> str:
    """Copy the buildable pieces (not the ground truth) into dest."""
    os.makedirs(dest, exist_ok=True)
    for piece in _STAGED_PIECES:
        src = os.path.join(fixture.root, piece)
        target = os.path.join(dest, piece)
        if os.path.isdir(src):
            shutil.copytree(src, target, dirs_exist_ok=True)
        else:
            shutil.copy(src, target)
    return dest


def task_for(fixture: Fixture, project_root: str, report_path: str = "") -> RepairTask:
    """A repair task describing a staged copy of the fixture."""
    return RepairTask(
        project_root=project_root,
        build_command=fixture.build_command,
        test_command=fixture.test_command,
        poc_path=os.path.join(project_root, "poc", "crash.txt"),
        poc_mode=fixture.poc_mode,
        report_path=report_path,
        target_binary=os.path.join(project_root, fixture.target_binary),
    )


def build(fixture: Fixture, project_root: str, timeout: float = BUILD_TIMEOUT) -> None:
    proc = subprocess.run(
        fixture.build_command,
        shell=True,
        cwd=project_root,
        env=hermetic_env(),
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        timeout=timeout,
    )
    if proc.returncode != 0:
        tail = proc.stdout.decode("utf-8", errors="replace")[-500:]
        raise FixtureError(f"build failed for {fixture.name}: {tail}")
    binary = os.path.join(project_root, fixture.target_binary)
    if not os.path.isfile(binary):
        raise FixtureError(f"build produced no {fixture.target_binary} for {fixture.name}")


def _poc_output(fixture: Fixture, project_root: str) -> Tuple[int, str]:
    task = task_for(fixture, project_root)
    proc = run_poc(task, project_root, timeout=POC_TIMEOUT)
    merged = proc.stdout.decode("utf-8", errors="replace") + proc.stderr.decode(
        "utf-8", errors="replace"
    )
    return proc.returncode, merged


def materialize(fixture: Fixture, dest: str) -> str:
    """Build the fixture and capture its crash, producing a task manifest.

    Lays out dest/project (staged buildable tree), dest/report.txt (the
    observed sanitizer report), and dest/manifest.json. Returns the manifest
    path, ready for the repair loop.
    """
    require_toolchain(fixture)
    os.makedirs(dest, exist_ok=True)
    project = os.path.join(dest, "project")
    stage(fixture, project)
    build(fixture, project)
    _, output = _poc_output(fixture, project)
    try:
        parse_report(output, project_root=project)
    except NoErrorHeader as exc:
        raise FixtureError(
            f"poc for {fixture.name} produced no sanitizer report: {output[-300:]}"
        ) from exc
    report_path = os.path.join(dest, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(output)
    manifest = {
        "project_root": "project",
        "build_command": fixture.build_command,
        "test_command": fixture.test_command,
        "poc": {"path": os.path.join("project", "poc", "crash.txt"), "mode": fixture.poc_mode},
        "report_path": "report.txt",
        "target_binary": fixture.target_binary,
    }
    manifest_path = os.path.join(dest, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path


def _run_tests(fixture: Fixture, project_root: str) -> Tuple[bool, str]:
    binary = os.path.join(project_root, fixture.target_binary)
    if not os.path.isfile(binary):
        return False, "no binary to test"
    proc = subprocess.run(
        fixture.test_command,
        shell=True,
        cwd=project_root,
        env=hermetic_env(),
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        timeout=TESTS_TIMEOUT,
    )
    if proc.returncode != 0:
        tail = proc.stdout.decode("utf-8", errors="replace")[-300:]
        return False, f"exit {proc.returncode}: {tail}"
    return True, "exit 0"


def _check_reproduction(fixture: Fixture, unpatched: str) -> Tuple[InvariantResult, str]:
    """Invariant 1. Returns the result plus the captured report text."""
    try:
        stage(fixture, unpatched)
        build(fixture, unpatched)
        returncode, output = _poc_output(fixture, unpatched)
    except (FixtureError, subprocess.TimeoutExpired) as exc:
        return InvariantResult("reproduces-declared-class", False, str(exc)), ""
    try:
        report = parse_report(output, project_root=unpatched)
    except NoErrorHeader:
        detail = f"poc exited {returncode} without a sanitizer report"
        return InvariantResult("reproduces-declared-class", False, detail), output
    passed = report.vuln_class == fixture.vuln_class
    detail = f"observed {report.vuln_class.value}"
    if passed and fixture.trapping is not None:
        frame = trapping_frame(report, project_root=unpatched)
        file_matches = frame.file is not None and frame.file.endswith(fixture.trapping.file)
        if (
            frame.function != fixture.trapping.function
            or not file_matches
            or frame.line != fixture.trapping.line
        ):
            passed = False
            detail += f"; trapping frame {frame.location()} != declared {fixture.trapping}"
        else:
            detail += f" at {frame.location()}"
    return InvariantResult("reproduces-declared-class", passed, detail), output


def _check_ground_truth(fixture: Fixture, patched: str, report_path: str) -> InvariantResult:
    """Invariant 2: the reference patch must bring validation to Pass."""
    try:
        stage(fixture, patched)
        corrected = correct_diff(parse_diff(fixture.ground_truth_diff()), patched)
        apply_patch(patched, corrected)
    except (OSError, SanRepairError) as exc:
        return InvariantResult(
            "ground-truth-patch-validates", False, f"patch not applicable: {exc}"
        )
    task = task_for(fixture, patched, report_path)
    result = validate(
        task,
        original_class=fixture.vuln_class,
        build_timeout=BUILD_TIMEOUT,
        poc_timeout=POC_TIMEOUT,
        tests_timeout=TESTS_TIMEOUT,
    )
    if result.status == PASS:
        return InvariantResult("ground-truth-patch-validates", True, PASS)
    return InvariantResult(
        "ground-truth-patch-validates",
        False,
        f"{result.status}: {result.feedback[:300]}",
    )


def fixture_check(fixture: Fixture, workdir: Optional[str] = None) -> FixtureReport:
    """Verify the three corpus invariants; report pass/fail per invariant."""
    require_toolchain(fixture)
    if workdir is None:
        workdir = tempfile.mkdtemp(prefix=f"fixture-{fixture.name}-")
    unpatched = os.path.join(workdir, "unpatched")
    patched = os.path.join(workdir, "patched")

    reproduction, report_text = _check_reproduction(fixture, unpatched)
    report_path = os.path.join(workdir, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report_text)

    ground_truth = _check_ground_truth(fixture, patched, report_path)

    details = []
    tests_pass = True
    for label, root in (("unpatched", unpatched), ("patched", patched)):
        ok, detail = _run_tests(fixture, root)
        tests_pass = tests_pass and ok
        details.append(f"{label}: {detail}")
    functional = InvariantResult("functional-tests-pass", tests_pass, "; ".join(details))

    return FixtureReport(fixture.name, (reproduction, ground_truth, functional))
