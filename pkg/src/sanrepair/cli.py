"""Command-line entry point.

Subcommands:
  run <manifest>...   repair one or more tasks end to end (--jobs for batch)
  classify <report>   print the vulnerability class and trapping frame
  fix-diff <diff>     correct a structurally flawed diff against a project
  reproduce <manifest>  preflight only: does the PoC still trap?

Exit codes: 0 success/Resolved, 1 non-resolved outcome or correction
failure, 2 manifest/config errors.
"""

import argparse
import json
import os
import subprocess
import sys

from . import patch
from .agent import IRREPRODUCIBLE, RESOLVED, RepairTask, run_repair
from .config import load_config, runtime_for_task
from .debugger import init_session, run_to_trap
from .errors import (
    CorrectionFailed,
    EmptyTarget,
    LaunchFailure,
    ManifestError,
    NoErrorHeader,
    NoPlausibleLocation,
    RecordFailure,
    SanRepairError,
    UnparseableDiff,
)
from .report import parse_report, trapping_frame

OUTCOME_SCHEMA_VERSION = 1


def _fail(message: str, code: int) -> int:
    print(f"sanrepair: error: {message}", file=sys.stderr)
    return code


def write_outcome(outcome, out_dir: str) -> str:
    # Paths are stored relative to the outcome file so two runs of the same
    # task produce byte-identical documents regardless of output directory.
    doc = {
        "schema_version": OUTCOME_SCHEMA_VERSION,
        "status": outcome.status,
        "iterations": outcome.iterations,
        "cost_usd": str(outcome.cost_usd),
        "transcript_path": (
            os.path.relpath(outcome.transcript_path, out_dir)
            if outcome.transcript_path else None
        ),
        "final_patch_path": "fix.diff" if outcome.status == RESOLVED else None,
    }
    path = os.path.join(out_dir, "outcome.json")
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _run_one(manifest: str, args) -> int:
    try:
        cfg = load_config(args.config)
        if args.transcript:
            cfg.backend_kind = "scripted"
            cfg.transcript_path = args.transcript
        task = RepairTask.from_manifest(manifest)
        out_dir = args.output_dir or cfg.output_dir
        if out_dir is None:
            out_dir = os.path.join(os.path.dirname(os.path.abspath(manifest)), "out")
        runtime = runtime_for_task(cfg, output_dir=out_dir)
    except ManifestError as exc:
        return _fail(str(exc), 2)
    outcome = run_repair(task, runtime)
    outcome_path = write_outcome(outcome, out_dir)
    print(f"{outcome.status} iterations={outcome.iterations} "
          f"cost=${outcome.cost_usd} outcome={outcome_path}")
    return 0 if outcome.status == RESOLVED else 1


def cmd_run(args) -> int:
    manifests = args.manifest
    if len(manifests) == 1 and args.jobs <= 1:
        return _run_one(manifests[0], args)

    # Batch mode: one child process per manifest, at most --jobs at a time.
    pending = list(enumerate(manifests))
    running = []
    codes = {}

    def spawn(index, manifest):
        argv = [sys.executable, "-m", "sanrepair", "run", manifest]
        if args.config:
            argv += ["--config", args.config]
        if args.transcript:
            argv += ["--transcript", args.transcript]
        if args.output_dir:
            name = os.path.splitext(os.path.basename(manifest))[0]
            argv += ["--output-dir", os.path.join(args.output_dir, f"{index:02d}-{name}")]
        return manifest, subprocess.Popen(argv)

    while pending or running:
        while pending and len(running) < max(args.jobs, 1):
            running.append(spawn(*pending.pop(0)))
        manifest, proc = running.pop(0)
        codes[manifest] = proc.wait()
    failures = {m: c for m, c in codes.items() if c != 0}
    for manifest, code in sorted(failures.items()):
        print(f"sanrepair: {manifest}: exit {code}", file=sys.stderr)
    if any(code == 2 for code in failures.values()):
        return 2
    return 1 if failures else 0


def cmd_classify(args) -> int:
    try:
        with open(args.report, encoding="utf-8", errors="replace") as fh:
            report = parse_report(fh.read(), project_root=args.project)
    except OSError as exc:
        return _fail(str(exc), 2)
    except (NoErrorHeader, SanRepairError) as exc:
        return _fail(f"unparseable report: {exc}", 2)
    print(f"class: {report.vuln_class.value}")
    print(f"tool: {report.tool}")
    try:
        frame = trapping_frame(report, project_root=args.project)
        print(f"trapping frame: {frame.location()}")
    except SanRepairError:
        print("trapping frame: <none>")
    if report.fault_address:
        print(f"fault address: {report.fault_address}")
    return 0


def cmd_fixdiff(args) -> int:
    try:
        with open(args.diff, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        return _fail(str(exc), 2)
    try:
        corrected = patch.correct_diff(patch.parse_diff(raw), args.project, tau=args.tau)
    except UnparseableDiff as exc:
        return _fail(f"unparseable diff: {exc}", 2)
    except (CorrectionFailed, NoPlausibleLocation, EmptyTarget) as exc:
        return _fail(f"correction failed: {exc}", 1)
    sys.stdout.write(patch.render(corrected))
    return 0


def cmd_reproduce(args) -> int:
    try:
        cfg = load_config(args.config)
        task = RepairTask.from_manifest(args.manifest)
    except ManifestError as exc:
        return _fail(str(exc), 2)
    try:
        session = init_session(
            task, backend=cfg.debugger_backend,
            passthrough=frozenset(cfg.passthrough),
            output_cap=cfg.debugger_output_cap,
            fake_script=cfg.fake_script,
            recording_root=cfg.recording_root,
        )
    except (LaunchFailure, RecordFailure) as exc:
        return _fail(str(exc), 2)
    try:
        out = run_to_trap(session, timeout=cfg.run_timeout)
    finally:
        session.close()
    print(f"stop reason: {out.stop_reason}")
    reproduced = out.stop_reason in ("sanitizer_trap", "signal")
    print("reproduced" if reproduced else "did not reproduce")
    return 0 if reproduced else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sanrepair",
        description="autonomous repair harness for sanitizer-reported crashes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="repair tasks end to end")
    p_run.add_argument("manifest", nargs="+", help="task manifest JSON path(s)")
    p_run.add_argument("--config", help="config JSON path")
    p_run.add_argument("--transcript", help="scripted backend transcript (JSONL)")
    p_run.add_argument("--output-dir", help="where outcomes and patches land")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="max concurrent child processes in batch mode")
    p_run.set_defaults(func=cmd_run)

    p_cls = sub.add_parser("classify", help="classify a sanitizer report")
    p_cls.add_argument("report", help="sanitizer report text file")
    p_cls.add_argument("--project", help="project root for frame ownership")
    p_cls.set_defaults(func=cmd_classify)

    p_fix = sub.add_parser("fix-diff", help="correct a flawed unified diff")
    p_fix.add_argument("diff", help="diff file to correct")
    p_fix.add_argument("--project", required=True, help="project root")
    p_fix.add_argument("--tau", type=float, default=patch.DEFAULT_TAU,
                       help="max mean per-line correction cost")
    p_fix.set_defaults(func=cmd_fixdiff)

    p_rep = sub.add_parser("reproduce", help="preflight: run the PoC to the trap")
    p_rep.add_argument("manifest", help="task manifest JSON path")
    p_rep.add_argument("--config", help="config JSON path")
    p_rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
