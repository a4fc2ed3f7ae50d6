"""Regenerate the per-fixture scripted repair transcripts.

Each transcript is a line-delimited JSON file of assistant messages that
drives the repair loop through its happy path: state a hypothesis, gather
debugger evidence at the trap, then propose the ground-truth patch. The
use-after-free fixture gets a second transcript that walks backwards to the
freeing site with reverse execution.

Run from anywhere; writes transcript.jsonl (and transcript_rr.jsonl where
applicable) into the fixture data directories.
"""

import json

from sanrepair.context import ActionEnvelope, render_action

import crashcorpus


def message(prose: str, kind: str, **payload) -> str:
    return prose + "\n\n" + render_action(ActionEnvelope(kind=kind, payload=payload))


def standard_messages(fixture) -> list:
    diff = fixture.ground_truth_diff()
    cause = fixture.root_cause
    return [
        message(
            "The report classifies this as a "
            f"{fixture.vuln_class.value}. Working hypothesis: the defect "
            f"lives in {cause.function} ({cause.file}). {fixture.notes}",
            "hypothesis",
            text=f"{fixture.vuln_class.value} caused by {cause.function} in {cause.file}",
        ),
        message(
            "Confirming the trapping stack before proposing a fix.",
            "debug",
            commands=["backtrace"],
        ),
        message(
            "The backtrace matches the hypothesis; applying the fix.",
            "patch",
            root_cause=f"{cause.function} in {cause.file}: {fixture.notes}",
            diff=diff,
        ),
    ]


def reverse_messages(fixture) -> list:
    diff = fixture.ground_truth_diff()
    cause = fixture.root_cause
    return [
        message(
            "A use-after-free trap shows the bad access but not the free. "
            "Hypothesis: an earlier teardown path released this memory.",
            "hypothesis",
            text="use-after-free: locate the freeing site by running backwards",
        ),
        message(
            "Replay the recording backwards from the trap to the most "
            "recent free call and capture its stack.",
            "debug",
            commands=["break free", "reverse-continue", "backtrace"],
        ),
        message(
            f"The freeing stack lands in {cause.function}; it releases the "
            "array without clearing the pointer or capacity.",
            "patch",
            root_cause=f"{cause.function} in {cause.file}: {fixture.notes}",
            diff=diff,
        ),
    ]


def write_transcript(path: str, messages: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for content in messages:
            fh.write(json.dumps({"role": "assistant", "content": content}) + "\n")
    print("wrote", path)


def main() -> None:
    for name in crashcorpus.discover():
        fixture = crashcorpus.load(name)
        if fixture.known_hard:
            continue  # excluded from the scripted end-to-end gate
        write_transcript(fixture.transcript_path, standard_messages(fixture))
        if fixture.vuln_class.value == "use-after-free":
            write_transcript(fixture.reverse_transcript_path, reverse_messages(fixture))


if __name__ == "__main__":
    main()
